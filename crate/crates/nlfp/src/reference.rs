//! Closed-form and semi-analytic reference solutions, plus the error metrics
//! used by the grid-refinement studies.
//!
//! The modified Bessel functions are computed in-repo from the integral
//! representation `I_n(a) = (1/pi) int_0^pi exp(a cos t) cos(n t) dt`; the
//! even periodic extension of the integrand makes the trapezoidal rule
//! converge geometrically, so a fixed panel count reaches machine accuracy
//! for the arguments used here.

use crate::error::{Error, Result};
use crate::grid::{sub_norm, Field, GridSpec, NormP};
use crate::spline::upsample;

const BESSEL_PANELS: usize = 1024;

/// `I_n(a)` for n in {0, 1}, accurate to relative 1e-13 for `a <= 50`.
pub fn bessel_i(n: u32, a: f64) -> Result<f64> {
    if n > 1 {
        return Err(Error::Invalid(format!("bessel_i supports n in {{0,1}}, got {n}")));
    }
    let a = if n == 0 { a.abs() } else { a };
    if a.abs() > 700.0 {
        return Err(Error::Invalid(format!(
            "bessel_i({n}, {a}): argument beyond overflow range"
        )));
    }
    let h = std::f64::consts::PI / BESSEL_PANELS as f64;
    let f = |t: f64| (a * t.cos()).exp() * (n as f64 * t).cos();
    let mut sum = 0.5 * (f(0.0) + f(std::f64::consts::PI));
    for j in 1..BESSEL_PANELS {
        sum += f(j as f64 * h);
    }
    Ok(sum * h / std::f64::consts::PI)
}

/// Ratio `I_1(a) / I_0(a)`, strictly increasing, bounded by 1.
pub fn bessel_ratio(a: f64) -> Result<f64> {
    Ok(bessel_i(1, a)? / bessel_i(0, a)?)
}

/// Analytic stationary state of the single-mode (Kuramoto) problem.
#[derive(Debug, Clone)]
pub struct KuramotoReference {
    pub field: Field,
    /// Amplitude `a_kappa` of the exponent; zero on the homogeneous state.
    pub amplitude: f64,
    /// False when `kappa <= kappa*` forced the homogeneous fallback.
    pub nontrivial: bool,
}

/// Nontrivial amplitude `a` solving `a = sqrt(2/pi) kappa I_1(a)/I_0(a)`,
/// found by scalar Newton from `a = 1` with a bisection fallback. Returns 0
/// when only the trivial root exists.
pub fn kuramoto_amplitude(kappa: f64) -> Result<f64> {
    let c = (2.0 / std::f64::consts::PI).sqrt() * kappa;
    let g = |a: f64| -> Result<f64> { Ok(c * bessel_ratio(a)? - a) };
    // g'(0) = c/2 - 1; no nontrivial root at or below the critical strength
    if c <= 2.0 {
        return Ok(0.0);
    }
    let mut a = 1.0f64;
    for _ in 0..100 {
        let ga = g(a)?;
        if ga.abs() <= 1e-15 {
            break;
        }
        let h = 1e-7 * a.max(1.0);
        let dg = (g(a + h)? - g(a - h)?) / (2.0 * h);
        let step = ga / dg;
        let mut next = a - step;
        if !(next.is_finite() && next > 0.0) {
            next = a / 2.0;
        }
        a = next;
    }
    if g(a)?.abs() > 1e-12 || a < 1e-8 {
        // safeguarded bisection on [tiny, c] where g changes sign
        let (mut lo, mut hi) = (1e-6, c);
        if g(lo)? <= 0.0 || g(hi)? >= 0.0 {
            return Err(Error::ScalarSolve(format!(
                "no nontrivial Kuramoto amplitude bracket at kappa = {kappa}"
            )));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        a = 0.5 * (lo + hi);
    }
    Ok(a)
}

/// Analytic reference `u(x) = exp(a cos(2kx)) / (pi I_0(a))` on `grid`.
/// Below the critical strength the homogeneous state is returned with
/// `nontrivial = false` (the trivial amplitude is always a fixed point).
pub fn kuramoto_reference(kappa: f64, k: u32, grid: &GridSpec) -> Result<KuramotoReference> {
    if grid.dim() != 1 || !grid.axis(0).is_periodic() {
        return Err(Error::InvalidGrid(
            "Kuramoto reference needs a 1D periodic grid".into(),
        ));
    }
    let a = kuramoto_amplitude(kappa)?;
    let l = grid.axis(0).length();
    if a == 0.0 {
        return Ok(KuramotoReference {
            field: Field::constant(grid, 1.0 / l),
            amplitude: 0.0,
            nontrivial: false,
        });
    }
    let i0 = bessel_i(0, a)?;
    let kf = k as f64;
    let field = Field::from_fn_1d(grid, |x| (a * (2.0 * kf * x).cos()).exp() / (l * i0));
    Ok(KuramotoReference { field, amplitude: a, nontrivial: true })
}

/// Quadrature grid for the scalar flocking integrals: fine Simpson rule on
/// a truncation wide enough that the integrand underflows at the edges.
fn cs_weights(alpha: f64, sigma: f64, x_trunc: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let grid = GridSpec::line(n, -x_trunc, x_trunc).expect("valid CS quadrature grid");
    let ax = grid.axis(0);
    let h = ax.spacing();
    let mut w = vec![0.0; n];
    w[0] = h / 3.0;
    w[n - 1] = h / 3.0;
    for (j, wj) in w.iter_mut().enumerate().take(n - 1).skip(1) {
        *wj = if j % 2 == 1 { 4.0 * h / 3.0 } else { 2.0 * h / 3.0 };
    }
    let xs: Vec<f64> = (0..n).map(|j| ax.node(j)).collect();
    let _ = (alpha, sigma);
    (xs, w)
}

/// Mean velocity of the flocking profile parametrised by `ubar`:
/// `int x exp(-[alpha x^4/4 + (1-alpha) x^2/2 - ubar x]/sigma) dx / Z`.
pub fn cs_mean_velocity(alpha: f64, sigma: f64, ubar: f64, x_trunc: f64, n: usize) -> f64 {
    let (xs, w) = cs_weights(alpha, sigma, x_trunc, n);
    let expo: Vec<f64> = xs
        .iter()
        .map(|&x| {
            -(alpha * x.powi(4) / 4.0 + (1.0 - alpha) * x * x / 2.0 - ubar * x) / sigma
        })
        .collect();
    let shift = expo.iter().fold(f64::NEG_INFINITY, |m, &e| m.max(e));
    let mut z = 0.0;
    let mut first = 0.0;
    for ((x, wi), e) in xs.iter().zip(&w).zip(&expo) {
        let v = (e - shift).exp() * wi;
        z += v;
        first += x * v;
    }
    first / z
}

/// Self-consistency residual `g(ubar) = mean_velocity(ubar) - ubar`.
pub fn cs_residual(alpha: f64, sigma: f64, ubar: f64, x_trunc: f64, n: usize) -> f64 {
    cs_mean_velocity(alpha, sigma, ubar, x_trunc, n) - ubar
}

/// Solve the scalar self-consistency equation for the mean velocity.
/// `sign_hint` selects the branch: 0 returns the trivial root, +1/-1 ask for
/// a strictly signed root (roots come in +- pairs by symmetry).
pub fn cs_reference_velocity(
    alpha: f64,
    sigma: f64,
    x_trunc: f64,
    sign_hint: i8,
    n: usize,
) -> Result<f64> {
    if sign_hint == 0 {
        return Ok(0.0);
    }
    // dense sign scan on (0, x_trunc]: g(0) = 0 and g < 0 for large ubar
    let scan = 400;
    let mut lo = None;
    let mut prev = (1e-4, cs_residual(alpha, sigma, 1e-4, x_trunc, n));
    for i in 1..=scan {
        let s = x_trunc * i as f64 / scan as f64;
        let g = cs_residual(alpha, sigma, s, x_trunc, n);
        if prev.1 > 0.0 && g <= 0.0 {
            lo = Some((prev.0, s));
            break;
        }
        prev = (s, g);
    }
    let (mut a, mut b) = lo.ok_or_else(|| {
        Error::BracketInvalid(format!(
            "no nonzero-velocity root for alpha = {alpha}, sigma = {sigma}"
        ))
    })?;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if cs_residual(alpha, sigma, mid, x_trunc, n) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
        if b - a <= 1e-14 * b.max(1.0) {
            break;
        }
    }
    let root = 0.5 * (a + b);
    Ok(if sign_hint > 0 { root } else { -root })
}

/// Upsample `u_n` to the reference grid and return the `l^p` distance
/// `R_p = || u_ref - I u_n ||_p`.
pub fn error_vs_reference(u_n: &Field, u_ref: &Field, p: NormP) -> Result<f64> {
    let up = upsample(u_n, u_ref.grid())?;
    Ok(sub_norm(up.values(), u_ref.values(), p))
}

/// `Rtilde_p = || I u_af - I u_df ||_p` on the reference grid.
pub fn error_between(u_af: &Field, u_df: &Field, ref_grid: &GridSpec, p: NormP) -> Result<f64> {
    let a = upsample(u_af, ref_grid)?;
    let b = upsample(u_df, ref_grid)?;
    Ok(sub_norm(a.values(), b.values(), p))
}
