//! The fixed-point maps `T` and their Fréchet-derivative actions for the four
//! problem variants, plus the catalogue of inverse internal-energy derivatives.
//!
//! Every map output is strictly positive with unit total mass (per-angle mass
//! `1/L` for the neural variant); exponents are shifted by their maximum
//! before exponentiation so that large interaction strengths cannot overflow,
//! and the normalisation constant absorbs the shift exactly.

use serde::{Deserialize, Serialize};

use crate::conv::{ConvPlan, Spectrum};
use crate::error::{Error, Result};
use crate::grid::{integrate, integrate_axis1, Field, GridSpec};
use crate::kernels::KernelSpec;

/// Scalar inverse of the internal-energy derivative `H'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DiffusionInverse {
    /// `H'[u] = sigma log u`, inverse `exp(s / sigma)`.
    Linear { sigma: f64 },
    /// `H'[u] = nu m u^{m-1}`, inverse `(s / (nu m))^{1/(m-1)}`.
    PorousFast { nu: f64, m: f64 },
    /// `H'[u] = log(u / (1-u))`, inverse `1 / (1 + exp(-s))`.
    FermiDirac,
    /// `H'[u] = log(u / (1+u))`, inverse `-1 / (1 - exp(-s))`.
    BoseEinstein,
}

impl DiffusionInverse {
    /// Evaluate `(H')^{-1}(s)`.
    pub fn invert_h_prime(&self, s: f64) -> Result<f64> {
        match *self {
            DiffusionInverse::Linear { sigma } => {
                if sigma <= 0.0 {
                    return Err(Error::DiffusionDomain("sigma must be positive".into()));
                }
                Ok((s / sigma).exp())
            }
            DiffusionInverse::PorousFast { nu, m } => {
                if nu <= 0.0 || m <= 0.0 || (m - 1.0).abs() < 1e-14 {
                    return Err(Error::DiffusionDomain(
                        "porous/fast diffusion needs nu > 0 and m != 1".into(),
                    ));
                }
                let arg = s / (nu * m);
                if m > 1.0 && arg <= 0.0 {
                    return Err(Error::DiffusionDomain(format!(
                        "porous medium (m = {m}) needs a positive argument, got {s}"
                    )));
                }
                Ok(arg.powf(1.0 / (m - 1.0)))
            }
            DiffusionInverse::FermiDirac => Ok(1.0 / (1.0 + (-s).exp())),
            DiffusionInverse::BoseEinstein => {
                if s >= 0.0 {
                    return Err(Error::DiffusionDomain(format!(
                        "Bose-Einstein inverse needs s < 0, got {s}"
                    )));
                }
                Ok(-1.0 / (1.0 - (-s).exp()))
            }
        }
    }
}

/// Activation functions for the neural variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    /// `F(x) = x max(0, x / sqrt(x^2 + 0.1))`, i.e. `x^2/sqrt(x^2+0.1)` for
    /// `x >= 0` and 0 otherwise. Both one-sided derivatives vanish at 0.
    SmoothedRelu,
}

impl Activation {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::SmoothedRelu => {
                if x > 0.0 {
                    x * x / (x * x + 0.1).sqrt()
                } else {
                    0.0
                }
            }
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::SmoothedRelu => {
                if x > 0.0 {
                    x * (x * x + 0.2) / (x * x + 0.1).powf(1.5)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Model variant with its parameters and grid.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    /// McKean-Vlasov on the 1D torus: `T u = exp(-kappa W*u / sigma) / Z`.
    Mv1d { kappa: f64, sigma: f64, kernel: KernelSpec, grid: GridSpec },
    /// The same map on the 2D torus.
    Mv2d { kappa: f64, sigma: f64, kernel: KernelSpec, grid: GridSpec },
    /// Flocking model on a truncated symmetric line, quadratic interaction
    /// expanded analytically through the mean velocity.
    Cs { alpha: f64, sigma: f64, grid: GridSpec },
    /// Neural model on torus x truncated activity strip.
    Nfp {
        sigma: f64,
        b: f64,
        kernel: KernelSpec,
        activation: Activation,
        grid: GridSpec,
    },
}

impl ProblemSpec {
    pub fn grid(&self) -> &GridSpec {
        match self {
            ProblemSpec::Mv1d { grid, .. }
            | ProblemSpec::Mv2d { grid, .. }
            | ProblemSpec::Cs { grid, .. }
            | ProblemSpec::Nfp { grid, .. } => grid,
        }
    }
}

/// A problem bound to its cached spectral workspace, ready to apply.
pub struct Problem {
    spec: ProblemSpec,
    /// FFT plan on the periodic axes (MV) or the angular axis (NFP).
    plan: Option<ConvPlan>,
    kernel_hat: Option<Spectrum>,
    /// 1D grid of the angular axis for NFP convolutions.
    angular_grid: Option<GridSpec>,
}

impl Problem {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        match &spec {
            ProblemSpec::Mv1d { kappa, sigma, kernel, grid } => {
                if grid.dim() != 1 || !grid.axis(0).is_periodic() {
                    return Err(Error::InvalidProblem("MV1D needs a 1D periodic grid".into()));
                }
                if *sigma <= 0.0 || *kappa < 0.0 {
                    return Err(Error::InvalidProblem("need sigma > 0 and kappa >= 0".into()));
                }
                let plan = ConvPlan::new(grid)?;
                let w = kernel.sample(grid)?;
                let kernel_hat = plan.spectrum(&w)?;
                Ok(Self { spec, plan: Some(plan), kernel_hat: Some(kernel_hat), angular_grid: None })
            }
            ProblemSpec::Mv2d { kappa, sigma, kernel, grid } => {
                if grid.dim() != 2
                    || !grid.axis(0).is_periodic()
                    || !grid.axis(1).is_periodic()
                {
                    return Err(Error::InvalidProblem("MV2D needs a 2D periodic grid".into()));
                }
                if *sigma <= 0.0 || *kappa < 0.0 {
                    return Err(Error::InvalidProblem("need sigma > 0 and kappa >= 0".into()));
                }
                let plan = ConvPlan::new(grid)?;
                let w = kernel.sample(grid)?;
                let kernel_hat = plan.spectrum(&w)?;
                Ok(Self { spec, plan: Some(plan), kernel_hat: Some(kernel_hat), angular_grid: None })
            }
            ProblemSpec::Cs { alpha, sigma, grid } => {
                if grid.dim() != 1 || grid.axis(0).is_periodic() || !grid.axis(0).is_symmetric() {
                    return Err(Error::InvalidProblem(
                        "CS needs a truncated symmetric 1D grid".into(),
                    ));
                }
                if *sigma <= 0.0 {
                    return Err(Error::InvalidProblem("need sigma > 0".into()));
                }
                // the confining potential must have decayed at the truncation
                let x = grid.axis(0).upper;
                let v = alpha * (x.powi(4) / 4.0 - x * x / 2.0);
                if (-v / sigma).exp() > 1e-16 {
                    return Err(Error::InvalidProblem(format!(
                        "truncation X = {x} too narrow: exp(-V(X)/sigma) = {:.3e} > 1e-16",
                        (-v / sigma).exp()
                    )));
                }
                Ok(Self { spec, plan: None, kernel_hat: None, angular_grid: None })
            }
            ProblemSpec::Nfp { sigma, kernel, grid, .. } => {
                if grid.dim() != 2
                    || !grid.axis(0).is_periodic()
                    || grid.axis(1).is_periodic()
                    || grid.axis(1).lower != 0.0
                {
                    return Err(Error::InvalidProblem(
                        "NFP needs torus x truncated [0, y_max] grid".into(),
                    ));
                }
                if *sigma <= 0.0 {
                    return Err(Error::InvalidProblem("need sigma > 0".into()));
                }
                let angular = GridSpec::new(vec![grid.axis(0).clone()])?;
                let plan = ConvPlan::new(&angular)?;
                let w = kernel.sample(&angular)?;
                let kernel_hat = plan.spectrum(&w)?;
                Ok(Self {
                    spec,
                    plan: Some(plan),
                    kernel_hat: Some(kernel_hat),
                    angular_grid: Some(angular),
                })
            }
        }
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn grid(&self) -> &GridSpec {
        self.spec.grid()
    }

    /// The homogeneous state `1/L` (or `1/L^2`) for the torus variants.
    pub fn homogeneous(&self) -> Option<Field> {
        match &self.spec {
            ProblemSpec::Mv1d { grid, .. } | ProblemSpec::Mv2d { grid, .. } => {
                Some(Field::constant(grid, 1.0 / grid.volume()))
            }
            _ => None,
        }
    }

    /// Interaction term `W * u` (MV variants).
    pub fn interaction(&self, u: &Field) -> Result<Field> {
        let plan = self.plan.as_ref().expect("MV problems carry a plan");
        let what = self.kernel_hat.as_ref().expect("cached kernel transform");
        plan.convolve_spectrum(what, u)
    }

    fn check_grid(&self, u: &Field) -> Result<()> {
        if u.grid() != self.grid() {
            return Err(Error::GridMismatch {
                context: "field does not live on the problem grid".into(),
            });
        }
        Ok(())
    }

    /// Apply the fixed-point map `T`.
    pub fn apply(&self, u: &Field) -> Result<Field> {
        self.check_grid(u)?;
        match &self.spec {
            ProblemSpec::Mv1d { kappa, sigma, .. } | ProblemSpec::Mv2d { kappa, sigma, .. } => {
                let conv = self.interaction(u)?;
                let expo: Vec<f64> = conv.values().iter().map(|&c| -kappa / sigma * c).collect();
                self.normalised_exp(u.grid(), expo)
            }
            ProblemSpec::Cs { alpha, sigma, grid } => {
                let xs = grid.axis(0).nodes();
                let xu = Field::new(
                    grid.clone(),
                    xs.iter().zip(u.values()).map(|(x, v)| x * v).collect(),
                )?;
                let ubar = integrate(&xu)?;
                let expo: Vec<f64> = xs
                    .iter()
                    .map(|&x| {
                        -(alpha * x.powi(4) / 4.0 + (1.0 - alpha) * x * x / 2.0 - ubar * x)
                            / sigma
                    })
                    .collect();
                self.normalised_exp(grid, expo)
            }
            ProblemSpec::Nfp { sigma, b, activation, grid, .. } => {
                let f0 = self.nfp_drive(u, *b, *activation)?;
                let ay = grid.axis(1);
                let l = grid.axis(0).length();
                let ny = ay.n;
                let mut out = vec![0.0; grid.len()];
                let wy = simpson_weights_axis(ay);
                for (ix, &f0x) in f0.iter().enumerate() {
                    let mut z = 0.0;
                    for iy in 0..ny {
                        let y = ay.node(iy);
                        let g = (-(y - f0x) * (y - f0x) / (2.0 * sigma)).exp();
                        out[ix * ny + iy] = g;
                        z += wy[iy] * g;
                    }
                    let z = l * z;
                    if !(z.is_finite() && z > 0.0) {
                        return Err(Error::NonFinite(format!(
                            "NFP normalisation at angle index {ix}"
                        )));
                    }
                    for iy in 0..ny {
                        out[ix * ny + iy] /= z;
                    }
                }
                let mut f = Field::new(grid.clone(), out)?;
                f.enforce_periodic_edges();
                Ok(f)
            }
        }
    }

    /// Fréchet derivative action `D T[u](phi)`, reusing `tu = apply(u)`.
    pub fn frechet(&self, u: &Field, tu: &Field, phi: &Field) -> Result<Field> {
        self.check_grid(u)?;
        self.check_grid(tu)?;
        self.check_grid(phi)?;
        match &self.spec {
            ProblemSpec::Mv1d { kappa, sigma, .. } | ProblemSpec::Mv2d { kappa, sigma, .. } => {
                let conv = self.interaction(phi)?;
                let weighted = Field::new(
                    u.grid().clone(),
                    tu.values().iter().zip(conv.values()).map(|(t, c)| t * c).collect(),
                )?;
                let inner = integrate(&weighted)?;
                let scale = -kappa / sigma;
                Ok(Field::new(
                    u.grid().clone(),
                    tu.values()
                        .iter()
                        .zip(conv.values())
                        .map(|(t, c)| scale * t * (c - inner))
                        .collect(),
                )?)
            }
            ProblemSpec::Cs { sigma, grid, .. } => {
                let xs = grid.axis(0).nodes();
                let xphi = Field::new(
                    grid.clone(),
                    xs.iter().zip(phi.values()).map(|(x, v)| x * v).collect(),
                )?;
                let dubar = integrate(&xphi)?;
                let xtu = Field::new(
                    grid.clone(),
                    xs.iter().zip(tu.values()).map(|(x, v)| x * v).collect(),
                )?;
                let mean_x = integrate(&xtu)?;
                Ok(Field::new(
                    grid.clone(),
                    xs.iter()
                        .zip(tu.values())
                        .map(|(x, t)| dubar / sigma * t * (x - mean_x))
                        .collect(),
                )?)
            }
            ProblemSpec::Nfp { sigma, b, activation, grid, .. } => {
                let angular = self.angular_grid.as_ref().expect("NFP angular grid");
                let plan = self.plan.as_ref().expect("NFP plan");
                let what = self.kernel_hat.as_ref().expect("NFP kernel transform");
                // drive of the base state and its perturbation
                let ubar = integrate_axis1(u, |y| y)?;
                let ubar_f = Field::new(angular.clone(), close_periodic(ubar))?;
                let conv_u = plan.convolve_spectrum(what, &ubar_f)?;
                let dubar = integrate_axis1(phi, |y| y)?;
                let dubar_f = Field::new(angular.clone(), close_periodic(dubar))?;
                let conv_d = plan.convolve_spectrum(what, &dubar_f)?;
                let df0: Vec<f64> = conv_u
                    .values()
                    .iter()
                    .zip(conv_d.values())
                    .map(|(cu, cd)| activation.deriv(cu + b) * cd)
                    .collect();
                let f0 = self.nfp_drive(u, *b, *activation)?;
                let ay = grid.axis(1);
                let ny = ay.n;
                let l = grid.axis(0).length();
                let wy = simpson_weights_axis(ay);
                let mut out = vec![0.0; grid.len()];
                for ix in 0..grid.axis(0).n {
                    let f0x = f0[ix];
                    // m(x) = L int (y - F0)/sigma * Tu dy
                    let mut m = 0.0;
                    for iy in 0..ny {
                        let y = ay.node(iy);
                        m += wy[iy] * (y - f0x) / sigma * tu.values()[ix * ny + iy];
                    }
                    let m = l * m;
                    for iy in 0..ny {
                        let y = ay.node(iy);
                        out[ix * ny + iy] =
                            tu.values()[ix * ny + iy] * df0[ix] * ((y - f0x) / sigma - m);
                    }
                }
                let mut f = Field::new(grid.clone(), out)?;
                f.enforce_periodic_edges();
                Ok(f)
            }
        }
    }

    /// Residual `F(u) = T u - u`.
    pub fn residual(&self, u: &Field) -> Result<Field> {
        let tu = self.apply(u)?;
        Ok(&tu - u)
    }

    /// Steady-state condition integrand `xi = sigma log u + Phi[u] + V`,
    /// constant on stationary states (per angle for the neural variant).
    /// Entries where the density underflows are set to NaN and skipped by
    /// the residual reduction; a negative density is an error.
    pub fn xi(&self, u: &Field) -> Result<Field> {
        self.check_grid(u)?;
        if u.values().iter().any(|&v| v < 0.0) {
            return Err(Error::Invalid(
                "steady-state condition needs a nonnegative density".into(),
            ));
        }
        let safe_log = |v: f64, sigma: f64| {
            if v > 0.0 {
                sigma * v.ln()
            } else {
                f64::NAN
            }
        };
        match &self.spec {
            ProblemSpec::Mv1d { kappa, sigma, .. } | ProblemSpec::Mv2d { kappa, sigma, .. } => {
                let conv = self.interaction(u)?;
                Ok(Field::new(
                    u.grid().clone(),
                    u.values()
                        .iter()
                        .zip(conv.values())
                        .map(|(&v, &c)| safe_log(v, *sigma) + kappa * c)
                        .collect(),
                )?)
            }
            ProblemSpec::Cs { alpha, sigma, grid } => {
                let xs = grid.axis(0).nodes();
                let xu = Field::new(
                    grid.clone(),
                    xs.iter().zip(u.values()).map(|(x, v)| x * v).collect(),
                )?;
                let ubar = integrate(&xu)?;
                Ok(Field::new(
                    grid.clone(),
                    xs.iter()
                        .zip(u.values())
                        .map(|(&x, &v)| {
                            safe_log(v, *sigma)
                                + alpha * x.powi(4) / 4.0
                                + (1.0 - alpha) * x * x / 2.0
                                - ubar * x
                        })
                        .collect(),
                )?)
            }
            ProblemSpec::Nfp { sigma, b, activation, grid, .. } => {
                // per-angle potential: xi(x, y) = sigma log u + y^2/2 - F0(x) y
                let f0 = self.nfp_drive(u, *b, *activation)?;
                let ay = grid.axis(1);
                let ny = ay.n;
                let mut out = vec![0.0; grid.len()];
                for (ix, &f0x) in f0.iter().enumerate() {
                    for iy in 0..ny {
                        let y = ay.node(iy);
                        out[ix * ny + iy] =
                            safe_log(u.values()[ix * ny + iy], *sigma) + y * y / 2.0 - f0x * y;
                    }
                }
                Ok(Field::new(grid.clone(), out)?)
            }
        }
    }

    /// Per-angle drive `F0(x) = F(W * ubar(x) + B)` of the neural variant.
    fn nfp_drive(&self, u: &Field, b: f64, activation: Activation) -> Result<Vec<f64>> {
        let angular = self.angular_grid.as_ref().expect("NFP angular grid");
        let plan = self.plan.as_ref().expect("NFP plan");
        let what = self.kernel_hat.as_ref().expect("NFP kernel transform");
        let ubar = integrate_axis1(u, |y| y)?;
        let ubar_f = Field::new(angular.clone(), close_periodic(ubar))?;
        let conv = plan.convolve_spectrum(what, &ubar_f)?;
        Ok(conv.values().iter().map(|&c| activation.eval(c + b)).collect())
    }

    /// Shift-stabilised `exp(expo) / Z` with Simpson normalisation.
    fn normalised_exp(&self, grid: &GridSpec, mut expo: Vec<f64>) -> Result<Field> {
        let shift = expo.iter().fold(f64::NEG_INFINITY, |m, &e| m.max(e));
        if !shift.is_finite() {
            return Err(Error::NonFinite("map exponent".into()));
        }
        for e in expo.iter_mut() {
            *e = (*e - shift).exp();
        }
        let mut num = Field::new(grid.clone(), expo)?;
        num.enforce_periodic_edges();
        let z = integrate(&num)?;
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::NonFinite("map normalisation".into()));
        }
        Ok(num.map(|v| v / z))
    }
}

/// Re-pin the duplicated periodic node of an angular signal (the per-angle
/// reductions return one value per stored node, endpoints included).
fn close_periodic(mut v: Vec<f64>) -> Vec<f64> {
    debug_assert!(!v.is_empty());
    if let Some(&first) = v.first() {
        if let Some(last) = v.last_mut() {
            *last = first;
        }
    }
    v
}

fn simpson_weights_axis(ax: &crate::grid::Axis) -> Vec<f64> {
    let h = ax.spacing();
    let n = ax.n;
    let mut w = vec![0.0; n];
    w[0] = h / 3.0;
    w[n - 1] = h / 3.0;
    for (j, wj) in w.iter_mut().enumerate().take(n - 1).skip(1) {
        *wj = if j % 2 == 1 { 4.0 * h / 3.0 } else { 2.0 * h / 3.0 };
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{field_norm, norm, sub_norm, NormP};
    use crate::reference::kuramoto_reference;
    use std::f64::consts::PI;

    fn kuramoto(kappa: f64, n: usize) -> Problem {
        Problem::new(ProblemSpec::Mv1d {
            kappa,
            sigma: 1.0,
            kernel: KernelSpec::CosineModes { modes: vec![(1.0, 1)] },
            grid: GridSpec::torus_pi(n).unwrap(),
        })
        .unwrap()
    }

    fn rand_field(grid: &GridSpec, seed: u64, scale: f64, offset: f64) -> Field {
        let mut state = seed;
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut f = Field::zeros(grid);
        for v in f.values_mut().iter_mut() {
            *v = offset + scale * next();
        }
        f.enforce_periodic_edges();
        f
    }

    #[test]
    fn invert_h_prime_catalogue() {
        let lin = DiffusionInverse::Linear { sigma: 1.0 };
        assert!((lin.invert_h_prime(0.0).unwrap() - 1.0).abs() <= 1e-15);
        let fd = DiffusionInverse::FermiDirac;
        assert!((fd.invert_h_prime(0.0).unwrap() - 0.5).abs() <= 1e-15);
        for s in [-3.0, 0.4, 9.0] {
            let v = fd.invert_h_prime(s).unwrap();
            assert!(v > 0.0 && v < 1.0);
        }
        // oracle: solve H'(u) = nu m u^{m-1} = 3 directly for nu=1, m=2
        let pf = DiffusionInverse::PorousFast { nu: 1.0, m: 2.0 };
        assert!((pf.invert_h_prime(3.0).unwrap() - 1.5).abs() <= 1e-15);
        assert!(pf.invert_h_prime(-1.0).is_err());
        let be = DiffusionInverse::BoseEinstein;
        assert!(be.invert_h_prime(0.5).is_err());
        // H'(u) = log(u/(1+u)) < 0 for u > 0, so the inverse of s < 0 is positive
        let u = be.invert_h_prime(-0.5).unwrap();
        assert!(u > 0.0);
        assert!(((u / (1.0 + u)).ln() + 0.5).abs() <= 1e-14);
    }

    #[test]
    fn mv_kappa_zero_gives_homogeneous() {
        let p = kuramoto(0.0, 201);
        let u = rand_field(p.grid(), 5, 0.3, 0.5);
        let tu = p.apply(&u).unwrap();
        for v in tu.values() {
            assert!((v - 1.0 / PI).abs() <= 1e-14);
        }
    }

    #[test]
    fn mv_homogeneous_is_fixed_point_for_all_kernels() {
        let grid = GridSpec::torus_pi(501).unwrap();
        let kernels = [
            KernelSpec::CosineModes { modes: vec![(1.0, 1)] },
            KernelSpec::CosineModes { modes: vec![(1.0, 1), (1.1, 3)] },
            KernelSpec::TopHat { r: PI / 12.0 },
            KernelSpec::Triangle { r: PI / 12.0 },
            KernelSpec::AttRepTopHat { r: 0.6 },
        ];
        for kernel in kernels {
            let p = Problem::new(ProblemSpec::Mv1d {
                kappa: 4.0,
                sigma: 1.0,
                kernel: kernel.clone(),
                grid: grid.clone(),
            })
            .unwrap();
            let u = Field::constant(&grid, 1.0 / PI);
            let tu = p.apply(&u).unwrap();
            let err = sub_norm(tu.values(), u.values(), NormP::Inf);
            assert!(err <= 1e-13, "{kernel:?}: err = {err:.3e}");
        }
    }

    #[test]
    fn mv_outputs_positive_unit_mass() {
        let p = kuramoto(5.0, 501);
        let u = rand_field(p.grid(), 11, 0.4, 0.4);
        let tu = p.apply(&u).unwrap();
        assert!(tu.values().iter().all(|&v| v > 0.0));
        let mass = integrate(&tu).unwrap();
        assert!((mass - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn mv_reference_is_near_fixed_point() {
        for n in [101usize, 501, 2001] {
            let p = kuramoto(3.0, n);
            let u = kuramoto_reference(3.0, 1, p.grid()).unwrap().field;
            let tu = p.apply(&u).unwrap();
            let err = sub_norm(tu.values(), u.values(), NormP::Inf);
            // convolution and quadrature are spectrally accurate on this
            // smooth state, so the residual sits near rounding level
            assert!(err <= 1e-11, "n = {n}: residual {err:.3e}");
        }
    }

    #[test]
    fn mv_frechet_annihilates_constants() {
        let p = kuramoto(3.0, 201);
        let u = rand_field(p.grid(), 3, 0.2, 0.5);
        let tu = p.apply(&u).unwrap();
        let phi = Field::constant(p.grid(), 2.7);
        let d = p.frechet(&u, &tu, &phi).unwrap();
        assert!(norm(d.values(), NormP::Inf) <= 1e-12);
    }

    #[test]
    fn mv_frechet_eigenmode_at_homogeneous() {
        // D T[1/pi](w1) = (kappa / sqrt(2 pi)) w1
        let kappa = 3.0;
        let p = kuramoto(kappa, 801);
        let u = Field::constant(p.grid(), 1.0 / PI);
        let tu = p.apply(&u).unwrap();
        let w1 = Field::from_fn_1d(p.grid(), |x| (2.0 / PI).sqrt() * (2.0 * x).cos());
        let d = p.frechet(&u, &tu, &w1).unwrap();
        let expect = &w1 * (kappa / (2.0 * PI).sqrt());
        let err = sub_norm(d.values(), expect.values(), NormP::Inf);
        assert!(err <= 1e-12, "err = {err:.3e}");
    }

    #[test]
    fn mv_frechet_matches_dense_jacobian_eigenpair() {
        // dense finite-difference Jacobian of T at the homogeneous state:
        // leading eigenvalue kappa/sqrt(2 pi), eigenvector w1
        let kappa = 3.0;
        let n = 65;
        let p = kuramoto(kappa, n);
        let u = Field::constant(p.grid(), 1.0 / PI);
        let h = 1e-6;
        let mut jac = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut up = u.clone();
            up.values_mut()[j] += h;
            let mut um = u.clone();
            um.values_mut()[j] -= h;
            let tp = p.apply(&up).unwrap();
            let tm = p.apply(&um).unwrap();
            for i in 0..n {
                jac[i][j] = (tp.values()[i] - tm.values()[i]) / (2.0 * h);
            }
        }
        // power iteration
        let mut v: Vec<f64> = (0..n).map(|i| ((2 * i) as f64 * 0.1).cos() + 0.3).collect();
        let mut lambda = 0.0;
        for _ in 0..500 {
            let mut w = vec![0.0; n];
            for i in 0..n {
                w[i] = jac[i].iter().zip(&v).map(|(a, b)| a * b).sum();
            }
            lambda = norm(&w, NormP::Two);
            for (wi, vi) in w.iter().zip(v.iter_mut()) {
                *vi = wi / lambda;
            }
        }
        let expect = kappa / (2.0 * PI).sqrt();
        assert!(
            (lambda - expect).abs() <= 1e-4 * expect,
            "leading eigenvalue {lambda} vs {expect}"
        );
        // the eigenspace at the homogeneous state is span{cos 2x, sin 2x}
        let wc = Field::from_fn_1d(p.grid(), |x| (2.0 * x).cos());
        let ws = Field::from_fn_1d(p.grid(), |x| (2.0 * x).sin());
        let proj = |basis: &Field| -> f64 {
            let b2: f64 = basis.values().iter().map(|b| b * b).sum();
            let dot: f64 = v.iter().zip(basis.values()).map(|(a, b)| a * b).sum();
            dot / b2
        };
        let (cc, cs) = (proj(&wc), proj(&ws));
        let mut resid = 0.0f64;
        for ((vi, c), s) in v.iter().zip(wc.values()).zip(ws.values()) {
            resid = resid.max((vi - cc * c - cs * s).abs());
        }
        assert!(resid <= 1e-3, "eigenvector outside the mode-1 span: {resid:.3e}");
    }

    #[test]
    fn frechet_linear_and_mean_zero() {
        let p = kuramoto(4.0, 301);
        let u = rand_field(p.grid(), 17, 0.3, 0.5);
        let tu = p.apply(&u).unwrap();
        let phi1 = rand_field(p.grid(), 18, 1.0, 0.0);
        let phi2 = rand_field(p.grid(), 19, 1.0, 0.0);
        let (a, b) = (0.7, -1.9);
        let combo = &(&phi1 * a) + &(&phi2 * b);
        let lhs = p.frechet(&u, &tu, &combo).unwrap();
        let d1 = p.frechet(&u, &tu, &phi1).unwrap();
        let d2 = p.frechet(&u, &tu, &phi2).unwrap();
        let rhs = &(&d1 * a) + &(&d2 * b);
        assert!(sub_norm(lhs.values(), rhs.values(), NormP::Inf) <= 1e-12);
        // range is mean-zero: int DT[u](phi) dx = 0
        let m = integrate(&lhs).unwrap();
        assert!(m.abs() <= 1e-12, "mean {m:.3e}");
    }

    #[test]
    fn cs_preserves_evenness_and_reflection_equivariance() {
        let grid = GridSpec::line(501, -6.0, 6.0).unwrap();
        let p = Problem::new(ProblemSpec::Cs { alpha: 1.0, sigma: 0.2, grid: grid.clone() })
            .unwrap();
        let even = Field::from_fn_1d(&grid, |x| (-x * x / 2.0).exp());
        let t = p.apply(&even).unwrap();
        for j in 0..250 {
            let a = t.values()[j];
            let b = t.values()[500 - j];
            assert!((a - b).abs() <= 1e-14);
        }
        // reflection equivariance on a skewed input
        let skew = Field::from_fn_1d(&grid, |x| (-(x - 1.0) * (x - 1.0) / 2.0).exp());
        let t1 = p.apply(&skew).unwrap();
        let skew_r = Field::from_fn_1d(&grid, |x| (-(-x - 1.0) * (-x - 1.0) / 2.0).exp());
        let t2 = p.apply(&skew_r).unwrap();
        for j in 0..=500 {
            assert!((t1.values()[j] - t2.values()[500 - j]).abs() <= 1e-13);
        }
    }

    #[test]
    fn cs_skewed_input_gives_positive_mean() {
        let grid = GridSpec::line(801, -6.0, 6.0).unwrap();
        let p = Problem::new(ProblemSpec::Cs { alpha: 1.0, sigma: 0.2, grid: grid.clone() })
            .unwrap();
        let skew = Field::from_fn_1d(&grid, |x| (-(x - 1.0) * (x - 1.0) / 2.0).exp());
        let t = p.apply(&skew).unwrap();
        let xs = grid.axis(0).nodes();
        let xt = Field::new(
            grid.clone(),
            xs.iter().zip(t.values()).map(|(x, v)| x * v).collect(),
        )
        .unwrap();
        let mean = integrate(&xt).unwrap();
        assert!(mean > 0.0, "mean velocity after one application: {mean}");
    }

    #[test]
    fn cs_frechet_annihilates_even_and_constant_directions() {
        let grid = GridSpec::line(501, -6.0, 6.0).unwrap();
        let p = Problem::new(ProblemSpec::Cs { alpha: 1.0, sigma: 0.2, grid: grid.clone() })
            .unwrap();
        let u = Field::from_fn_1d(&grid, |x| (-x * x / 2.0).exp());
        let tu = p.apply(&u).unwrap();
        let even = Field::from_fn_1d(&grid, |x| (x * x).cos());
        let d = p.frechet(&u, &tu, &even).unwrap();
        assert!(norm(d.values(), NormP::Inf) <= 1e-13);
        let constant = Field::constant(&grid, 3.3);
        let d = p.frechet(&u, &tu, &constant).unwrap();
        assert!(norm(d.values(), NormP::Inf) <= 1e-13);
        // odd directions act nontrivially
        let odd = Field::from_fn_1d(&grid, |x| x * (-x * x).exp());
        let d = p.frechet(&u, &tu, &odd).unwrap();
        assert!(norm(d.values(), NormP::Inf) > 1e-6);
        let m = integrate(&d).unwrap();
        assert!(m.abs() <= 1e-12);
    }

    fn nfp_grid(nx: usize, ny: usize) -> GridSpec {
        GridSpec::product(
            crate::grid::Axis::new(nx, -PI / 2.0, PI / 2.0, crate::grid::Topology::Periodic)
                .unwrap(),
            crate::grid::Axis::new(ny, 0.0, 35.0, crate::grid::Topology::Truncated).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn nfp_decoupled_control() {
        // W = 0, B = 3, identity activation: per-angle Gaussian centred at 3
        let grid = nfp_grid(33, 701);
        let p = Problem::new(ProblemSpec::Nfp {
            sigma: 0.44,
            b: 3.0,
            kernel: KernelSpec::Zero,
            activation: Activation::Identity,
            grid: grid.clone(),
        })
        .unwrap();
        let u0 = Field::constant(&grid, 1.0 / (PI * 35.0));
        let tu = p.apply(&u0).unwrap();
        // independent of the angle
        let ny = grid.axis(1).n;
        for ix in 1..grid.axis(0).n {
            for iy in 0..ny {
                assert!((tu.at2(ix, iy) - tu.at2(0, iy)).abs() <= 1e-15);
            }
        }
        // per-angle mass 1/L for every angle
        let masses = integrate_axis1(&tu, |_| 1.0).unwrap();
        for m in masses {
            assert!((m - 1.0 / PI).abs() <= 1e-12);
        }
        // total mass 1
        assert!((integrate(&tu).unwrap() - 1.0).abs() <= 1e-10);
        // peak near y = 3
        let peak = (0..ny).max_by(|&a, &b| tu.at2(0, a).total_cmp(&tu.at2(0, b))).unwrap();
        assert!((grid.axis(1).node(peak) - 3.0).abs() <= 0.1);
    }

    #[test]
    fn nfp_frechet_mean_zero_per_angle_and_moment_free_directions() {
        let grid = nfp_grid(33, 301);
        let p = Problem::new(ProblemSpec::Nfp {
            sigma: 0.44,
            b: 3.0,
            kernel: KernelSpec::CosineNfp { constant: -3.0, modes: vec![(3.0, 1), (3.3, 4)] },
            activation: Activation::SmoothedRelu,
            grid: grid.clone(),
        })
        .unwrap();
        let u = Field::from_fn_2d(&grid, |x, y| {
            ((-(y - 2.0) * (y - 2.0) / 0.9).exp()) * (1.0 + 0.1 * (2.0 * x).cos()) / PI
        });
        let tu = p.apply(&u).unwrap();
        // phi with zero first y-moment at every angle is annihilated
        let phi0 = Field::from_fn_2d(&grid, |x, y| {
            (1.5 - y) * (-(y - 1.5) * (y - 1.5) / 2.0).exp() * (1.0 + (4.0 * x).sin())
        });
        let mom = integrate_axis1(&phi0, |y| y).unwrap();
        // build a direction with int y phi dy = 0 at every angle by
        // subtracting a multiple of the Tu column
        let tu_mom = integrate_axis1(&tu, |y| y).unwrap();
        let ny = grid.axis(1).n;
        let mut vals = phi0.values().to_vec();
        for ix in 0..grid.axis(0).n {
            let c = mom[ix] / tu_mom[ix];
            for iy in 0..ny {
                vals[ix * ny + iy] -= c * tu.values()[ix * ny + iy];
            }
        }
        let phi = Field::new(grid.clone(), vals).unwrap();
        let d = p.frechet(&u, &tu, &phi).unwrap();
        assert!(norm(d.values(), NormP::Inf) <= 1e-10);
        // generic phi: per-angle mean-zero output
        let phi = Field::from_fn_2d(&grid, |x, y| (2.0 * x).cos() * y * (-y).exp());
        let d = p.frechet(&u, &tu, &phi).unwrap();
        let masses = integrate_axis1(&d, |_| 1.0).unwrap();
        for m in masses {
            assert!(m.abs() <= 1e-12, "per-angle mean {m:.2e}");
        }
    }

    #[test]
    fn exponent_stabilisation_handles_large_kappa() {
        let p = kuramoto(15.5, 501);
        let u = rand_field(p.grid(), 23, 0.5, 0.4);
        let tu = p.apply(&u).unwrap();
        assert!(tu.is_finite());
        assert!((integrate(&tu).unwrap() - 1.0).abs() <= 1e-10);
        assert!(field_norm(&tu, NormP::Inf, false) < 1e3);
    }

    #[test]
    fn smoothed_relu_shape() {
        let f = Activation::SmoothedRelu;
        assert_eq!(f.eval(-1.0), 0.0);
        assert_eq!(f.eval(0.0), 0.0);
        assert_eq!(f.deriv(0.0), 0.0);
        let x = 0.75;
        assert!((f.eval(x) - x * x / (x * x + 0.1).sqrt()).abs() <= 1e-15);
        // derivative against central differences
        let h = 1e-6;
        let fd = (f.eval(x + h) - f.eval(x - h)) / (2.0 * h);
        assert!((f.deriv(x) - fd).abs() <= 1e-9);
    }
}
