//! Cubic-spline interpolation on uniform grids and the upsampling operator
//! used to compare solutions across mesh sizes.
//!
//! Boundary conditions: periodic on periodic axes, not-a-knot on truncated
//! axes. On uniform spacing the not-a-knot conditions reduce to
//! `m_1 = d2_1` and `m_{n-2} = d2_{n-2}` for the spline moments, which keeps
//! the solve tridiagonal.

use crate::error::{Error, Result};
use crate::grid::{Axis, Field, GridSpec};

/// Natural representation: knot values plus second-derivative moments.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    x0: f64,
    h: f64,
    periodic: bool,
    period: f64,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    /// Fit a spline to `values` sampled on `axis`. On periodic axes the last
    /// (duplicated) sample is dropped and the fit wraps around.
    pub fn fit(axis: &Axis, values: &[f64]) -> Result<Self> {
        if values.len() != axis.n {
            return Err(Error::GridMismatch {
                context: format!("{} samples on an axis of {} nodes", values.len(), axis.n),
            });
        }
        if axis.n < 4 {
            return Err(Error::InvalidGrid(
                "spline fit needs at least 4 nodes per axis".into(),
            ));
        }
        let h = axis.spacing();
        if axis.is_periodic() {
            let msamp = axis.n - 1;
            let y = values[..msamp].to_vec();
            let m = periodic_moments(&y, h);
            Ok(Self {
                x0: axis.lower,
                h,
                periodic: true,
                period: axis.length(),
                y,
                m,
            })
        } else {
            let y = values.to_vec();
            let m = not_a_knot_moments(&y, h);
            Ok(Self {
                x0: axis.lower,
                h,
                periodic: false,
                period: axis.length(),
                y,
                m,
            })
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.y.len();
        let (j, jp, t) = if self.periodic {
            let mut s = (x - self.x0) / self.period;
            s -= s.floor();
            let u = s * n as f64;
            let mut j = u.floor() as usize;
            if j >= n {
                j = n - 1;
            }
            (j, (j + 1) % n, (u - j as f64) * self.h)
        } else {
            let u = (x - self.x0) / self.h;
            let j = (u.floor() as isize).clamp(0, n as isize - 2) as usize;
            (j, j + 1, x - (self.x0 + j as f64 * self.h))
        };
        let h = self.h;
        let a = h - t; // distance to right knot
        let (mj, mjp) = (self.m[j], self.m[jp]);
        let (yj, yjp) = (self.y[j], self.y[jp]);
        mj * a * a * a / (6.0 * h)
            + mjp * t * t * t / (6.0 * h)
            + (yj - mj * h * h / 6.0) * a / h
            + (yjp - mjp * h * h / 6.0) * t / h
    }
}

/// Second divided differences `(y[j-1] - 2 y[j] + y[j+1]) / h^2`.
fn d2(y: &[f64], j: usize, h: f64) -> f64 {
    (y[j - 1] - 2.0 * y[j] + y[j + 1]) / (h * h)
}

/// Moments of the not-a-knot spline on a uniform grid.
fn not_a_knot_moments(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    let mut m = vec![0.0; n];
    m[1] = d2(y, 1, h);
    m[n - 2] = d2(y, n - 2, h);
    if n > 4 {
        // tridiagonal system for m[2..n-2]: m[j-1] + 4 m[j] + m[j+1] = 6 d2_j
        let k = n - 4; // unknowns
        let mut rhs = vec![0.0; k];
        for (i, r) in rhs.iter_mut().enumerate() {
            *r = 6.0 * d2(y, i + 2, h);
        }
        rhs[0] -= m[1];
        rhs[k - 1] -= m[n - 2];
        let sol = solve_tridiag_const(4.0, 1.0, &rhs);
        m[2..2 + k].copy_from_slice(&sol);
    }
    m[0] = 2.0 * m[1] - m[2];
    m[n - 1] = 2.0 * m[n - 2] - m[n - 3];
    m
}

/// Moments of the periodic spline: cyclic tridiagonal system
/// `m[j-1] + 4 m[j] + m[j+1] = 6 d2_j` with wrapped indices.
fn periodic_moments(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    let rhs: Vec<f64> = (0..n)
        .map(|j| {
            let prev = y[(j + n - 1) % n];
            let next = y[(j + 1) % n];
            6.0 * (prev - 2.0 * y[j] + next) / (h * h)
        })
        .collect();
    solve_cyclic_tridiag_const(4.0, 1.0, &rhs)
}

/// Thomas algorithm for a constant tridiagonal matrix `tri(off, diag, off)`.
fn solve_tridiag_const(diag: f64, off: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag;
    c[0] = off / denom;
    d[0] = rhs[0] / denom;
    for j in 1..n {
        denom = diag - off * c[j - 1];
        c[j] = off / denom;
        d[j] = (rhs[j] - off * d[j - 1]) / denom;
    }
    let mut x = d;
    for j in (0..n - 1).rev() {
        x[j] -= c[j] * x[j + 1];
    }
    x
}

/// Sherman-Morrison solve for the cyclic constant tridiagonal matrix.
fn solve_cyclic_tridiag_const(diag: f64, off: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    assert!(n >= 3);
    // A = B + u v^T with B tridiagonal, u = (gamma, 0, .., off)^T,
    // v = (1, 0, .., off/gamma)^T; B has modified corners.
    let gamma = -diag;
    let mut b_diag = vec![diag; n];
    b_diag[0] = diag - gamma;
    b_diag[n - 1] = diag - off * off / gamma;
    let y = solve_tridiag_var(&b_diag, off, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = off;
    let q = solve_tridiag_var(&b_diag, off, &u);
    let vy = y[0] + off / gamma * y[n - 1];
    let vq = q[0] + off / gamma * q[n - 1];
    let factor = vy / (1.0 + vq);
    y.iter().zip(&q).map(|(yi, qi)| yi - factor * qi).collect()
}

/// Thomas algorithm with a variable diagonal and constant off-diagonal.
fn solve_tridiag_var(diag: &[f64], off: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    c[0] = off / denom;
    d[0] = rhs[0] / denom;
    for j in 1..n {
        denom = diag[j] - off * c[j - 1];
        c[j] = off / denom;
        d[j] = (rhs[j] - off * d[j - 1]) / denom;
    }
    let mut x = d;
    for j in (0..n - 1).rev() {
        x[j] -= c[j] * x[j + 1];
    }
    x
}

/// Resample `f` on `target` with a cubic-spline interpolant (periodic end
/// conditions on periodic axes, not-a-knot on truncated ones). The target
/// must cover the same domain. Reproduces `f` exactly at shared nodes.
pub fn upsample(f: &Field, target: &GridSpec) -> Result<Field> {
    let grid = f.grid();
    if !grid.same_domain(target) {
        return Err(Error::DomainMismatch {
            context: format!("source {:?} vs target {:?}", grid.axes(), target.axes()),
        });
    }
    if grid == target {
        return Ok(f.clone());
    }
    match grid.dim() {
        1 => {
            let sp = CubicSpline::fit(grid.axis(0), f.values())?;
            let ax = target.axis(0);
            let mut out = Vec::with_capacity(ax.n);
            for j in 0..ax.n {
                out.push(sp.eval(ax.node(j)));
            }
            let mut field = Field::new(target.clone(), out)?;
            field.enforce_periodic_edges();
            Ok(field)
        }
        2 => {
            let (sx, sy) = (grid.axis(0), grid.axis(1));
            let (tx, ty) = (target.axis(0), target.axis(1));
            // pass 1: along axis 1
            let mut mid = vec![0.0; sx.n * ty.n];
            for ix in 0..sx.n {
                let row = &f.values()[ix * sy.n..(ix + 1) * sy.n];
                let sp = CubicSpline::fit(sy, row)?;
                for jy in 0..ty.n {
                    mid[ix * ty.n + jy] = sp.eval(ty.node(jy));
                }
            }
            // pass 2: along axis 0
            let mut out = vec![0.0; tx.n * ty.n];
            let mut col = vec![0.0; sx.n];
            for jy in 0..ty.n {
                for ix in 0..sx.n {
                    col[ix] = mid[ix * ty.n + jy];
                }
                let sp = CubicSpline::fit(sx, &col)?;
                for jx in 0..tx.n {
                    out[jx * ty.n + jy] = sp.eval(tx.node(jx));
                }
            }
            let mut field = Field::new(target.clone(), out)?;
            field.enforce_periodic_edges();
            Ok(field)
        }
        _ => unreachable!(),
    }
}
