//! Catalogue of interaction kernels, their samples, Fourier modes and the
//! predicted critical interaction strengths.
//!
//! The cosine basis on a torus of side length `L` is
//! `w_k(x) = sqrt(2/L) cos(2 pi k x / L)` with `w_0 = 1/sqrt(L)`; at `L = pi`
//! this is `sqrt(2/pi) cos(2 k x)`. A wavenumber `k >= 1` with negative mode
//! `Wtilde(k) = int W w_k dx` bifurcates from the homogeneous state at
//! `kappa_k = -sqrt(2 L) / Wtilde(k)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{integrate, Field, GridSpec};

/// One separable 2D term `coeff * w_kx(x0) * w_ky(x1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode2dTerm {
    pub coeff: f64,
    pub kx: u32,
    pub ky: u32,
}

/// Symbolic interaction kernels. Attractive coefficients are positive in
/// `CosineModes` (the kernel is `W = -sum a_i w_{k_i}`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `W = -sum a_i w_{k_i}` on the torus.
    CosineModes { modes: Vec<(f64, u32)> },
    /// `-1/(2R)` on `|x| <= R`, zero otherwise.
    TopHat { r: f64 },
    /// `-(1/2R)(1 - |x|/R)` on `|x| <= R`, zero otherwise.
    Triangle { r: f64 },
    /// `-1/(2R)` on `|x| <= R`, `+1/R` on `R < |x| <= 2R`, zero otherwise.
    AttRepTopHat { r: f64 },
    /// `W(x) = |x|^2 / 2`; expanded analytically in the flocking map rather
    /// than convolved numerically.
    Quadratic,
    /// `scale * (1 + tanh(offset - steepness |x|))`, angular kernel.
    TanhNfp { scale: f64, steepness: f64, offset: f64 },
    /// `constant + sum a_i cos(2 pi k_i x / L)`, angular kernel.
    CosineNfp { constant: f64, modes: Vec<(f64, u32)> },
    /// Identically zero (decoupled-angle control).
    Zero,
    /// Sum of separable terms `coeff * w_kx(x0) * w_ky(x1)` on the 2D torus.
    Modes2d { terms: Vec<Mode2dTerm> },
}

/// `w_k` basis element for an axis of length `l`.
pub fn basis_w(k: u32, l: f64, x: f64) -> f64 {
    if k == 0 {
        1.0 / l.sqrt()
    } else {
        (2.0 / l).sqrt() * (2.0 * std::f64::consts::PI * k as f64 * x / l).cos()
    }
}

impl KernelSpec {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        match self {
            KernelSpec::TopHat { r } | KernelSpec::Triangle { r } => {
                if *r <= 0.0 {
                    return Err(Error::InvalidKernel("support radius must be positive".into()));
                }
                if grid.dim() == 1 && 2.0 * r > grid.axis(0).length() {
                    return Err(Error::InvalidKernel(
                        "kernel support exceeds the torus side length".into(),
                    ));
                }
                Ok(())
            }
            KernelSpec::AttRepTopHat { r } => {
                if *r <= 0.0 {
                    return Err(Error::InvalidKernel("support radius must be positive".into()));
                }
                if grid.dim() == 1 && 2.0 * r > grid.axis(0).length() / 2.0 {
                    return Err(Error::InvalidKernel(
                        "attractive-repulsive support 2R must fit within L/2".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn eval_1d(&self, l: f64, x: f64) -> f64 {
        match self {
            KernelSpec::CosineModes { modes } => {
                -modes.iter().map(|&(a, k)| a * basis_w(k, l, x)).sum::<f64>()
            }
            KernelSpec::TopHat { r } => {
                if x.abs() <= *r {
                    -1.0 / (2.0 * r)
                } else {
                    0.0
                }
            }
            KernelSpec::Triangle { r } => {
                if x.abs() <= *r {
                    -(1.0 - x.abs() / r) / (2.0 * r)
                } else {
                    0.0
                }
            }
            KernelSpec::AttRepTopHat { r } => {
                let ax = x.abs();
                if ax <= *r {
                    -1.0 / (2.0 * r)
                } else if ax <= 2.0 * r {
                    1.0 / r
                } else {
                    0.0
                }
            }
            KernelSpec::Quadratic => x * x / 2.0,
            KernelSpec::TanhNfp { scale, steepness, offset } => {
                scale * (1.0 + (offset - steepness * x.abs()).tanh())
            }
            KernelSpec::CosineNfp { constant, modes } => {
                constant
                    + modes
                        .iter()
                        .map(|&(a, k)| {
                            a * (2.0 * std::f64::consts::PI * k as f64 * x / l).cos()
                        })
                        .sum::<f64>()
            }
            KernelSpec::Zero => 0.0,
            KernelSpec::Modes2d { .. } => unreachable!("2D kernel evaluated as 1D"),
        }
    }

    /// Pointwise samples of the kernel on `grid`. Discontinuities follow the
    /// closed case conditions (`|x| <= R` keeps the inner value).
    pub fn sample(&self, grid: &GridSpec) -> Result<Field> {
        self.validate(grid)?;
        match (self, grid.dim()) {
            (KernelSpec::Modes2d { terms }, 2) => {
                let lx = grid.axis(0).length();
                let ly = grid.axis(1).length();
                let terms = terms.clone();
                Ok(Field::from_fn_2d(grid, |x, y| {
                    terms
                        .iter()
                        .map(|t| t.coeff * basis_w(t.kx, lx, x) * basis_w(t.ky, ly, y))
                        .sum()
                }))
            }
            (KernelSpec::Modes2d { .. }, _) => Err(Error::InvalidKernel(
                "2D mode kernel sampled on a 1D grid".into(),
            )),
            (_, 1) => {
                let l = grid.axis(0).length();
                Ok(Field::from_fn_1d(grid, |x| self.eval_1d(l, x)))
            }
            (_, d) => Err(Error::InvalidKernel(format!(
                "kernel {:?} not supported on a {d}D grid",
                self
            ))),
        }
    }

    /// Fourier mode `Wtilde(k) = int W w_k dx`, computed by Simpson quadrature
    /// against the sampled kernel. Closed forms exist for every catalogue
    /// kernel but are kept as test oracles only.
    pub fn fourier_mode(&self, k: u32, grid: &GridSpec) -> Result<f64> {
        let w = self.sample(grid)?;
        let l = grid.axis(0).length();
        let wk = Field::from_fn_1d(grid, |x| basis_w(k, l, x));
        let prod = Field::new(
            grid.clone(),
            w.values().iter().zip(wk.values()).map(|(a, b)| a * b).collect(),
        )?;
        integrate(&prod)
    }

    /// Critical thresholds `kappa_k = -sqrt(2 L) / Wtilde(k)` for every
    /// wavenumber `1 <= k <= k_max` with a negative Fourier mode, sorted by
    /// ascending kappa. The mass mode `k = 0` never bifurcates (the map
    /// renormalises), so it is skipped.
    ///
    /// Modes whose magnitude is not clearly above the quadrature noise are
    /// treated as zero; the noise per mode is estimated by re-evaluating on a
    /// grid of roughly half the resolution. Without this, kernels with
    /// discontinuities report spurious thresholds at wavenumbers where the
    /// exact mode vanishes.
    pub fn critical_kappas(&self, grid: &GridSpec, k_max: u32) -> Result<Vec<(u32, f64)>> {
        let ax = grid.axis(0);
        let l = ax.length();
        let mut n_coarse = ax.n / 2 + 1;
        if n_coarse % 2 == 0 {
            n_coarse += 1;
        }
        let coarse = GridSpec::new(vec![crate::grid::Axis::new(
            n_coarse.max(5),
            ax.lower,
            ax.upper,
            ax.topology,
        )?])?;
        let mut out = Vec::new();
        for k in 1..=k_max {
            let mode = self.fourier_mode(k, grid)?;
            let probe = self.fourier_mode(k, &coarse)?;
            let noise = (mode - probe).abs().max(1e-14);
            if mode < 0.0 && mode.abs() > 3.0 * noise {
                out.push((k, -(2.0 * l).sqrt() / mode));
            }
        }
        out.sort_by(|a, b| a.1.total_cmp(&b.1));
        Ok(out)
    }
}
