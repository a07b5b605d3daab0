//! Discrete periodic convolution on the torus via the convolution theorem,
//! in one and two dimensions, plus a direct-sum oracle.
//!
//! The transform acts on the first `n - 1` samples of each periodic axis (the
//! independent block); the duplicated last sample is restored afterwards. On
//! axes centred at 0 the result is circularly shifted by half a period so that
//! the output is aligned with the grid, and everything is rescaled by the cell
//! volume to approximate the continuous convolution integral.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};

/// Cached spectral workspace for one grid.
pub struct ConvPlan {
    grid: GridSpec,
    // per axis: forward/inverse transforms of length n - 1
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
    symmetric: Vec<bool>,
}

/// Forward transform of a field's independent block, cached by callers for
/// signals that stay fixed across iterations (the interaction kernel).
#[derive(Debug, Clone)]
pub struct Spectrum {
    shape: Vec<usize>,
    data: Vec<Complex64>,
}

impl ConvPlan {
    pub fn new(grid: &GridSpec) -> Result<Self> {
        let mut planner = FftPlanner::new();
        let mut fwd = Vec::new();
        let mut inv = Vec::new();
        let mut symmetric = Vec::new();
        for (i, ax) in grid.axes().iter().enumerate() {
            if !ax.is_periodic() {
                return Err(Error::NotPeriodic { axis: i });
            }
            let m = ax.n - 1;
            if ax.is_symmetric() && m % 2 != 0 {
                return Err(Error::InvalidGrid(format!(
                    "axis {i}: the half-period shift on a symmetric interval needs an even \
                     independent block, got {m}"
                )));
            }
            fwd.push(planner.plan_fft_forward(m));
            inv.push(planner.plan_fft_inverse(m));
            symmetric.push(ax.is_symmetric());
        }
        Ok(Self { grid: grid.clone(), fwd, inv, symmetric })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn check(&self, f: &Field) -> Result<()> {
        if f.grid() != &self.grid {
            return Err(Error::GridMismatch {
                context: "convolution plan built for a different grid".into(),
            });
        }
        Ok(())
    }

    fn block_shape(&self) -> Vec<usize> {
        self.grid.axes().iter().map(|a| a.n - 1).collect()
    }

    /// Forward transform of the independent block of `f`.
    pub fn spectrum(&self, f: &Field) -> Result<Spectrum> {
        self.check(f)?;
        let shape = self.block_shape();
        let mut data = gather_block(f, &shape);
        match shape.len() {
            1 => self.fwd[0].process(&mut data),
            2 => fft_2d(&self.fwd[0], &self.fwd[1], &mut data, shape[0], shape[1]),
            _ => unreachable!(),
        }
        Ok(Spectrum { shape, data })
    }

    /// `f * g` computed through precomputed `spectrum(f)`.
    pub fn convolve_spectrum(&self, fhat: &Spectrum, g: &Field) -> Result<Field> {
        self.check(g)?;
        let shape = self.block_shape();
        if fhat.shape != shape {
            return Err(Error::GridMismatch {
                context: "spectrum shape does not match plan".into(),
            });
        }
        let mut ghat = gather_block(g, &shape);
        match shape.len() {
            1 => self.fwd[0].process(&mut ghat),
            2 => fft_2d(&self.fwd[0], &self.fwd[1], &mut ghat, shape[0], shape[1]),
            _ => unreachable!(),
        }
        let scale = 1.0 / shape.iter().product::<usize>() as f64;
        for (h, f) in ghat.iter_mut().zip(&fhat.data) {
            *h *= f * scale;
        }
        match shape.len() {
            1 => self.inv[0].process(&mut ghat),
            2 => fft_2d(&self.inv[0], &self.inv[1], &mut ghat, shape[0], shape[1]),
            _ => unreachable!(),
        }
        self.finish(ghat, &shape)
    }

    /// Discrete approximation of the periodic convolution integral
    /// `(f * g)(x) = int f(x - y) g(y) dy`.
    pub fn convolve(&self, f: &Field, g: &Field) -> Result<Field> {
        let fhat = self.spectrum(f)?;
        self.convolve_spectrum(&fhat, g)
    }

    /// Circular shift (symmetric axes), real part, periodic edge, dx rescale.
    fn finish(&self, data: Vec<Complex64>, shape: &[usize]) -> Result<Field> {
        let dx = self.grid.cell_volume();
        let mut shifted = vec![Complex64::new(0.0, 0.0); data.len()];
        match shape.len() {
            1 => {
                let m = shape[0];
                let s = if self.symmetric[0] { m / 2 } else { 0 };
                for (j, v) in data.into_iter().enumerate() {
                    shifted[(j + s) % m] = v;
                }
            }
            2 => {
                let (m0, m1) = (shape[0], shape[1]);
                let s0 = if self.symmetric[0] { m0 / 2 } else { 0 };
                let s1 = if self.symmetric[1] { m1 / 2 } else { 0 };
                for i in 0..m0 {
                    for j in 0..m1 {
                        shifted[((i + s0) % m0) * m1 + ((j + s1) % m1)] = data[i * m1 + j];
                    }
                }
            }
            _ => unreachable!(),
        }
        // Imaginary residue is a convention bug if it is not tiny.
        #[cfg(debug_assertions)]
        {
            let re_norm = shifted.iter().map(|c| c.re * c.re).sum::<f64>().sqrt();
            let im_norm = shifted.iter().map(|c| c.im * c.im).sum::<f64>().sqrt();
            debug_assert!(
                im_norm <= 1e-12 * re_norm + 1e-13,
                "imaginary residue {im_norm:.3e} vs result norm {re_norm:.3e}"
            );
        }
        let mut out = Field::zeros(&self.grid);
        scatter_block(&mut out, &shifted, shape, dx);
        out.enforce_periodic_edges();
        Ok(out)
    }
}

/// Copy the independent block of `f` into a complex buffer.
fn gather_block(f: &Field, shape: &[usize]) -> Vec<Complex64> {
    match shape.len() {
        1 => f.values()[..shape[0]]
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect(),
        2 => {
            let n1 = f.grid().axis(1).n;
            let (m0, m1) = (shape[0], shape[1]);
            let mut out = Vec::with_capacity(m0 * m1);
            for i in 0..m0 {
                out.extend(
                    f.values()[i * n1..i * n1 + m1]
                        .iter()
                        .map(|&v| Complex64::new(v, 0.0)),
                );
            }
            out
        }
        _ => unreachable!(),
    }
}

fn scatter_block(out: &mut Field, data: &[Complex64], shape: &[usize], scale: f64) {
    match shape.len() {
        1 => {
            for (j, c) in data.iter().enumerate() {
                out.values_mut()[j] = c.re * scale;
            }
        }
        2 => {
            let n1 = out.grid().axis(1).n;
            let (m0, m1) = (shape[0], shape[1]);
            for i in 0..m0 {
                for j in 0..m1 {
                    out.values_mut()[i * n1 + j] = data[i * m1 + j].re * scale;
                }
            }
        }
        _ => unreachable!(),
    }
}

/// In-place 2D transform: rows, then columns via transpose.
fn fft_2d(
    fx: &Arc<dyn Fft<f64>>,
    fy: &Arc<dyn Fft<f64>>,
    data: &mut [Complex64],
    m0: usize,
    m1: usize,
) {
    for row in data.chunks_exact_mut(m1) {
        fy.process(row);
    }
    let mut t = vec![Complex64::new(0.0, 0.0); m0 * m1];
    for i in 0..m0 {
        for j in 0..m1 {
            t[j * m0 + i] = data[i * m1 + j];
        }
    }
    for col in t.chunks_exact_mut(m0) {
        fx.process(col);
    }
    for i in 0..m0 {
        for j in 0..m1 {
            data[i * m1 + j] = t[j * m0 + i];
        }
    }
}

/// Direct O(N^2) circular sum with the same shift and scaling conventions as
/// the FFT path. Oracle for `ConvPlan::convolve`; intended for small grids.
pub fn brute_convolve(f: &Field, g: &Field) -> Result<Field> {
    if f.grid() != g.grid() {
        return Err(Error::GridMismatch {
            context: "brute convolution operands".into(),
        });
    }
    let grid = f.grid();
    for (i, ax) in grid.axes().iter().enumerate() {
        if !ax.is_periodic() {
            return Err(Error::NotPeriodic { axis: i });
        }
    }
    let dx = grid.cell_volume();
    let mut out = Field::zeros(grid);
    match grid.dim() {
        1 => {
            let m = grid.axis(0).n - 1;
            let s = if grid.axis(0).is_symmetric() { m / 2 } else { 0 };
            let fv = &f.values()[..m];
            let gv = &g.values()[..m];
            for i in 0..m {
                // out[(i + s) mod m] = sum_j f[i - j] g[j]
                let mut acc = 0.0;
                for (j, gj) in gv.iter().enumerate() {
                    acc += fv[(i + m - j) % m] * gj;
                }
                out.values_mut()[(i + s) % m] = acc * dx;
            }
        }
        2 => {
            let (m0, m1) = (grid.axis(0).n - 1, grid.axis(1).n - 1);
            let s0 = if grid.axis(0).is_symmetric() { m0 / 2 } else { 0 };
            let s1 = if grid.axis(1).is_symmetric() { m1 / 2 } else { 0 };
            let n1 = grid.axis(1).n;
            for i0 in 0..m0 {
                for i1 in 0..m1 {
                    let mut acc = 0.0;
                    for j0 in 0..m0 {
                        for j1 in 0..m1 {
                            acc += f.values()[((i0 + m0 - j0) % m0) * n1 + (i1 + m1 - j1) % m1]
                                * g.values()[j0 * n1 + j1];
                        }
                    }
                    out.values_mut()[((i0 + s0) % m0) * n1 + (i1 + s1) % m1] = acc * dx;
                }
            }
        }
        _ => unreachable!(),
    }
    out.enforce_periodic_edges();
    Ok(out)
}
