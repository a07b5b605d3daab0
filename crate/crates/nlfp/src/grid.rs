//! Uniform grids, sampled fields, composite Simpson quadrature and norms.
//!
//! Grids store both endpoints; on periodic axes the last node duplicates the
//! first (`x[n-1] == x[0] + L` on the torus), so the independent sample count
//! is `n - 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Periodic,
    Truncated,
}

/// One uniformly sampled axis, endpoints inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub n: usize,
    pub lower: f64,
    pub upper: f64,
    pub topology: Topology,
}

impl Axis {
    pub fn new(n: usize, lower: f64, upper: f64, topology: Topology) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 nodes, got {n}")));
        }
        if !(lower.is_finite() && upper.is_finite()) || upper <= lower {
            return Err(Error::InvalidGrid(format!(
                "bad axis bounds [{lower}, {upper}]"
            )));
        }
        Ok(Self { n, lower, upper, topology })
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.n - 1) as f64
    }

    /// Side length of the axis (the period on periodic axes).
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn node(&self, j: usize) -> f64 {
        self.lower + j as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.node(j)).collect()
    }

    pub fn is_periodic(&self) -> bool {
        self.topology == Topology::Periodic
    }

    /// True when the axis is centred on 0 to within one spacing.
    pub fn is_symmetric(&self) -> bool {
        (self.lower + self.upper).abs() <= self.spacing()
    }

    /// Number of independent samples: `n - 1` on periodic axes, `n` otherwise.
    pub fn independent(&self) -> usize {
        if self.is_periodic() {
            self.n - 1
        } else {
            self.n
        }
    }
}

/// A 1D or 2D uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    axes: Vec<Axis>,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::InvalidGrid(format!(
                "only 1D and 2D grids are supported, got {}D",
                axes.len()
            )));
        }
        Ok(Self { axes })
    }

    pub fn line(n: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![Axis::new(n, lower, upper, Topology::Truncated)?])
    }

    pub fn torus(n: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![Axis::new(n, lower, upper, Topology::Periodic)?])
    }

    /// The paper's standard torus `(-pi/2, pi/2]` of side length pi.
    pub fn torus_pi(n: usize) -> Result<Self> {
        use std::f64::consts::FRAC_PI_2;
        Self::torus(n, -FRAC_PI_2, FRAC_PI_2)
    }

    /// Square 2D torus with `n` nodes per side.
    pub fn torus2_pi(n: usize) -> Result<Self> {
        use std::f64::consts::FRAC_PI_2;
        let ax = Axis::new(n, -FRAC_PI_2, FRAC_PI_2, Topology::Periodic)?;
        Self::new(vec![ax.clone(), ax])
    }

    pub fn product(ax0: Axis, ax1: Axis) -> Result<Self> {
        Self::new(vec![ax0, ax1])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, i: usize) -> &Axis {
        &self.axes[i]
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    /// Total number of stored nodes.
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Product of spacings, the volume element of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.spacing()).product()
    }

    /// Domain volume (product of side lengths).
    pub fn volume(&self) -> f64 {
        self.axes.iter().map(|a| a.length()).product()
    }

    pub fn same_domain(&self, other: &GridSpec) -> bool {
        self.dim() == other.dim()
            && self
                .axes
                .iter()
                .zip(&other.axes)
                .all(|(a, b)| {
                    let tol = 1e-12 * a.length().abs().max(1.0);
                    (a.lower - b.lower).abs() <= tol
                        && (a.upper - b.upper).abs() <= tol
                        && a.topology == b.topology
                })
    }

    /// Flat index for a 2D grid, x-major: `idx = ix * n1 + iy`.
    pub fn index2(&self, ix: usize, iy: usize) -> usize {
        debug_assert_eq!(self.dim(), 2);
        ix * self.axes[1].n + iy
    }
}

/// Real-valued samples of a function on a grid, stored row-major (x-major in 2D).
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch {
                context: format!("{} values on a {}-node grid", values.len(), grid.len()),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: &GridSpec, c: f64) -> Self {
        Self { grid: grid.clone(), values: vec![c; grid.len()] }
    }

    pub fn zeros(grid: &GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Sample a function of one variable on a 1D grid.
    pub fn from_fn_1d(grid: &GridSpec, f: impl Fn(f64) -> f64) -> Self {
        debug_assert_eq!(grid.dim(), 1);
        let ax = grid.axis(0);
        let values = (0..ax.n).map(|j| f(ax.node(j))).collect();
        Self { grid: grid.clone(), values }
    }

    /// Sample a function of two variables on a 2D grid.
    pub fn from_fn_2d(grid: &GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(grid.dim(), 2);
        let (ax, ay) = (grid.axis(0), grid.axis(1));
        let mut values = Vec::with_capacity(grid.len());
        for ix in 0..ax.n {
            let x = ax.node(ix);
            for iy in 0..ay.n {
                values.push(f(x, ay.node(iy)));
            }
        }
        Self { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at2(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.grid.index2(ix, iy)]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Restore the duplicated periodic edges from the independent block
    /// (last node of each periodic axis set equal to the first).
    pub fn enforce_periodic_edges(&mut self) {
        match self.grid.dim() {
            1 => {
                if self.grid.axis(0).is_periodic() {
                    self.values[self.grid.axis(0).n - 1] = self.values[0];
                }
            }
            2 => {
                let (n0, n1) = (self.grid.axis(0).n, self.grid.axis(1).n);
                if self.grid.axis(1).is_periodic() {
                    for ix in 0..n0 {
                        self.values[ix * n1 + n1 - 1] = self.values[ix * n1];
                    }
                }
                if self.grid.axis(0).is_periodic() {
                    for iy in 0..n1 {
                        self.values[(n0 - 1) * n1 + iy] = self.values[iy];
                    }
                }
            }
            _ => unreachable!(),
        }
    }
}

impl std::ops::Add<&Field> for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        debug_assert_eq!(self.grid, rhs.grid);
        Field {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&rhs.values)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl std::ops::Sub<&Field> for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        debug_assert_eq!(self.grid, rhs.grid);
        Field {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&rhs.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl std::ops::Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, s: f64) -> Field {
        self.map(|v| v * s)
    }
}

/// Composite Simpson 1/3 weights for one axis: `dx/3 * [1, 4, 2, ..., 2, 4, 1]`.
fn simpson_weights(axis: &Axis, which: usize) -> Result<Vec<f64>> {
    if axis.n % 2 == 0 {
        return Err(Error::EvenPoints { axis: which, n: axis.n });
    }
    let h = axis.spacing();
    let mut w = vec![0.0; axis.n];
    w[0] = h / 3.0;
    w[axis.n - 1] = h / 3.0;
    for (j, wj) in w.iter_mut().enumerate().take(axis.n - 1).skip(1) {
        *wj = if j % 2 == 1 { 4.0 * h / 3.0 } else { 2.0 * h / 3.0 };
    }
    Ok(w)
}

/// Composite Simpson 1/3 approximation of the integral of `f` over its domain,
/// tensorised per axis in 2D. Requires an odd node count on every axis.
pub fn integrate(f: &Field) -> Result<f64> {
    let grid = f.grid();
    match grid.dim() {
        1 => {
            let w = simpson_weights(grid.axis(0), 0)?;
            Ok(w.iter().zip(f.values()).map(|(w, v)| w * v).sum())
        }
        2 => {
            let wx = simpson_weights(grid.axis(0), 0)?;
            let wy = simpson_weights(grid.axis(1), 1)?;
            let n1 = grid.axis(1).n;
            let mut total = 0.0;
            for (ix, wxi) in wx.iter().enumerate() {
                let row = &f.values()[ix * n1..(ix + 1) * n1];
                let s: f64 = wy.iter().zip(row).map(|(w, v)| w * v).sum();
                total += wxi * s;
            }
            Ok(total)
        }
        _ => unreachable!(),
    }
}

/// Simpson integral along the second axis only: returns, for every node of
/// axis 0, the 1D integral over axis 1.
pub fn integrate_axis1(f: &Field, weight: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    let grid = f.grid();
    debug_assert_eq!(grid.dim(), 2);
    let wy = simpson_weights(grid.axis(1), 1)?;
    let ay = grid.axis(1);
    let wy: Vec<f64> = wy
        .iter()
        .enumerate()
        .map(|(j, w)| w * weight(ay.node(j)))
        .collect();
    let n1 = ay.n;
    Ok((0..grid.axis(0).n)
        .map(|ix| {
            let row = &f.values()[ix * n1..(ix + 1) * n1];
            wy.iter().zip(row).map(|(w, v)| w * v).sum()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormP {
    Two,
    Inf,
}

/// Plain `l^p` norm of a sample vector, `p` in {2, inf}.
pub fn norm(values: &[f64], p: NormP) -> f64 {
    match p {
        NormP::Two => values.iter().map(|v| v * v).sum::<f64>().sqrt(),
        NormP::Inf => values.iter().fold(0.0f64, |m, v| m.max(v.abs())),
    }
}

/// Norm of a field; when `weighted`, the `l^2` norm is scaled by
/// `sqrt(dx)` per axis (a discrete `L^2` proxy). The `l^inf` norm is
/// unaffected by weighting.
pub fn field_norm(f: &Field, p: NormP, weighted: bool) -> f64 {
    let base = norm(f.values(), p);
    match p {
        NormP::Two if weighted => base * f.grid().cell_volume().sqrt(),
        _ => base,
    }
}

pub fn sub_norm(a: &[f64], b: &[f64], p: NormP) -> f64 {
    match p {
        NormP::Two => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        NormP::Inf => a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())),
    }
}
