//! Vertex-centered uniform grid on the unit square with trapezoidal quadrature.
//!
//! Node `(i, j)` sits at `(i*hx, j*hy)` and is stored at index `j*nx + i`.
//! The quadrature weight of a node is `hx*hy` scaled by ½ per rim side it
//! touches, so constants integrate exactly and the discrete inner product is
//! symmetric.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 nodes per axis, got {nx}x{ny}"
            )));
        }
        Ok(Self {
            nx,
            ny,
            hx: 1.0 / (nx - 1) as f64,
            hy: 1.0 / (ny - 1) as f64,
        })
    }

    /// Square grid with `n` nodes per axis.
    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    #[inline]
    pub fn coords(&self, k: usize) -> [f64; 2] {
        let (i, j) = self.ij(k);
        [i as f64 * self.hx, j as f64 * self.hy]
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        let (i, j) = self.ij(k);
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&k| self.is_boundary(k))
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&k| !self.is_boundary(k))
    }

    #[inline]
    fn edge_factor(idx: usize, n: usize) -> f64 {
        if idx == 0 || idx == n - 1 {
            0.5
        } else {
            1.0
        }
    }

    /// Trapezoidal area weight of node `k`.
    #[inline]
    pub fn weight(&self, k: usize) -> f64 {
        let (i, j) = self.ij(k);
        self.hx * self.hy * Self::edge_factor(i, self.nx) * Self::edge_factor(j, self.ny)
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.weight(k)).collect()
    }

    /// One-dimensional trapezoidal weight of node `k` on the rim; corners
    /// collect a half segment from each adjacent side. Interior nodes get 0.
    pub fn boundary_weight(&self, k: usize) -> f64 {
        let (i, j) = self.ij(k);
        let mut w = 0.0;
        if j == 0 || j == self.ny - 1 {
            w += self.hx * Self::edge_factor(i, self.nx);
        }
        if i == 0 || i == self.nx - 1 {
            w += self.hy * Self::edge_factor(j, self.ny);
        }
        w
    }

    pub fn measure(&self) -> f64 {
        1.0
    }

    pub(crate) fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self.nx != other.nx || self.ny != other.ny {
            return Err(Error::GridMismatch {
                left_nx: self.nx,
                left_ny: self.ny,
                right_nx: other.nx,
                right_ny: other.ny,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L1,
    L2,
    Linf,
}

/// Nodal values on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::FieldLength {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node });
        }
        Ok(Self { grid, values })
    }

    /// Caller guarantees length and finiteness.
    pub(crate) fn from_vec_unchecked(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|k| f(grid.coords(k))).collect();
        Self { grid, values }
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

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &ScalarField) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &ScalarField) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// `self + c * other`
    pub fn axpy(&self, c: f64, other: &ScalarField) -> Result<Self> {
        self.zip_map(other, |a, b| a + c * b)
    }

    pub fn norm(&self, kind: NormKind) -> f64 {
        norm(self, kind)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest nodal gradient magnitude estimated by one-sided differences.
    pub fn max_gradient(&self) -> f64 {
        let g = &self.grid;
        let mut best: f64 = 0.0;
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                let k = g.index(i, j);
                let dx = if i + 1 < g.nx() {
                    (self.values[k + 1] - self.values[k]) / g.hx()
                } else {
                    (self.values[k] - self.values[k - 1]) / g.hx()
                };
                let dy = if j + 1 < g.ny() {
                    (self.values[k + g.nx()] - self.values[k]) / g.hy()
                } else {
                    (self.values[k] - self.values[k - g.nx()]) / g.hy()
                };
                best = best.max(dx.hypot(dy));
            }
        }
        best
    }
}

/// Discrete `L1`/`L2` norm by trapezoidal quadrature, or the nodal max.
pub fn norm(field: &ScalarField, kind: NormKind) -> f64 {
    let g = field.grid();
    match kind {
        NormKind::L1 => field
            .values()
            .iter()
            .enumerate()
            .map(|(k, v)| g.weight(k) * v.abs())
            .sum(),
        NormKind::L2 => field
            .values()
            .iter()
            .enumerate()
            .map(|(k, v)| g.weight(k) * v * v)
            .sum::<f64>()
            .sqrt(),
        NormKind::Linf => field.max_abs(),
    }
}

/// Quadrature-weighted dot product, the discrete `∫ f g dx`.
pub fn inner_product(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    f.grid().check_same(g.grid())?;
    let grid = f.grid();
    Ok(f.values()
        .iter()
        .zip(g.values())
        .enumerate()
        .map(|(k, (a, b))| grid.weight(k) * a * b)
        .sum())
}

/// Quadrature measure of the nodes where `|sigma| <= eps`.
pub fn measure_level_set(sigma: &ScalarField, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "level-set threshold must be positive, got {eps}"
        )));
    }
    let g = sigma.grid();
    Ok(sigma
        .values()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() <= eps)
        .map(|(k, _)| g.weight(k))
        .sum())
}
