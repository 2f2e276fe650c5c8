//! The discrete elliptic operator `-div(a grad y)` with Robin boundary
//! condition `a dy/dn + b y = 0`.
//!
//! The stiffness matrix `K` is the weak form tested with nodal weights:
//! `y^T K phi = sum_edges a_e (l_e / h_e) (y_i - y_j)(phi_i - phi_j)
//! + sum_rim b_k l_k y_k phi_k`. The strong-form action is `K y / w` with `w`
//! the trapezoidal node weights, which makes `L` self-adjoint in the discrete
//! `L2` inner product.

use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};
use crate::linalg::{conjugate_gradient, BandCholesky, StencilMatrix};

/// Relative residual target for every shifted solve.
pub const LINEAR_SOLVE_TOL: f64 = 1e-12;

/// Above this many unknowns the shifted solve switches to CG.
pub const DIRECT_SOLVE_LIMIT: usize = 100_000;

const FACTOR_CACHE: usize = 4;

pub struct EllipticOperator {
    grid: GridSpec,
    a_field: ScalarField,
    b_boundary: ScalarField,
    matrix: StencilMatrix,
    weights: Vec<f64>,
    cache: Mutex<Vec<(Vec<f64>, Arc<BandCholesky>)>>,
}

impl Clone for EllipticOperator {
    fn clone(&self) -> Self {
        Self {
            grid: self.grid,
            a_field: self.a_field.clone(),
            b_boundary: self.b_boundary.clone(),
            matrix: self.matrix.clone(),
            weights: self.weights.clone(),
            cache: Mutex::new(Vec::new()),
        }
    }
}

impl std::fmt::Debug for EllipticOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EllipticOperator")
            .field("grid", &self.grid)
            .finish_non_exhaustive()
    }
}

impl EllipticOperator {
    /// Assemble the operator. Only the rim values of `b_boundary` are read.
    pub fn assemble(
        grid: GridSpec,
        a_field: &ScalarField,
        b_boundary: &ScalarField,
    ) -> Result<Self> {
        grid.check_same(a_field.grid())?;
        grid.check_same(b_boundary.grid())?;
        if let Some((node, &value)) = a_field
            .values()
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0))
        {
            return Err(Error::Coercivity { node, value });
        }
        let mut any_positive = false;
        for k in grid.boundary_nodes() {
            let b = b_boundary.values()[k];
            if b < 0.0 {
                return Err(Error::NegativeRobin { node: k, value: b });
            }
            any_positive |= b > 0.0;
        }
        if !any_positive {
            return Err(Error::SingularRobin);
        }

        let (nx, ny) = (grid.nx(), grid.ny());
        let (hx, hy) = (grid.hx(), grid.hy());
        let a = a_field.values();
        let half = |idx: usize, n: usize| if idx == 0 || idx == n - 1 { 0.5 } else { 1.0 };
        let mut m = StencilMatrix::zeros(nx, ny);
        for j in 0..ny {
            for i in 0..nx {
                let k = grid.index(i, j);
                if i + 1 < nx {
                    let c = 0.5 * (a[k] + a[k + 1]) * hy * half(j, ny) / hx;
                    m.diag[k] += c;
                    m.diag[k + 1] += c;
                    m.east[k] = -c;
                }
                if j + 1 < ny {
                    let c = 0.5 * (a[k] + a[k + nx]) * hx * half(i, nx) / hy;
                    m.diag[k] += c;
                    m.diag[k + nx] += c;
                    m.north[k] = -c;
                }
            }
        }
        for k in grid.boundary_nodes() {
            m.diag[k] += b_boundary.values()[k] * grid.boundary_weight(k);
        }
        let mut b_rim = ScalarField::zeros(grid);
        for k in grid.boundary_nodes() {
            b_rim.values_mut()[k] = b_boundary.values()[k];
        }
        Ok(Self {
            grid,
            a_field: a_field.clone(),
            b_boundary: b_rim,
            matrix: m,
            weights: grid.weights(),
            cache: Mutex::new(Vec::new()),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn matrix(&self) -> &StencilMatrix {
        &self.matrix
    }

    pub fn a_field(&self) -> &ScalarField {
        &self.a_field
    }

    pub fn b_boundary(&self) -> &ScalarField {
        &self.b_boundary
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Strong-form action `K y / w`.
    pub fn apply(&self, y: &ScalarField) -> Result<ScalarField> {
        self.grid.check_same(y.grid())?;
        let ky = self.matrix.matvec(y.values());
        let out = ky.iter().zip(&self.weights).map(|(v, w)| v / w).collect();
        Ok(ScalarField::from_vec_unchecked(self.grid, out))
    }

    /// `L y + alpha y`
    pub fn apply_shifted(&self, alpha: &ScalarField, y: &ScalarField) -> Result<ScalarField> {
        let ly = self.apply(y)?;
        ly.zip_map(&alpha.mul(y)?, |a, b| a + b)
    }

    fn factor(&self, shift: &[f64]) -> Result<Arc<BandCholesky>> {
        {
            let cache = self.cache.lock().expect("factor cache poisoned");
            if let Some((_, f)) = cache.iter().find(|(key, _)| key.as_slice() == shift) {
                return Ok(Arc::clone(f));
            }
        }
        let f = Arc::new(BandCholesky::factor(&self.matrix, Some(shift))?);
        let mut cache = self.cache.lock().expect("factor cache poisoned");
        if cache.len() >= FACTOR_CACHE {
            cache.remove(0);
        }
        cache.push((shift.to_vec(), Arc::clone(&f)));
        Ok(f)
    }

    /// Solve `L y + alpha y = h` in weak form: `(K + W diag(alpha)) y = W h`.
    pub fn solve_shifted(&self, alpha: &ScalarField, h: &ScalarField) -> Result<ScalarField> {
        self.grid.check_same(alpha.grid())?;
        self.grid.check_same(h.grid())?;
        if let Some((node, _)) = alpha.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "shift must be nonnegative (node {node})"
            )));
        }
        let shift: Vec<f64> = alpha
            .values()
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| a * w)
            .collect();
        let rhs: Vec<f64> = h
            .values()
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| v * w)
            .collect();
        let rhs_norm = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if rhs_norm == 0.0 {
            return Ok(ScalarField::zeros(self.grid));
        }

        let n = self.grid.len();
        let y = if n <= DIRECT_SOLVE_LIMIT {
            let f = self.factor(&shift)?;
            let mut y = rhs.clone();
            f.solve_in_place(&mut y);
            // one step of iterative refinement
            let mut r = vec![0.0; n];
            self.matrix.matvec_shifted(Some(&shift), &y, &mut r);
            for k in 0..n {
                r[k] = rhs[k] - r[k];
            }
            f.solve_in_place(&mut r);
            for k in 0..n {
                y[k] += r[k];
            }
            y
        } else {
            conjugate_gradient(&self.matrix, Some(&shift), &rhs, LINEAR_SOLVE_TOL, 20 * n)?
        };

        let mut my = vec![0.0; n];
        self.matrix.matvec_shifted(Some(&shift), &y, &mut my);
        let residual = my
            .iter()
            .zip(&rhs)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        // The residual cannot be resolved below the rounding of the product
        // itself, which dominates on fine grids.
        let floor = self
            .matrix
            .abs_matvec_shifted(Some(&shift), &y)
            .iter()
            .zip(&rhs)
            .fold(0.0f64, |m, (a, b)| m.max(a + b.abs()))
            * 64.0
            * f64::EPSILON;
        let tolerance = (LINEAR_SOLVE_TOL * rhs_norm).max(floor);
        if !(residual <= tolerance) {
            return Err(Error::LinearSolve {
                residual,
                tolerance,
            });
        }
        ScalarField::new(self.grid, y)
    }
}
