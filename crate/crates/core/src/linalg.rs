//! Symmetric five-point matrices on a node grid and the two solvers used for
//! them: banded Cholesky (direct) and Jacobi-preconditioned conjugate
//! gradients (large grids).

use crate::error::{Error, Result};

/// Symmetric matrix with the sparsity of a five-point stencil. Each grid edge
/// stores a single off-diagonal value, so the matrix equals its transpose
/// bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilMatrix {
    nx: usize,
    ny: usize,
    pub(crate) diag: Vec<f64>,
    /// Coupling between node `k` and `k + 1` (unused in the last column).
    pub(crate) east: Vec<f64>,
    /// Coupling between node `k` and `k + nx` (unused in the last row).
    pub(crate) north: Vec<f64>,
}

impl StencilMatrix {
    pub(crate) fn zeros(nx: usize, ny: usize) -> Self {
        let n = nx * ny;
        Self {
            nx,
            ny,
            diag: vec![0.0; n],
            east: vec![0.0; n],
            north: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.nx * self.ny
    }

    pub fn bandwidth(&self) -> usize {
        self.nx
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Entry `(r, c)`; zero outside the stencil.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        if r == c {
            return self.diag[r];
        }
        let (lo, hi) = if r < c { (r, c) } else { (c, r) };
        if hi == lo + 1 && lo % self.nx != self.nx - 1 {
            self.east[lo]
        } else if hi == lo + self.nx {
            self.north[lo]
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..n)
            .map(|r| (0..n).map(|c| self.get(r, c)).collect())
            .collect()
    }

    /// `out = (self + diag(shift)) * x`
    pub fn matvec_shifted(&self, shift: Option<&[f64]>, x: &[f64], out: &mut [f64]) {
        let nx = self.nx;
        let n = self.dim();
        for k in 0..n {
            let mut acc = self.diag[k] * x[k];
            if let Some(s) = shift {
                acc += s[k] * x[k];
            }
            let i = k % nx;
            if i + 1 < nx {
                acc += self.east[k] * x[k + 1];
            }
            if i > 0 {
                acc += self.east[k - 1] * x[k - 1];
            }
            if k + nx < n {
                acc += self.north[k] * x[k + nx];
            }
            if k >= nx {
                acc += self.north[k - nx] * x[k - nx];
            }
            out[k] = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.matvec_shifted(None, x, &mut out);
        out
    }

    /// Row-wise sum of `|a_rc| * |x_c|`, a rounding-error scale for residuals.
    pub(crate) fn abs_matvec_shifted(&self, shift: Option<&[f64]>, x: &[f64]) -> Vec<f64> {
        let nx = self.nx;
        let n = self.dim();
        (0..n)
            .map(|k| {
                let mut acc = (self.diag[k] + shift.map_or(0.0, |s| s[k])).abs() * x[k].abs();
                let i = k % nx;
                if i + 1 < nx {
                    acc += self.east[k].abs() * x[k + 1].abs();
                }
                if i > 0 {
                    acc += self.east[k - 1].abs() * x[k - 1].abs();
                }
                if k + nx < n {
                    acc += self.north[k].abs() * x[k + nx].abs();
                }
                if k >= nx {
                    acc += self.north[k - nx].abs() * x[k - nx].abs();
                }
                acc
            })
            .collect()
    }
}

/// Cholesky factor `L` of a banded SPD matrix, stored row by row with
/// `bandwidth + 1` entries per row (`L[i][i-d]` at offset `d`).
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(matrix: &StencilMatrix, shift: Option<&[f64]>) -> Result<Self> {
        let n = matrix.dim();
        let bw = matrix.bandwidth();
        let stride = bw + 1;
        let mut band = vec![0.0; n * stride];
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut s = if i == j {
                    matrix.diag[i] + shift.map_or(0.0, |s| s[i])
                } else {
                    matrix.get(i, j)
                };
                let k0 = j0.max(j.saturating_sub(bw));
                let ri = i * stride;
                let rj = j * stride;
                for k in k0..j {
                    s -= band[ri + (i - k)] * band[rj + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::NotPositiveDefinite { row: i, pivot: s });
                    }
                    band[ri] = s.sqrt();
                } else {
                    band[ri + (i - j)] = s / band[rj];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let stride = self.bw + 1;
        // L z = b
        for i in 0..self.n {
            let ri = i * stride;
            let mut s = x[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.band[ri + (i - k)] * x[k];
            }
            x[i] = s / self.band[ri];
        }
        // L^T x = z
        for i in (0..self.n).rev() {
            let mut s = x[i];
            let kmax = (i + self.bw).min(self.n - 1);
            for k in (i + 1)..=kmax {
                s -= self.band[k * stride + (k - i)] * x[k];
            }
            x[i] = s / self.band[i * stride];
        }
    }
}

/// Jacobi-preconditioned CG on `(matrix + diag(shift)) x = rhs`, stopping at
/// `||r||_inf <= tol * ||rhs||_inf`.
pub fn conjugate_gradient(
    matrix: &StencilMatrix,
    shift: Option<&[f64]>,
    rhs: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<Vec<f64>> {
    let n = matrix.dim();
    let inv_diag: Vec<f64> = (0..n)
        .map(|k| 1.0 / (matrix.diag[k] + shift.map_or(0.0, |s| s[k])))
        .collect();
    let target = tol * rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    if target == 0.0 {
        return Ok(x);
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut res = f64::INFINITY;
    for _ in 0..max_iters {
        matrix.matvec_shifted(shift, &p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        res = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if res <= target {
            return Ok(x);
        }
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(Error::LinearSolve {
        residual: res,
        tolerance: target,
    })
}
