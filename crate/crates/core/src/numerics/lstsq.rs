//! Minimal-norm least squares through a one-sided Jacobi SVD.
//!
//! Hestenes' method orthogonalizes the columns of `A·V` by plane rotations
//! until every column pair is numerically orthogonal. The column norms are
//! then the singular values, and `x = V·Σ⁺·Uᵀ·b` with small singular values
//! dropped gives the minimal-norm minimizer of `‖A·x − b‖₂`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::numerics::{dot, DenseMatrix};

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

const MAX_SWEEPS: usize = 80;

/// Thin SVD `A = U·diag(σ)·Vᵀ` of an `m × n` matrix with `m ≥ n`.
///
/// `u` is stored column-major as `n` columns of length `m`; a column is
/// zero when its singular value is exactly zero.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u_cols: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    pub v: DenseMatrix,
}

pub fn svd(a: &DenseMatrix) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::NonFinite { what: "svd input" });
    }
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::DimensionMismatch {
            op: "svd (requires rows >= cols)",
            left: a.shape(),
            right: (n, m),
        });
    }
    // Work on columns as contiguous vectors.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v = DenseMatrix::identity(n);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * math::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + math::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / math::sqrt(1.0 + t * t);
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
                for i in 0..n {
                    let (vp, vq) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigma = Vec::with_capacity(n);
    for col in cols.iter_mut() {
        let s = math::sqrt(dot(col, col));
        sigma.push(s);
        if s > 0.0 {
            for x in col.iter_mut() {
                *x /= s;
            }
        }
    }
    Ok(Svd {
        u_cols: cols,
        sigma,
        v,
    })
}

/// Minimal-norm solution of `min ‖A·x − b‖₂` for square `A`.
pub fn lstsq_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if a.rows() != a.cols() || a.rows() != b.len() {
        return Err(Error::DimensionMismatch {
            op: "lstsq_solve",
            left: a.shape(),
            right: (b.len(), 1),
        });
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "lstsq rhs" });
    }
    let dec = svd(a)?;
    let n = a.cols();
    let s_max = dec.sigma.iter().cloned().fold(0.0, f64::max);
    let cutoff = RANK_TOLERANCE * s_max;
    let mut x = alloc::vec![0.0; n];
    for k in 0..n {
        let s = dec.sigma[k];
        if s <= cutoff || s == 0.0 {
            continue;
        }
        let coeff = dot(&dec.u_cols[k], b) / s;
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += dec.v[(i, k)] * coeff;
        }
    }
    Ok(x)
}

/// Singular values of `a`, unsorted.
pub fn singular_values(a: &DenseMatrix) -> Result<Vec<f64>> {
    Ok(svd(a)?.sigma)
}
