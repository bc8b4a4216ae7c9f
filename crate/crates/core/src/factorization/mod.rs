//! Binary factorization `Ŵ = diag(α_r)·B·diag(α_c)` and its refiners.

mod oracle;
mod problem;

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, GramBundle};

pub use oracle::{oracle_row_enumeration, MAX_ENUMERATION_WIDTH};
pub use problem::{
    refine_b_row, AlignmentProblem, AlphaCUpdate, RefinerWorkspace, RowScores, RowSelection,
    ALPHA_C_DEGENERATE_RATIO,
};

/// A `{−1, +1}` matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i8>,
}

impl SignMatrix {
    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![1; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<i8>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "SignMatrix::from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        if data.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidArgument {
                what: "sign entries must be -1 or +1",
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Entrywise sign of `m`, with zeros mapped to +1.
    pub fn sign_of(m: &DenseMatrix) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            data: m
                .as_slice()
                .iter()
                .map(|&v| if v < 0.0 { -1 } else { 1 })
                .collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> i8 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.get(i, j) as f64
    }

    pub fn row(&self, i: usize) -> &[i8] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Overwrites row `i`. Panics if `values` has the wrong length or a non-sign entry.
    pub fn set_row(&mut self, i: usize, values: &[i8]) {
        assert_eq!(values.len(), self.cols);
        assert!(values.iter().all(|&s| s == 1 || s == -1));
        self.data[i * self.cols..(i + 1) * self.cols].copy_from_slice(values);
    }

    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.rows, self.cols, |i, j| self.value(i, j))
    }
}

/// Row scales, column scales and a sign matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryFactorization {
    pub alpha_r: Vec<f64>,
    pub alpha_c: Vec<f64>,
    pub signs: SignMatrix,
}

impl BinaryFactorization {
    pub fn new(alpha_r: Vec<f64>, alpha_c: Vec<f64>, signs: SignMatrix) -> Result<Self> {
        if alpha_r.len() != signs.rows() || alpha_c.len() != signs.cols() {
            return Err(Error::DimensionMismatch {
                op: "BinaryFactorization::new",
                left: (alpha_r.len(), alpha_c.len()),
                right: (signs.rows(), signs.cols()),
            });
        }
        if alpha_r.iter().chain(&alpha_c).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "scales" });
        }
        Ok(Self {
            alpha_r,
            alpha_c,
            signs,
        })
    }

    /// `B = sign(W)` (zeros to +1), `α_r = 1`, `α_c[j] = mean |W[:, j]|`.
    pub fn init_from_weight(w: &DenseMatrix) -> Self {
        let (d_in, d_out) = w.shape();
        let alpha_c = (0..d_out)
            .map(|j| {
                if d_in == 0 {
                    0.0
                } else {
                    (0..d_in).map(|i| w[(i, j)].abs()).sum::<f64>() / d_in as f64
                }
            })
            .collect();
        Self {
            alpha_r: vec![1.0; d_in],
            alpha_c,
            signs: SignMatrix::sign_of(w),
        }
    }

    pub fn d_in(&self) -> usize {
        self.alpha_r.len()
    }

    pub fn d_out(&self) -> usize {
        self.alpha_c.len()
    }

    /// `Ŵ[i, j] = α_r[i]·B[i, j]·α_c[j]`.
    pub fn reconstruct(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.d_in(), self.d_out(), |i, j| {
            self.alpha_r[i] * self.signs.value(i, j) * self.alpha_c[j]
        })
    }
}

/// Which target the layer objective aligns to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlignmentMode {
    /// `‖W − Ŵ‖²_F`.
    Weight,
    /// `‖X̂W − X̂Ŵ‖²_F`.
    ActivationConditioned,
    /// `‖XW − X̂Ŵ‖²_F`.
    Output,
}

impl AlignmentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AlignmentMode::Weight => "weight",
            AlignmentMode::ActivationConditioned => "activation",
            AlignmentMode::Output => "output",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "weight" => Some(AlignmentMode::Weight),
            "activation" => Some(AlignmentMode::ActivationConditioned),
            "output" => Some(AlignmentMode::Output),
            _ => None,
        }
    }
}

/// Grams as seen by a particular [`AlignmentMode`].
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveGrams {
    pub s: DenseMatrix,
    pub s_hat: DenseMatrix,
    pub s_ff: DenseMatrix,
}

impl EffectiveGrams {
    pub fn identity(d_in: usize) -> Self {
        let i = DenseMatrix::identity(d_in);
        Self {
            s: i.clone(),
            s_hat: i.clone(),
            s_ff: i,
        }
    }

    /// Weight mode ignores the bundle; activation-conditioned mode uses
    /// `X̂ᵀX̂` for all three; output mode uses the bundle as accumulated.
    pub fn resolve(bundle: &GramBundle, mode: AlignmentMode) -> Self {
        match mode {
            AlignmentMode::Weight => Self::identity(bundle.dim()),
            AlignmentMode::ActivationConditioned => Self {
                s: bundle.s_hat.clone(),
                s_hat: bundle.s_hat.clone(),
                s_ff: bundle.s_hat.clone(),
            },
            AlignmentMode::Output => Self {
                s: bundle.s.clone(),
                s_hat: bundle.s_hat.clone(),
                s_ff: bundle.s_ff.clone(),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.s.rows()
    }
}
