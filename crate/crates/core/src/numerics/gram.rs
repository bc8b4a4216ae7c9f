use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Calibration Grams for one layer.
///
/// `s = X̂ᵀX`, `s_hat = X̂ᵀX̂`, `s_ff = XᵀX`, where `X` is the
/// full-precision input and `X̂` the input produced by the already
/// quantized prefix of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct GramBundle {
    pub s: DenseMatrix,
    pub s_hat: DenseMatrix,
    pub s_ff: DenseMatrix,
    pub n_samples: usize,
}

impl GramBundle {
    pub fn dim(&self) -> usize {
        self.s.rows()
    }

    /// Grams of a single `(X, X̂)` pair.
    pub fn from_activations(x_fp: &DenseMatrix, x_q: &DenseMatrix) -> Result<Self> {
        let mut acc = GramAccumulator::new(x_fp.cols());
        acc.accumulate(x_fp, x_q)?;
        Ok(acc.finish())
    }
}

/// Streaming accumulation of a [`GramBundle`] over calibration batches.
///
/// Batches are folded in call order; the same batch sequence always
/// produces bit-identical Grams.
#[derive(Debug, Clone)]
pub struct GramAccumulator {
    bundle: GramBundle,
}

impl GramAccumulator {
    pub fn new(d_in: usize) -> Self {
        Self {
            bundle: GramBundle {
                s: DenseMatrix::zeros(d_in, d_in),
                s_hat: DenseMatrix::zeros(d_in, d_in),
                s_ff: DenseMatrix::zeros(d_in, d_in),
                n_samples: 0,
            },
        }
    }

    pub fn accumulate(&mut self, x_fp: &DenseMatrix, x_q: &DenseMatrix) -> Result<()> {
        let d_in = self.bundle.dim();
        if x_fp.shape() != x_q.shape() || x_fp.cols() != d_in {
            return Err(Error::DimensionMismatch {
                op: "gram_accumulate",
                left: x_fp.shape(),
                right: x_q.shape(),
            });
        }
        if x_fp.rows() == 0 {
            return Err(Error::InvalidArgument {
                what: "calibration batch must have at least one row",
            });
        }
        if !x_fp.is_finite() || !x_q.is_finite() {
            return Err(Error::NonFinite {
                what: "calibration activations",
            });
        }
        self.bundle.s.add_assign(&x_q.t_matmul(x_fp)?)?;
        self.bundle.s_hat.add_assign(&x_q.t_matmul(x_q)?)?;
        self.bundle.s_ff.add_assign(&x_fp.t_matmul(x_fp)?)?;
        self.bundle.n_samples += x_fp.rows();
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.bundle.n_samples
    }

    pub fn finish(self) -> GramBundle {
        self.bundle
    }
}

/// Attention-preservation Gram `M = S·W·Wᵀ·Sᵀ`, symmetrized after the product.
pub fn amp_gram(s: &DenseMatrix, w: &DenseMatrix) -> Result<DenseMatrix> {
    if s.rows() != s.cols() || s.cols() != w.rows() {
        return Err(Error::DimensionMismatch {
            op: "amp_gram",
            left: s.shape(),
            right: w.shape(),
        });
    }
    let sw = s.matmul(w)?;
    let mut m = sw.matmul_t(&sw)?;
    m.symmetrize();
    Ok(m)
}
