//! Dense kernels, Gram accumulation and least squares.

mod gram;
mod lstsq;
mod matrix;

pub use gram::{amp_gram, GramAccumulator, GramBundle};
pub use lstsq::{lstsq_solve, singular_values, svd, Svd, RANK_TOLERANCE};
pub use matrix::{dot, norm, DenseMatrix};
