use alloc::vec::Vec;

use super::{AlignmentProblem, BinaryFactorization};
use crate::error::{Error, Result};

/// Widest row the brute-force oracle accepts (2^16 candidates).
pub const MAX_ENUMERATION_WIDTH: usize = 16;

/// Exhaustively minimizes the objective over all `2^{d_out}` sign patterns
/// of `row`, holding every other parameter fixed.
///
/// Candidates are visited in lexicographic order with −1 < +1, and only a
/// strictly smaller objective replaces the incumbent, so ties resolve to the
/// lexicographically smallest row.
pub fn oracle_row_enumeration(
    problem: &AlignmentProblem,
    f: &BinaryFactorization,
    row: usize,
) -> Result<Vec<i8>> {
    let width = f.d_out();
    if width > MAX_ENUMERATION_WIDTH {
        return Err(Error::TooLarge {
            what: "row width for enumeration",
            limit: MAX_ENUMERATION_WIDTH,
        });
    }
    if row >= f.d_in() {
        return Err(Error::InvalidArgument {
            what: "row index out of range",
        });
    }
    let mut trial = f.clone();
    let mut best: Option<(f64, Vec<i8>)> = None;
    for pattern in 0u32..(1u32 << width) {
        let candidate: Vec<i8> = (0..width)
            .map(|k| {
                if pattern >> (width - 1 - k) & 1 == 1 {
                    1
                } else {
                    -1
                }
            })
            .collect();
        trial.signs.set_row(row, &candidate);
        let value = problem.objective(&trial);
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, candidate));
        }
    }
    Ok(best.map(|(_, r)| r).unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factorization::{EffectiveGrams, SignMatrix};
    use crate::numerics::DenseMatrix;
    use alloc::vec;

    #[test]
    fn single_column_picks_better_sign() {
        let w = DenseMatrix::from_rows(&[[-2.0], [1.0]]);
        let p = AlignmentProblem::new(w, EffectiveGrams::identity(2)).unwrap();
        let f = BinaryFactorization::new(vec![1.0, 1.0], vec![1.0], SignMatrix::ones(2, 1))
            .unwrap();
        assert_eq!(oracle_row_enumeration(&p, &f, 0).unwrap(), [-1]);
        assert_eq!(oracle_row_enumeration(&p, &f, 1).unwrap(), [1]);
    }

    #[test]
    fn rejects_wide_rows() {
        let w = DenseMatrix::zeros(1, 17);
        let p = AlignmentProblem::new(w.clone(), EffectiveGrams::identity(1)).unwrap();
        let f = BinaryFactorization::init_from_weight(&w);
        assert!(matches!(
            oracle_row_enumeration(&p, &f, 0),
            Err(Error::TooLarge { .. })
        ));
    }
}
