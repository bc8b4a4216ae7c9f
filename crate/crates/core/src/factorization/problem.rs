use alloc::vec;
use alloc::vec::Vec;

use super::{BinaryFactorization, EffectiveGrams, SignMatrix};
use crate::error::{Error, Result};
use crate::math::sign;
use crate::numerics::{lstsq_solve, DenseMatrix};

/// Column-scale denominators below this fraction of the largest are degenerate.
pub const ALPHA_C_DEGENERATE_RATIO: f64 = 1e-12;

/// One layer (or column block) objective
/// `L = Tr[S_ff·W·Wᵀ] − 2·Tr[S·W·Ŵᵀ] + Tr[Ŝ·Ŵ·Ŵᵀ]`
/// with the Grams already resolved for an alignment mode.
#[derive(Debug, Clone)]
pub struct AlignmentProblem {
    weight: DenseMatrix,
    grams: EffectiveGrams,
    /// `S·W`, reused by every refiner.
    sw: DenseMatrix,
    /// `Tr[S_ff·W·Wᵀ]`.
    target_energy: f64,
}

/// Result of the closed-form column-scale update.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaCUpdate {
    pub alpha_c: Vec<f64>,
    /// Coordinates that kept their previous value because the denominator vanished.
    pub fallbacks: usize,
}

/// How the sign-row refiner picks the row to update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RowSelection {
    /// Row whose exact minimization lowers the objective the most.
    #[default]
    Gain,
    /// Row maximizing `Σ_k B[j,k]·scores[j,k]`.
    Agreement,
}

impl RowSelection {
    pub fn as_str(self) -> &'static str {
        match self {
            RowSelection::Gain => "gain",
            RowSelection::Agreement => "agreement",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gain" => Some(RowSelection::Gain),
            "agreement" => Some(RowSelection::Agreement),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowScores {
    /// Row-linear coefficients: with all other rows fixed, the objective
    /// restricted to row `i` is `Σ_k scores[i,k]·B[i,k] + const`.
    pub scores: DenseMatrix,
    pub row: usize,
}

/// Intermediate matrices shared by the sign and row-scale refiners.
#[derive(Debug, Clone)]
pub struct RefinerWorkspace {
    /// `diag(α_r)·Ŝ·diag(α_r)`.
    pub n: DenseMatrix,
    /// `n` with its diagonal zeroed.
    pub n_f: DenseMatrix,
    /// Diagonal of `K = diag(α_c ⊙ α_c)`.
    pub k: Vec<f64>,
    /// `diag(α_r)·S·W·diag(α_c)`.
    pub p: DenseMatrix,
    /// `B·diag(α_c ⊙ α_c)·Bᵀ`.
    pub c: DenseMatrix,
}

impl AlignmentProblem {
    pub fn new(weight: DenseMatrix, grams: EffectiveGrams) -> Result<Self> {
        let d_in = grams.dim();
        for m in [&grams.s, &grams.s_hat, &grams.s_ff] {
            if m.shape() != (d_in, d_in) {
                return Err(Error::DimensionMismatch {
                    op: "AlignmentProblem grams",
                    left: (d_in, d_in),
                    right: m.shape(),
                });
            }
        }
        if weight.rows() != d_in {
            return Err(Error::DimensionMismatch {
                op: "AlignmentProblem weight",
                left: (d_in, d_in),
                right: weight.shape(),
            });
        }
        if !weight.is_finite() {
            return Err(Error::NonFinite { what: "weight" });
        }
        let sw = grams.s.matmul(&weight)?;
        let target_energy = grams.s_ff.matmul(&weight)?.frobenius_dot(&weight)?;
        Ok(Self {
            weight,
            grams,
            sw,
            target_energy,
        })
    }

    pub fn weight(&self) -> &DenseMatrix {
        &self.weight
    }

    pub fn grams(&self) -> &EffectiveGrams {
        &self.grams
    }

    pub fn d_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.cols()
    }

    /// `Tr[S_ff·W·Wᵀ]`, the objective at `Ŵ = 0`.
    pub fn target_energy(&self) -> f64 {
        self.target_energy
    }

    fn check(&self, f: &BinaryFactorization) {
        assert_eq!(
            (f.d_in(), f.d_out()),
            self.weight.shape(),
            "factorization shape does not match the weight"
        );
    }

    pub fn objective(&self, f: &BinaryFactorization) -> f64 {
        self.check(f);
        let w_hat = f.reconstruct();
        let cross = self.sw.frobenius_dot(&w_hat).expect("shape");
        let quad = self
            .grams
            .s_hat
            .matmul(&w_hat)
            .expect("shape")
            .frobenius_dot(&w_hat)
            .expect("shape");
        self.target_energy - 2.0 * cross + quad
    }

    /// `S·W − Ŝ·Ŵ`; the gradients below are all contractions of it.
    fn residual_gram(&self, f: &BinaryFactorization) -> DenseMatrix {
        let w_hat = f.reconstruct();
        self.sw
            .sub(&self.grams.s_hat.matmul(&w_hat).expect("shape"))
            .expect("shape")
    }

    /// `∂L/∂α_r = −2·Diag(X̂ᵀ(XW − X̂Ŵ)·diag(α_c)·Bᵀ)`.
    pub fn grad_alpha_r(&self, f: &BinaryFactorization) -> Vec<f64> {
        self.check(f);
        let r = self.residual_gram(f);
        (0..f.d_in())
            .map(|i| {
                let mut acc = 0.0;
                for j in 0..f.d_out() {
                    acc += r[(i, j)] * f.alpha_c[j] * f.signs.value(i, j);
                }
                -2.0 * acc
            })
            .collect()
    }

    /// `∂L/∂α_c = −2·Diag(Bᵀ·diag(α_r)·X̂ᵀ(XW − X̂Ŵ))`.
    pub fn grad_alpha_c(&self, f: &BinaryFactorization) -> Vec<f64> {
        self.check(f);
        let r = self.residual_gram(f);
        (0..f.d_out())
            .map(|j| {
                let mut acc = 0.0;
                for i in 0..f.d_in() {
                    acc += f.signs.value(i, j) * f.alpha_r[i] * r[(i, j)];
                }
                -2.0 * acc
            })
            .collect()
    }

    /// Gradient with respect to `B` treated as a real matrix.
    pub fn grad_signs(&self, f: &BinaryFactorization) -> DenseMatrix {
        self.check(f);
        let r = self.residual_gram(f);
        DenseMatrix::from_fn(f.d_in(), f.d_out(), |i, j| {
            -2.0 * f.alpha_r[i] * r[(i, j)] * f.alpha_c[j]
        })
    }

    pub fn workspace(&self, f: &BinaryFactorization) -> RefinerWorkspace {
        self.check(f);
        let n = self.grams.s_hat.scale_rows_cols(&f.alpha_r, &f.alpha_r);
        let mut n_f = n.clone();
        for i in 0..n_f.rows() {
            n_f[(i, i)] = 0.0;
        }
        let k: Vec<f64> = f.alpha_c.iter().map(|a| a * a).collect();
        let p = self.sw.scale_rows_cols(&f.alpha_r, &f.alpha_c);
        let bk = DenseMatrix::from_fn(f.d_in(), f.d_out(), |i, j| f.signs.value(i, j) * k[j]);
        let c = bk.matmul_t(&f.signs.to_dense()).expect("shape");
        RefinerWorkspace { n, n_f, k, p, c }
    }

    /// Closed-form column scales
    /// `Diag(Bᵀ·diag(α_r)·S·W) / Diag(Bᵀ·diag(α_r)·Ŝ·diag(α_r)·B)`.
    ///
    /// The objective is separable over columns, so this is the exact
    /// minimizer in `α_c`. Degenerate denominators keep the old value.
    pub fn refine_alpha_c(&self, f: &BinaryFactorization) -> AlphaCUpdate {
        self.check(f);
        let (d_in, d_out) = (f.d_in(), f.d_out());
        let rb = DenseMatrix::from_fn(d_in, d_out, |i, j| f.alpha_r[i] * f.signs.value(i, j));
        let s_hat_rb = self.grams.s_hat.matmul(&rb).expect("shape");
        let mut num = vec![0.0; d_out];
        let mut den = vec![0.0; d_out];
        for i in 0..d_in {
            for j in 0..d_out {
                num[j] += rb[(i, j)] * self.sw[(i, j)];
                den[j] += rb[(i, j)] * s_hat_rb[(i, j)];
            }
        }
        let max_den = den.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let floor = ALPHA_C_DEGENERATE_RATIO * max_den;
        let mut fallbacks = 0;
        let alpha_c = (0..d_out)
            .map(|j| {
                let ratio = num[j] / den[j];
                if max_den == 0.0 || den[j].abs() < floor || !ratio.is_finite() {
                    fallbacks += 1;
                    f.alpha_c[j]
                } else {
                    ratio
                }
            })
            .collect();
        AlphaCUpdate { alpha_c, fallbacks }
    }

    /// Row scales from `(Ŝ ⊙ C)·α_r = Diag(S·W·diag(α_c)·Bᵀ)` with
    /// `C = B·diag(α_c ⊙ α_c)·Bᵀ`, solved in the minimal-norm least-squares sense.
    pub fn refine_alpha_r(&self, f: &BinaryFactorization) -> Result<Vec<f64>> {
        let ws = self.workspace(f);
        let system = self.grams.s_hat.hadamard(&ws.c)?;
        let rhs = self.alpha_r_rhs(f);
        lstsq_solve(&system, &rhs)
    }

    /// `Ŝ ⊙ C` for the current state.
    pub fn alpha_r_system(&self, f: &BinaryFactorization) -> DenseMatrix {
        let ws = self.workspace(f);
        self.grams.s_hat.hadamard(&ws.c).expect("shape")
    }

    fn alpha_r_rhs(&self, f: &BinaryFactorization) -> Vec<f64> {
        (0..f.d_in())
            .map(|i| {
                let mut acc = 0.0;
                for j in 0..f.d_out() {
                    acc += self.sw[(i, j)] * f.alpha_c[j] * f.signs.value(i, j);
                }
                acc
            })
            .collect()
    }

    /// Row-linear sign coefficients `2·N_F·B·K − 2·P` and the row to update.
    pub fn refine_b_scores(&self, f: &BinaryFactorization, selection: RowSelection) -> RowScores {
        let ws = self.workspace(f);
        let bk = DenseMatrix::from_fn(f.d_in(), f.d_out(), |i, j| f.signs.value(i, j) * ws.k[j]);
        let nfbk = ws.n_f.matmul(&bk).expect("shape");
        let scores = DenseMatrix::from_fn(f.d_in(), f.d_out(), |i, j| {
            2.0 * nfbk[(i, j)] - 2.0 * ws.p[(i, j)]
        });
        let row = select_row(&scores, &f.signs, selection);
        RowScores { scores, row }
    }

    /// Applies the row rule to every row at once against the current `B`.
    /// Not a descent step in general; cross-row terms are stale.
    pub fn refine_b_full_sweep(&self, f: &BinaryFactorization) -> SignMatrix {
        let RowScores { scores, .. } = self.refine_b_scores(f, RowSelection::Gain);
        let mut out = f.signs.clone();
        for i in 0..f.d_in() {
            out.set_row(i, &refine_b_row(f, i, &scores));
        }
        out
    }
}

fn select_row(scores: &DenseMatrix, signs: &SignMatrix, selection: RowSelection) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for j in 0..scores.rows() {
        let value: f64 = (0..scores.cols())
            .map(|k| {
                let agreement = signs.value(j, k) * scores[(j, k)];
                match selection {
                    RowSelection::Agreement => agreement,
                    RowSelection::Gain => agreement + scores[(j, k)].abs(),
                }
            })
            .sum();
        if value > best_value {
            best_value = value;
            best = j;
        }
    }
    best
}

/// Loss-minimizing signs for `row`: `−sign(scores)`, keeping the current
/// entry where the score is exactly zero.
pub fn refine_b_row(f: &BinaryFactorization, row: usize, scores: &DenseMatrix) -> Vec<i8> {
    assert!(row < f.d_in(), "row index out of range");
    (0..f.d_out())
        .map(|k| match sign(scores[(row, k)]) {
            0 => f.signs.get(row, k),
            s => -s,
        })
        .collect()
}
