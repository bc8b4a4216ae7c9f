#![allow(dead_code)]

use binquant_core::factorization::{
    AlignmentMode, AlignmentProblem, BinaryFactorization, EffectiveGrams, SignMatrix,
};
use binquant_core::numerics::{DenseMatrix, GramBundle};
use binquant_core::synth::SplitMix64;

pub const MODES: [AlignmentMode; 3] = [
    AlignmentMode::Weight,
    AlignmentMode::ActivationConditioned,
    AlignmentMode::Output,
];

/// Random layer problem with raw activations kept for direct evaluation.
pub struct Instance {
    pub w: DenseMatrix,
    pub x: DenseMatrix,
    pub x_hat: DenseMatrix,
    pub bundle: GramBundle,
    pub f: BinaryFactorization,
}

impl Instance {
    pub fn random(seed: u64, d_in: usize, d_out: usize, n: usize) -> Self {
        let mut rng = SplitMix64::new(seed);
        let w = rng.normal_matrix(d_in, d_out);
        let x = rng.normal_matrix(n, d_in);
        let e = rng.normal_matrix(n, d_in);
        let x_hat = x.add(&e.scale(0.3)).unwrap();
        let bundle = GramBundle::from_activations(&x, &x_hat).unwrap();
        let alpha_r = (0..d_in).map(|_| 0.5 + rng.next_unit()).collect();
        let alpha_c = (0..d_out).map(|_| 0.2 + rng.next_unit()).collect();
        let signs = (0..d_in * d_out)
            .map(|_| if rng.next_u64() & 1 == 0 { -1 } else { 1 })
            .collect();
        let f = BinaryFactorization::new(
            alpha_r,
            alpha_c,
            SignMatrix::from_vec(d_in, d_out, signs).unwrap(),
        )
        .unwrap();
        Self {
            w,
            x,
            x_hat,
            bundle,
            f,
        }
    }

    /// Dimensions drawn from the seed.
    pub fn random_dims(seed: u64, max_in: usize, max_out: usize, max_n: usize) -> Self {
        let mut rng = SplitMix64::new(seed ^ 0xABCDEF);
        let d_in = 1 + (rng.next_u64() as usize) % max_in;
        let d_out = 1 + (rng.next_u64() as usize) % max_out;
        let n = d_in + (rng.next_u64() as usize) % (max_n.saturating_sub(d_in) + 1);
        Self::random(seed, d_in, d_out, n.max(1))
    }

    pub fn problem(&self, mode: AlignmentMode) -> AlignmentProblem {
        AlignmentProblem::new(self.w.clone(), EffectiveGrams::resolve(&self.bundle, mode)).unwrap()
    }

    /// The objective evaluated from raw matrices, not Grams.
    pub fn direct_objective(&self, f: &BinaryFactorization, mode: AlignmentMode) -> f64 {
        let w_hat = f.reconstruct();
        match mode {
            AlignmentMode::Weight => self.w.sub(&w_hat).unwrap().frobenius_norm_sq(),
            AlignmentMode::ActivationConditioned => self
                .x_hat
                .matmul(&self.w)
                .unwrap()
                .sub(&self.x_hat.matmul(&w_hat).unwrap())
                .unwrap()
                .frobenius_norm_sq(),
            AlignmentMode::Output => self
                .x
                .matmul(&self.w)
                .unwrap()
                .sub(&self.x_hat.matmul(&w_hat).unwrap())
                .unwrap()
                .frobenius_norm_sq(),
        }
    }

    /// Target and design matrices of the mode, as raw activations.
    pub fn raw_pair(&self, mode: AlignmentMode) -> (DenseMatrix, DenseMatrix) {
        match mode {
            AlignmentMode::Weight => (self.w.clone(), DenseMatrix::identity(self.w.rows())),
            AlignmentMode::ActivationConditioned => {
                (self.x_hat.matmul(&self.w).unwrap(), self.x_hat.clone())
            }
            AlignmentMode::Output => (self.x.matmul(&self.w).unwrap(), self.x_hat.clone()),
        }
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// Central finite difference of `g` at `x` along coordinate `i`.
pub fn central_diff(x: &[f64], i: usize, h: f64, g: impl Fn(&[f64]) -> f64) -> f64 {
    let mut p = x.to_vec();
    let mut m = x.to_vec();
    p[i] += h;
    m[i] -= h;
    (g(&p) - g(&m)) / (2.0 * h)
}
