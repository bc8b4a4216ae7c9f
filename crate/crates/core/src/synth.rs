//! Deterministic synthetic weights and calibration activations.
//!
//! Randomness comes from SplitMix64: the state advances by the constant
//! `0x9E3779B97F4A7C15` per draw and each output is a fixed bit-mixing of
//! the state, so the stream is a pure function of the seed on every platform.
//! Uniforms use the top 53 bits, mapped to `(0, 1]`. Normals come from
//! Box–Muller on consecutive uniform pairs `(u1, u2)`, yielding
//! `√(−2 ln u1)·cos(2πu2)` then `√(−2 ln u1)·sin(2πu2)`. Transcendentals come
//! from `libm`, which is pure software and platform independent.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::math;
use crate::numerics::DenseMatrix;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
    spare: Option<f64>,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self {
            state: seed,
            spare: None,
        }
    }

    /// Independent stream derived from `(seed, stream)`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut base = Self::new(seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
        let s = base.next_u64();
        Self::new(s)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform on `(0, 1]`.
    pub fn next_unit(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.next_unit();
        let u2 = self.next_unit();
        let r = math::sqrt(-2.0 * math::ln(u1));
        let theta = 2.0 * PI * u2;
        self.spare = Some(r * math::sin(theta));
        r * math::cos(theta)
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| self.next_normal())
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_normal()).collect()
    }
}

/// One synthetic layer problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthInstance {
    pub weight: DenseMatrix,
    pub x: DenseMatrix,
    pub x_hat: DenseMatrix,
}

/// `W ~ N(0,1)^{d_in×d_out}`, `X ~ N(0,1)^{n×d_in}`, `X̂ = X + noise·E`.
///
/// Draw order is fixed: all of `W` row-major, then `X`, then `E`.
pub fn synth_instance(seed: u64, d_in: usize, d_out: usize, n: usize, noise: f64) -> SynthInstance {
    let mut rng = SplitMix64::new(seed);
    let weight = rng.normal_matrix(d_in, d_out);
    let x = rng.normal_matrix(n, d_in);
    let x_hat = if noise == 0.0 {
        x.clone()
    } else {
        let e = rng.normal_matrix(n, d_in);
        x.add(&e.scale(noise)).expect("same shape")
    };
    SynthInstance { weight, x, x_hat }
}
