//! Attention-matrix preservation.
//!
//! The token-similarity proxy `Tr[Ŵᵀ·M·Ŵ]` with `M = S·W·Wᵀ·Sᵀ` should not
//! shrink while the alignment objective is being minimized. Each closed-form
//! proposal is therefore filtered coordinate by coordinate against the sign
//! of the proxy's gradient.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::factorization::BinaryFactorization;
use crate::math::sign;
use crate::numerics::DenseMatrix;

/// How raw gradient signs turn into `{0, 1}` update selectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AmpPolicy {
    /// Every coordinate updates.
    Off,
    /// A coordinate updates only if its move agrees with the ascent direction
    /// of the proxy (or the gradient is zero).
    #[default]
    Agreement,
    /// A coordinate updates iff its raw sign is non-negative.
    Heaviside,
}

impl AmpPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            AmpPolicy::Off => "off",
            AmpPolicy::Agreement => "agreement",
            AmpPolicy::Heaviside => "heaviside",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "off" => Some(AmpPolicy::Off),
            "agreement" => Some(AmpPolicy::Agreement),
            "heaviside" => Some(AmpPolicy::Heaviside),
            _ => None,
        }
    }
}

/// Signs (−1/0/+1) of the proxy gradient for every parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMasks {
    pub r: Vec<i8>,
    pub c: Vec<i8>,
    /// Row-major `d_in × d_out`.
    pub b: Vec<i8>,
    d_out: usize,
}

impl RawMasks {
    pub fn b_at(&self, i: usize, j: usize) -> i8 {
        self.b[i * self.d_out + j]
    }

    pub fn b_row(&self, i: usize) -> &[i8] {
        &self.b[i * self.d_out..(i + 1) * self.d_out]
    }
}

/// Full gradient of [`amp_objective`].
#[derive(Debug, Clone, PartialEq)]
pub struct AmpGradients {
    pub r: Vec<f64>,
    pub c: Vec<f64>,
    pub b: DenseMatrix,
}

/// A closed-form proposal for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub enum Proposal {
    AlphaR(Vec<f64>),
    AlphaC(Vec<f64>),
    BRow { row: usize, signs: Vec<i8> },
}

impl Proposal {
    pub fn len(&self) -> usize {
        match self {
            Proposal::AlphaR(v) | Proposal::AlphaC(v) => v.len(),
            Proposal::BRow { signs, .. } => signs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_m(f: &BinaryFactorization, m: &DenseMatrix) -> Result<()> {
    if m.shape() != (f.d_in(), f.d_in()) {
        return Err(Error::DimensionMismatch {
            op: "amp",
            left: m.shape(),
            right: (f.d_in(), f.d_out()),
        });
    }
    Ok(())
}

/// `Tr[Ŵᵀ·M·Ŵ]`.
pub fn amp_objective(f: &BinaryFactorization, m: &DenseMatrix) -> Result<f64> {
    check_m(f, m)?;
    let w_hat = f.reconstruct();
    m.matmul(&w_hat)?.frobenius_dot(&w_hat)
}

/// `∂/∂B = 2·diag(α_r)·M·Ŵ·diag(α_c)`, `∂/∂α_r = 2·Diag(M·Ŵ·diag(α_c)·Bᵀ)`,
/// `∂/∂α_c = 2·Diag(Bᵀ·diag(α_r)·M·Ŵ)`.
pub fn amp_gradients(f: &BinaryFactorization, m: &DenseMatrix) -> Result<AmpGradients> {
    check_m(f, m)?;
    let mw = m.matmul(&f.reconstruct())?;
    let (d_in, d_out) = (f.d_in(), f.d_out());
    let b = DenseMatrix::from_fn(d_in, d_out, |i, j| {
        2.0 * f.alpha_r[i] * mw[(i, j)] * f.alpha_c[j]
    });
    let r = (0..d_in)
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..d_out {
                acc += mw[(i, j)] * f.alpha_c[j] * f.signs.value(i, j);
            }
            2.0 * acc
        })
        .collect();
    let c = (0..d_out)
        .map(|j| {
            let mut acc = 0.0;
            for i in 0..d_in {
                acc += f.signs.value(i, j) * f.alpha_r[i] * mw[(i, j)];
            }
            2.0 * acc
        })
        .collect();
    Ok(AmpGradients { r, c, b })
}

/// Raw masks: entrywise signs of [`amp_gradients`].
pub fn amp_raw_masks(f: &BinaryFactorization, m: &DenseMatrix) -> Result<RawMasks> {
    let g = amp_gradients(f, m)?;
    Ok(RawMasks {
        r: g.r.iter().map(|&v| sign(v)).collect(),
        c: g.c.iter().map(|&v| sign(v)).collect(),
        b: g.b.as_slice().iter().map(|&v| sign(v)).collect(),
        d_out: f.d_out(),
    })
}

/// `{0, 1}` selectors for each coordinate of `proposal`.
pub fn select(
    raw: &RawMasks,
    proposal: &Proposal,
    current: &BinaryFactorization,
    policy: AmpPolicy,
) -> Vec<u8> {
    let n = proposal.len();
    match policy {
        AmpPolicy::Off => alloc::vec![1; n],
        AmpPolicy::Heaviside => {
            let raws: &[i8] = match proposal {
                Proposal::AlphaR(_) => &raw.r,
                Proposal::AlphaC(_) => &raw.c,
                Proposal::BRow { row, .. } => raw.b_row(*row),
            };
            raws.iter().map(|&s| u8::from(s >= 0)).collect()
        }
        AmpPolicy::Agreement => match proposal {
            Proposal::AlphaR(p) => agree_scales(p, &current.alpha_r, &raw.r),
            Proposal::AlphaC(p) => agree_scales(p, &current.alpha_c, &raw.c),
            Proposal::BRow { row, signs } => raw
                .b_row(*row)
                .iter()
                .zip(signs)
                .map(|(&r, &s)| u8::from(r == 0 || r == s))
                .collect(),
        },
    }
}

fn agree_scales(proposed: &[f64], current: &[f64], raw: &[i8]) -> Vec<u8> {
    proposed
        .iter()
        .zip(current)
        .zip(raw)
        .map(|((&p, &c), &r)| {
            let step = sign(p - c);
            u8::from(step == 0 || r == 0 || step == r)
        })
        .collect()
}

/// Takes proposed values where the selector is 1 and keeps the incumbent elsewhere.
pub fn masked_update(
    f: &BinaryFactorization,
    proposal: &Proposal,
    selectors: &[u8],
) -> BinaryFactorization {
    assert_eq!(proposal.len(), selectors.len(), "selector length");
    let mut out = f.clone();
    let blend = |dst: &mut [f64], src: &[f64]| {
        for ((d, &s), &m) in dst.iter_mut().zip(src).zip(selectors) {
            if m == 1 {
                *d = s;
            }
        }
    };
    match proposal {
        Proposal::AlphaR(p) => blend(&mut out.alpha_r, p),
        Proposal::AlphaC(p) => blend(&mut out.alpha_c, p),
        Proposal::BRow { row, signs } => {
            let mut new_row = f.signs.row(*row).to_vec();
            for ((d, &s), &m) in new_row.iter_mut().zip(signs).zip(selectors) {
                if m == 1 {
                    *d = s;
                }
            }
            out.signs.set_row(*row, &new_row);
        }
    }
    out
}

/// Fraction of selectors equal to 1 (1.0 for an empty proposal).
pub fn acceptance_ratio(selectors: &[u8]) -> f64 {
    if selectors.is_empty() {
        return 1.0;
    }
    selectors.iter().map(|&s| s as usize).sum::<usize>() as f64 / selectors.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factorization::SignMatrix;
    use alloc::vec;

    fn state() -> BinaryFactorization {
        BinaryFactorization::new(
            vec![1.0, 2.0],
            vec![0.5, 3.0],
            SignMatrix::from_vec(2, 2, vec![1, -1, -1, 1]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn objective_with_identity_is_frobenius() {
        let f = state();
        let v = amp_objective(&f, &DenseMatrix::identity(2)).unwrap();
        assert!((v - f.reconstruct().frobenius_norm_sq()).abs() < 1e-12);
        let mut z = f.clone();
        z.alpha_c = vec![0.0; 2];
        assert_eq!(amp_objective(&z, &DenseMatrix::identity(2)).unwrap(), 0.0);
    }

    #[test]
    fn identity_m_raw_b_is_current_signs() {
        let f = state();
        let raw = amp_raw_masks(&f, &DenseMatrix::identity(2)).unwrap();
        assert_eq!(raw.b, f.signs.as_slice());
    }

    #[test]
    fn zero_weight_has_zero_raws() {
        let mut f = state();
        f.alpha_r = vec![0.0; 2];
        let raw = amp_raw_masks(&f, &DenseMatrix::identity(2)).unwrap();
        assert!(raw.r.iter().chain(&raw.c).chain(&raw.b).all(|&s| s == 0));
    }

    #[test]
    fn selectors_by_policy() {
        let f = state();
        let raw = amp_raw_masks(&f, &DenseMatrix::identity(2)).unwrap();
        let flipped = Proposal::BRow {
            row: 0,
            signs: vec![-1, -1],
        };
        assert_eq!(select(&raw, &flipped, &f, AmpPolicy::Off), [1, 1]);
        assert_eq!(select(&raw, &flipped, &f, AmpPolicy::Agreement), [0, 1]);
        // raw row 0 is [+1, −1]
        assert_eq!(select(&raw, &flipped, &f, AmpPolicy::Heaviside), [1, 0]);

        let zero = RawMasks {
            r: vec![0; 2],
            c: vec![0; 2],
            b: vec![0; 4],
            d_out: 2,
        };
        assert_eq!(
            select(&zero, &Proposal::AlphaR(vec![5.0, -5.0]), &f, AmpPolicy::Agreement),
            [1, 1]
        );
        assert_eq!(select(&zero, &flipped, &f, AmpPolicy::Agreement), [1, 1]);
    }

    #[test]
    fn masked_update_blends() {
        let mut f = state();
        f.alpha_r = vec![1.0, 1.0];
        let p = Proposal::AlphaR(vec![2.0, 3.0]);
        assert_eq!(masked_update(&f, &p, &[1, 0]).alpha_r, [2.0, 1.0]);
        assert_eq!(masked_update(&f, &p, &[0, 0]), f);
        assert_eq!(masked_update(&f, &p, &[1, 1]).alpha_r, [2.0, 3.0]);
        let row = Proposal::BRow {
            row: 1,
            signs: vec![1, -1],
        };
        let g = masked_update(&f, &row, &[1, 0]);
        assert_eq!(g.signs.row(1), [1, 1]);
    }

    #[test]
    fn policy_names_round_trip() {
        for p in [AmpPolicy::Off, AmpPolicy::Agreement, AmpPolicy::Heaviside] {
            assert_eq!(AmpPolicy::parse(p.as_str()), Some(p));
        }
    }
}
