use binquant_core::numerics::{lstsq_solve, norm, DenseMatrix, GramAccumulator, GramBundle};
use binquant_core::synth::SplitMix64;
use binquant_core::tensor::{TensorData, TensorFile};
use proptest::prelude::*;

fn concat_rows(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let mut data = a.as_slice().to_vec();
    data.extend_from_slice(b.as_slice());
    DenseMatrix::from_vec(a.rows() + b.rows(), a.cols(), data).unwrap()
}

#[test]
fn batched_grams_match_concatenated() {
    let mut rng = SplitMix64::new(1);
    let (x1, x2) = (rng.normal_matrix(7, 5), rng.normal_matrix(4, 5));
    let (q1, q2) = (rng.normal_matrix(7, 5), rng.normal_matrix(4, 5));
    let mut acc = GramAccumulator::new(5);
    acc.accumulate(&x1, &q1).unwrap();
    acc.accumulate(&x2, &q2).unwrap();
    let batched = acc.finish();
    let whole = GramBundle::from_activations(&concat_rows(&x1, &x2), &concat_rows(&q1, &q2)).unwrap();
    assert_eq!(batched.n_samples, 11);
    for (a, b) in [
        (&batched.s, &whole.s),
        (&batched.s_hat, &whole.s_hat),
        (&batched.s_ff, &whole.s_ff),
    ] {
        assert!(a.sub(b).unwrap().max_abs() <= 1e-12);
    }
}

/// Gaussian elimination with partial pivoting; independent of the SVD route.
fn inverse_solve(a: &DenseMatrix, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r = a.row(i).to_vec();
            r.push(b[i]);
            r
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..=n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    (0..n).map(|i| m[i][n] / m[i][i]).collect()
}

#[test]
fn lstsq_full_rank_residual_and_inverse() {
    for seed in 0..50 {
        let mut rng = SplitMix64::new(100 + seed);
        let a = rng.normal_matrix(8, 8);
        let b = rng.normal_vec(8);
        let x = lstsq_solve(&a, &b).unwrap();
        let r: Vec<f64> = a.matvec(&x).unwrap().iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm(&r) <= 1e-9 * norm(&b));
        let y = inverse_solve(&a, &b);
        let d: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p - q).collect();
        assert!(norm(&d) <= 1e-8 * norm(&y));
    }
}

#[test]
fn lstsq_rank_deficient_is_minimal_norm() {
    // A = u vᵀ: min-norm solution lies along v.
    let mut rng = SplitMix64::new(5);
    let u = rng.normal_vec(6);
    let v = rng.normal_vec(6);
    let a = DenseMatrix::from_fn(6, 6, |i, j| u[i] * v[j]);
    let b = rng.normal_vec(6);
    let x = lstsq_solve(&a, &b).unwrap();
    let uu: f64 = u.iter().map(|t| t * t).sum();
    let vv: f64 = v.iter().map(|t| t * t).sum();
    let ub: f64 = u.iter().zip(&b).map(|(p, q)| p * q).sum();
    for (xi, vi) in x.iter().zip(&v) {
        assert!((xi - vi * ub / (uu * vv)).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn accumulated_grams_are_psd(seed in any::<u64>(), n in 1usize..20, d in 1usize..8) {
        let mut rng = SplitMix64::new(seed);
        let x = rng.normal_matrix(n, d);
        let xq = x.add(&rng.normal_matrix(n, d).scale(0.5)).unwrap();
        let g = GramBundle::from_activations(&x, &xq).unwrap();
        let scale = g.s_hat.frobenius_norm();
        for m in [&g.s_hat, &g.s_ff] {
            prop_assert!(m.sub(&m.transpose()).unwrap().max_abs() <= 1e-10 * m.max_abs().max(1.0));
        }
        for _ in 0..10 {
            let p = rng.normal_vec(d);
            let q = g.s_hat.matvec(&p).unwrap();
            let quad: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
            let pp: f64 = p.iter().map(|a| a * a).sum();
            prop_assert!(quad >= -1e-8 * scale * pp);
        }
        let m = binquant_core::numerics::amp_gram(&g.s, &rng.normal_matrix(d, 3)).unwrap();
        prop_assert_eq!(m.clone(), m.transpose());
    }

    #[test]
    fn tensor_round_trip(
        shape in proptest::collection::vec(0u64..5, 0..4),
        seed in any::<u64>(),
        kind in 0u8..3,
    ) {
        let n: u64 = shape.iter().product();
        let mut rng = SplitMix64::new(seed);
        let data = match kind {
            0 => TensorData::F32((0..n).map(|_| f32::from_bits(rng.next_u64() as u32)).collect()),
            1 => TensorData::F64((0..n).map(|_| f64::from_bits(rng.next_u64())).collect()),
            _ => TensorData::Sign((0..n).map(|_| if rng.next_u64() & 1 == 0 { -1 } else { 1 }).collect()),
        };
        let t = TensorFile::new(shape, data).unwrap();
        let bytes = t.encode();
        prop_assert_eq!(bytes.len(), t.encoded_len());
        let back = TensorFile::decode(&bytes).unwrap();
        // NaN payloads compare unequal; compare re-encoded bytes instead.
        prop_assert_eq!(back.encode(), bytes);
    }
}
