mod common;

use binquant_core::amp::{
    amp_gradients, amp_objective, amp_raw_masks, masked_update, select, AmpPolicy, Proposal,
};
use binquant_core::numerics::{amp_gram, DenseMatrix};
use binquant_core::sign;
use binquant_core::synth::SplitMix64;
use common::{central_diff, rel_close, Instance};

fn amp_m(inst: &Instance) -> DenseMatrix {
    amp_gram(&inst.bundle.s, &inst.w).unwrap()
}

#[test]
fn objective_matches_token_similarity_trace() {
    for seed in 0..20 {
        let inst = Instance::random_dims(seed, 8, 6, 12);
        let m = amp_m(&inst);
        let q = inst.x_hat.matmul(&inst.f.reconstruct()).unwrap();
        let t = inst.x.matmul(&inst.w).unwrap();
        let tq = q.matmul_t(&q).unwrap();
        let tt = t.matmul_t(&t).unwrap();
        let want = tq.frobenius_dot(&tt).unwrap();
        let got = amp_objective(&inst.f, &m).unwrap();
        assert!(rel_close(got, want, 1e-9), "{got} vs {want}");
        assert!(got >= 0.0);
    }
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..20 {
        let inst = Instance::random_dims(100 + seed, 6, 5, 12);
        let m = amp_m(&inst);
        let f = &inst.f;
        let g = amp_gradients(f, &m).unwrap();
        let raw = amp_raw_masks(f, &m).unwrap();
        let obj = |t: &binquant_core::factorization::BinaryFactorization| amp_objective(t, &m).unwrap();
        for i in 0..f.d_in() {
            let fd = central_diff(&f.alpha_r, i, 1e-6, |a| {
                let mut t = f.clone();
                t.alpha_r = a.to_vec();
                obj(&t)
            });
            if g.r[i].abs() > 1e-6 {
                assert!(rel_close(g.r[i], fd, 1e-5));
                assert_eq!(raw.r[i], sign(fd));
            }
        }
        for j in 0..f.d_out() {
            let fd = central_diff(&f.alpha_c, j, 1e-6, |a| {
                let mut t = f.clone();
                t.alpha_c = a.to_vec();
                obj(&t)
            });
            if g.c[j].abs() > 1e-6 {
                assert!(rel_close(g.c[j], fd, 1e-5));
                assert_eq!(raw.c[j], sign(fd));
            }
        }
        // B as a real matrix: perturb the reconstruction through one entry.
        let w_hat = f.reconstruct();
        for i in 0..f.d_in() {
            for j in 0..f.d_out() {
                let scale = f.alpha_r[i] * f.alpha_c[j];
                let eval = |db: f64| {
                    let mut wh = w_hat.clone();
                    wh[(i, j)] += scale * db;
                    m.matmul(&wh).unwrap().frobenius_dot(&wh).unwrap()
                };
                let fd = (eval(1e-6) - eval(-1e-6)) / 2e-6;
                if g.b[(i, j)].abs() > 1e-6 {
                    assert!(rel_close(g.b[(i, j)], fd, 1e-5));
                    assert_eq!(raw.b_at(i, j), sign(fd));
                }
            }
        }
    }
}

#[test]
fn agreement_single_coordinate_updates_never_shrink_proxy() {
    let mut rng = SplitMix64::new(42);
    let mut accepted = 0;
    for trial in 0..200u64 {
        let inst = Instance::random_dims(500 + trial, 8, 8, 16);
        let m = amp_m(&inst);
        let f = &inst.f;
        let before = amp_objective(f, &m).unwrap();
        let raw = amp_raw_masks(f, &m).unwrap();
        let proposal = match rng.next_u64() % 3 {
            0 => {
                let mut v = f.alpha_r.clone();
                let i = (rng.next_u64() as usize) % v.len();
                v[i] += 2.0 * rng.next_normal();
                Proposal::AlphaR(v)
            }
            1 => {
                let mut v = f.alpha_c.clone();
                let j = (rng.next_u64() as usize) % v.len();
                v[j] += 2.0 * rng.next_normal();
                Proposal::AlphaC(v)
            }
            _ => {
                let row = (rng.next_u64() as usize) % f.d_in();
                let mut signs = f.signs.row(row).to_vec();
                let k = (rng.next_u64() as usize) % signs.len();
                signs[k] = -signs[k];
                Proposal::BRow { row, signs }
            }
        };
        let sel = select(&raw, &proposal, f, AmpPolicy::Agreement);
        let g = masked_update(f, &proposal, &sel);
        if g != *f {
            accepted += 1;
        }
        let after = amp_objective(&g, &m).unwrap();
        assert!(
            after >= before - 1e-9 * (1.0 + before),
            "trial {trial}: {after} < {before}"
        );
    }
    assert!(accepted > 20, "only {accepted} updates accepted");
}

#[test]
fn off_policy_passes_everything() {
    let inst = Instance::random(9, 4, 3, 8);
    let m = amp_m(&inst);
    let raw = amp_raw_masks(&inst.f, &m).unwrap();
    let p = Proposal::AlphaC(vec![-1.0, 5.0, 0.0]);
    assert_eq!(select(&raw, &p, &inst.f, AmpPolicy::Off), [1, 1, 1]);
    assert_eq!(masked_update(&inst.f, &p, &[1, 1, 1]).alpha_c, [-1.0, 5.0, 0.0]);
}
