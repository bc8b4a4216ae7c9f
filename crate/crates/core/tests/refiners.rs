mod common;

use binquant_core::factorization::{
    oracle_row_enumeration, refine_b_row, AlignmentMode, BinaryFactorization, RowSelection,
};
use binquant_core::numerics::{dot, norm, singular_values};
use common::{central_diff, rel_close, Instance, MODES};
use proptest::prelude::*;

#[test]
fn objective_matches_direct_evaluation() {
    for seed in 0..100 {
        let inst = Instance::random_dims(seed, 8, 6, 24);
        for mode in MODES {
            let got = inst.problem(mode).objective(&inst.f);
            let want = inst.direct_objective(&inst.f, mode);
            assert!(rel_close(got, want, 1e-9), "seed {seed} {mode:?}: {got} vs {want}");
        }
    }
}

#[test]
fn output_objective_on_fixed_instance() {
    let inst = Instance::random(7, 8, 4, 8);
    let got = inst.problem(AlignmentMode::Output).objective(&inst.f);
    let want = inst.direct_objective(&inst.f, AlignmentMode::Output);
    assert!(rel_close(got, want, 1e-9));
}

#[test]
fn alpha_c_matches_columnwise_least_squares() {
    for seed in 0..200 {
        let inst = Instance::random_dims(1000 + seed, 10, 8, 32);
        for mode in MODES {
            let (target, design) = inst.raw_pair(mode);
            let update = inst.problem(mode).refine_alpha_c(&inst.f);
            for j in 0..inst.f.d_out() {
                let col: Vec<f64> = (0..inst.f.d_in())
                    .map(|i| inst.f.alpha_r[i] * inst.f.signs.value(i, j))
                    .collect();
                let v = design.matvec(&col).unwrap();
                let t = target.column(j);
                let want = dot(&v, &t) / dot(&v, &v);
                assert!(
                    rel_close(update.alpha_c[j], want, 1e-8),
                    "seed {seed} {mode:?} col {j}: {} vs {want}",
                    update.alpha_c[j]
                );
            }
        }
    }
}

#[test]
fn alpha_r_reaches_stationarity() {
    let mut checked = 0;
    for seed in 0..100 {
        let inst = Instance::random_dims(2000 + seed, 8, 5, 32);
        for mode in MODES {
            let p = inst.problem(mode);
            let sv = singular_values(&p.alpha_r_system(&inst.f)).unwrap();
            if sv.iter().cloned().fold(f64::INFINITY, f64::min) <= 1e-6 {
                continue;
            }
            checked += 1;
            let g0 = norm(&p.grad_alpha_r(&inst.f));
            let mut f = inst.f.clone();
            f.alpha_r = p.refine_alpha_r(&inst.f).unwrap();
            let g1 = norm(&p.grad_alpha_r(&f));
            assert!(g1 <= 1e-6 * (1.0 + g0), "seed {seed} {mode:?}: {g1} vs {g0}");
        }
    }
    assert!(checked > 100);
}

#[test]
fn analytic_gradients_match_finite_differences() {
    for seed in 0..30 {
        let inst = Instance::random_dims(3000 + seed, 6, 5, 16);
        for mode in MODES {
            let p = inst.problem(mode);
            let f = &inst.f;
            let ga = p.grad_alpha_r(f);
            for (i, &g) in ga.iter().enumerate() {
                let fd = central_diff(&f.alpha_r, i, 1e-6, |a| {
                    let mut t = f.clone();
                    t.alpha_r = a.to_vec();
                    p.objective(&t)
                });
                if g.abs() > 1e-6 {
                    assert!(rel_close(g, fd, 1e-5), "alpha_r[{i}] {g} vs {fd}");
                }
            }
            let gc = p.grad_alpha_c(f);
            for (j, &g) in gc.iter().enumerate() {
                let fd = central_diff(&f.alpha_c, j, 1e-6, |a| {
                    let mut t = f.clone();
                    t.alpha_c = a.to_vec();
                    p.objective(&t)
                });
                if g.abs() > 1e-6 {
                    assert!(rel_close(g, fd, 1e-5), "alpha_c[{j}] {g} vs {fd}");
                }
            }
        }
    }
}

#[test]
fn sign_row_matches_enumeration() {
    let mut compared = 0;
    for seed in 0..200 {
        let inst = Instance::random_dims(4000 + seed, 8, 8, 32);
        for mode in MODES {
            let p = inst.problem(mode);
            let rs = p.refine_b_scores(&inst.f, RowSelection::Gain);
            let row = rs.row;
            if (0..inst.f.d_out()).any(|k| rs.scores[(row, k)] == 0.0) {
                continue;
            }
            compared += 1;
            assert_eq!(
                refine_b_row(&inst.f, row, &rs.scores),
                oracle_row_enumeration(&p, &inst.f, row).unwrap(),
                "seed {seed} {mode:?}"
            );
        }
    }
    assert!(compared >= 500);
}

#[test]
fn identity_grams_row_is_sign_of_weight() {
    let inst = Instance::random(5, 5, 8, 10);
    let mut f = inst.f.clone();
    f.alpha_r = vec![1.0; 5];
    f.alpha_c = vec![1.0; 8];
    let p = inst.problem(AlignmentMode::Weight);
    let rs = p.refine_b_scores(&f, RowSelection::Gain);
    for i in 0..5 {
        let want: Vec<i8> = inst.w.row(i).iter().map(|&v| if v < 0.0 { -1 } else { 1 }).collect();
        assert_eq!(refine_b_row(&f, i, &rs.scores), want);
        assert_eq!(oracle_row_enumeration(&p, &f, i).unwrap(), want);
    }
}

#[test]
fn gain_selection_picks_most_improving_row() {
    for seed in 0..60 {
        let inst = Instance::random(5000 + seed, 6, 4, 16);
        for mode in MODES {
            let p = inst.problem(mode);
            let before = p.objective(&inst.f);
            let decrease: Vec<f64> = (0..6)
                .map(|i| {
                    let mut t = inst.f.clone();
                    t.signs.set_row(i, &oracle_row_enumeration(&p, &inst.f, i).unwrap());
                    before - p.objective(&t)
                })
                .collect();
            let best = decrease.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let row = p.refine_b_scores(&inst.f, RowSelection::Gain).row;
            assert!(
                decrease[row] >= best - 1e-9 * (1.0 + before),
                "seed {seed} {mode:?}: row {row} gains {} < {best}",
                decrease[row]
            );
        }
    }
}

#[test]
fn full_sweep_is_rowwise_rule_on_old_signs() {
    for seed in 0..40 {
        let inst = Instance::random_dims(6000 + seed, 8, 6, 20);
        for mode in MODES {
            let p = inst.problem(mode);
            let sweep = p.refine_b_full_sweep(&inst.f);
            let scores = p.refine_b_scores(&inst.f, RowSelection::Agreement).scores;
            for i in 0..inst.f.d_in() {
                assert_eq!(sweep.row(i), refine_b_row(&inst.f, i, &scores).as_slice());
            }
        }
    }
}

#[test]
fn alpha_c_fixed_point_at_exact_representation() {
    let inst = Instance::random(77, 6, 4, 10);
    let w = inst.f.reconstruct();
    let p = binquant_core::factorization::AlignmentProblem::new(
        w,
        binquant_core::factorization::EffectiveGrams::identity(6),
    )
    .unwrap();
    let up = p.refine_alpha_c(&inst.f);
    for (a, b) in up.alpha_c.iter().zip(&inst.f.alpha_c) {
        assert!(rel_close(*a, *b, 1e-12));
    }
}

fn slack(v: f64) -> f64 {
    1e-9 * (1.0 + v.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn refiners_never_increase_objective(seed in any::<u64>(), mode_ix in 0usize..3) {
        let inst = Instance::random_dims(seed, 16, 16, 32);
        let mode = MODES[mode_ix];
        let p = inst.problem(mode);
        let f = &inst.f;
        let before = p.objective(f);

        let mut g = f.clone();
        g.alpha_c = p.refine_alpha_c(f).alpha_c;
        prop_assert!(p.objective(&g) <= before + slack(before));

        let mut g = f.clone();
        g.alpha_r = p.refine_alpha_r(f).unwrap();
        prop_assert!(p.objective(&g) <= before + slack(before));

        let rs = p.refine_b_scores(f, RowSelection::Gain);
        let mut g: BinaryFactorization = f.clone();
        g.signs.set_row(rs.row, &refine_b_row(f, rs.row, &rs.scores));
        prop_assert!(p.objective(&g) <= before + slack(before));
    }

    #[test]
    fn weight_mode_is_frobenius_distance(seed in any::<u64>()) {
        let inst = Instance::random_dims(seed, 12, 12, 16);
        let got = inst.problem(AlignmentMode::Weight).objective(&inst.f);
        let want = inst.w.sub(&inst.f.reconstruct()).unwrap().frobenius_norm_sq();
        prop_assert!(rel_close(got, want, 1e-10));
    }
}
