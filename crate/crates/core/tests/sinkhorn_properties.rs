//! Projective metric, contraction constants and the Sinkhorn solver.

use otlab_core::checks::{contraction_trial, half_step_trial, scaling_shift_trial};
use otlab_core::problem::{cost_matrix, grid_instance};
use otlab_core::sinkhorn::{gibbs_kernel, log_phi, mu_metric, sinkhorn_solve, GibbsKernel, ScalingPair};
use otlab_core::Matrix;
use proptest::prelude::*;

fn positive_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..10.0, n)
}

fn positive_matrix(n: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-4.0f64..0.0, n * n).prop_map(move |v| Matrix::from_fn(n, n, |i, j| v[i * n + j].exp()))
}

/// `max_{ijkl} Q_ik Q_jl / (Q_jk Q_il)` by enumeration, in log form.
fn log_phi_quadruples(q: &Matrix) -> f64 {
    let n = q.rows();
    let l = q.map(f64::ln);
    let mut best = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for m in 0..n {
                    best = best.max(l[(i, k)] + l[(j, m)] - l[(j, k)] - l[(i, m)]);
                }
            }
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mu_is_a_pseudometric((a, b, c) in (1usize..=6).prop_flat_map(|n| (positive_vec(n), positive_vec(n), positive_vec(n))), s in 0.01f64..100.0) {
        let ab = mu_metric(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - mu_metric(&b, &a).unwrap()).abs() <= 1e-12);
        prop_assert!(mu_metric(&a, &c).unwrap() <= ab + mu_metric(&b, &c).unwrap() + 1e-12);
        let scaled: Vec<f64> = a.iter().map(|x| x * s).collect();
        prop_assert!(mu_metric(&a, &scaled).unwrap() <= 1e-12);
    }

    #[test]
    fn phi_reduction_matches_enumeration(q in (1usize..=6).prop_flat_map(positive_matrix)) {
        let k = GibbsKernel::from_positive(&q).unwrap();
        prop_assert!((log_phi(&k) - log_phi_quadruples(&q)).abs() <= 1e-12);
        prop_assert!(log_phi(&k) >= 0.0);
    }

    #[test]
    fn phi_ignores_diagonal_scaling((q, a, b) in (2usize..=5).prop_flat_map(|n| (positive_matrix(n), positive_vec(n), positive_vec(n)))) {
        let n = q.rows();
        let scaled = Matrix::from_fn(n, n, |i, j| a[i] * q[(i, j)] * b[j]);
        let k1 = GibbsKernel::from_positive(&q).unwrap();
        let k2 = GibbsKernel::from_positive(&scaled).unwrap();
        prop_assert!((log_phi(&k1) - log_phi(&k2)).abs() <= 1e-10);
    }

    #[test]
    fn rank_one_iff_phi_is_one((a, b) in (2usize..=5).prop_flat_map(|n| (positive_vec(n), positive_vec(n))), bump in 0.01f64..1.0) {
        let n = a.len();
        let outer = Matrix::from_fn(n, n, |i, j| a[i] * b[j]);
        prop_assert!(log_phi(&GibbsKernel::from_positive(&outer).unwrap()) <= 1e-10);
        let mut data = outer.as_slice().to_vec();
        data[1] *= 1.0 + bump;
        let bumped = Matrix::from_row_major(n, n, data).unwrap();
        prop_assert!(log_phi(&GibbsKernel::from_positive(&bumped).unwrap()) > 1e-10);
    }

    #[test]
    fn plan_is_invariant_under_opposite_scalings(
        (q, w, v) in (1usize..=5).prop_flat_map(|n| (positive_matrix(n), positive_vec(n), positive_vec(n))),
        c in 0.01f64..100.0,
    ) {
        let k = GibbsKernel::from_positive(&q).unwrap();
        let s = ScalingPair::from_positive(&w, &v).unwrap();
        let w2: Vec<f64> = w.iter().map(|x| x * c).collect();
        let v2: Vec<f64> = v.iter().map(|x| x / c).collect();
        let t = ScalingPair::from_positive(&w2, &v2).unwrap();
        let (p1, p2) = (s.plan(&k), t.plan(&k));
        let scale = p1.matrix().max().max(1e-300);
        prop_assert!(p1.matrix().max_abs_diff(p2.matrix()) <= 1e-12 * scale);
    }
}

#[test]
fn almost_doubly_stochastic_stays_close_under_half_steps() {
    let mut violations = 0;
    for seed in 0..250u64 {
        for n in [2, 3, 5, 8] {
            let out = half_step_trial(n, seed * 16 + n as u64).unwrap();
            assert!(out.eps < 1.0 / (3.0 * n as f64));
            violations += usize::from(out.slack < 0.0);
        }
    }
    assert_eq!(violations, 0);
}

#[test]
fn half_steps_move_scalings_at_most_4n_eps() {
    let mut violations = 0;
    for seed in 0..250u64 {
        for n in [2, 3, 5, 8] {
            let out = scaling_shift_trial(n, seed * 16 + n as u64).unwrap();
            assert!(out.eps < 1.0 / (4.0 * n as f64));
            violations += usize::from(out.slack < 0.0);
        }
    }
    assert_eq!(violations, 0);
}

#[test]
fn sweeps_contract_by_eta() {
    for seed in 0..20 {
        for lambda in [0.5, 1.0] {
            let out = contraction_trial(None, lambda, seed, 40).unwrap();
            assert!(out.slack >= 0.0, "{out:?}");
        }
    }
}

#[test]
fn grid_kernel_is_finite_in_log_domain() {
    let inst = grid_instance(4, 0).unwrap();
    let k = gibbs_kernel(&cost_matrix(&inst), inst.lambda()).unwrap();
    let lmin = k.log().min();
    assert!((lmin - (-(0.75f64 * 0.75) / 0.005 - 1.0)).abs() < 1e-9);
    assert_eq!(k.log().max(), -1.0);
    assert!(k.log().is_finite());
    let sol = sinkhorn_solve(&k, 1e-12, 100_000).unwrap();
    assert!(sol.plan.marginal_error() <= 1e-12);
}
