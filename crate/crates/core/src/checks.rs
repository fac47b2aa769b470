//! Seeded single-trial checks. Each function builds its own data from a
//! seed, runs one comparison and reports the measured quantities alongside
//! the bound they are held to, so that tests and the CLI share one
//! definition of every property.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use crate::dual::{self, dual_objective, gd_run, grad, min_grad_bound, DualIterate, StepsizeSchedule};
use crate::error::{Error, Result};
use crate::linalg::singular_values;
use crate::math::{exp, max_abs_diff};
use crate::matrix::Matrix;
use crate::oracles::{brute_force_ot, finite_diff_grad, round_plan};
use crate::problem::{
    cost_matrix, grid_instance, instance_from_permutation, random_instance, unit_f64, ProblemInstance, DEFAULT_LAMBDA,
};
use crate::prompt::{build_prompt, read_dual};
use crate::sinkhorn::{
    contraction_check, eta, f_map, g_map, gibbs_kernel, mu_log, projective_bound, projective_bound_min_depth,
    s_eps_membership, scaling_shift_check, sinkhorn_solve, sinkhorn_sweep, GibbsKernel, ScalingPair,
};
use crate::transformer::{sort_readout, AuxUpdate, Transformer};

/// Stepsize scale of the fixed-weight experiments.
pub const DEFAULT_GAMMA: f64 = 0.01;
/// Depth of the fixed-weight experiments.
pub const DEFAULT_DEPTH: usize = 2000;

/// Sinkhorn run pushed until the scalings stop moving, for use as `(w*, q*)`.
///
/// Converges to `tol` first, then keeps sweeping until one sweep changes
/// neither scaling by more than `1e−15` in `μ` (at most `extra` sweeps).
pub fn reference_scaling(k: &GibbsKernel, tol: f64, max_iters: usize, extra: usize) -> Result<ScalingPair> {
    let mut s = sinkhorn_solve(k, tol, max_iters)?.scaling;
    for _ in 0..extra {
        let next = sinkhorn_sweep(k, &s);
        let moved = mu_log(&next.log_w, &s.log_w).max(mu_log(&next.log_q, &s.log_q));
        s = next;
        if moved <= 1e-15 {
            break;
        }
    }
    Ok(s.gauge_fixed())
}

/// Transformer dual columns against an independently iterated GD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceOutcome {
    pub n: usize,
    pub d: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub depth: usize,
    /// Largest `|u − u_gd|`, `|v − v_gd|` over every layer.
    pub max_diff: f64,
    /// First layer at which the difference exceeds the tolerance.
    pub first_bad_layer: Option<usize>,
}

impl EquivalenceOutcome {
    pub fn holds(&self, tol: f64) -> bool {
        self.max_diff <= tol
    }
}

/// Runs the constructed model (optionally with its value maps negated) on a
/// seeded uniform instance and compares every layer's `(u, v)` columns to
/// [`gd_run`]. `γ` is drawn from `[0.01, 0.2)`.
pub fn equivalence_trial(
    n: usize,
    d: usize,
    lambda: f64,
    depth: usize,
    seed: u64,
    flip_value_sign: bool,
) -> Result<EquivalenceOutcome> {
    let inst = random_instance(n, d, lambda, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let gamma = 0.01 + 0.19 * unit_f64(&mut rng);
    let mut model = Transformer::constructed(d, lambda, gamma)?;
    if flip_value_sign {
        model = Transformer::new(alloc::vec![model.layers()[0].with_value_sign_flipped()])?;
    }
    let trace = model.run(build_prompt(&inst), depth, AuxUpdate::KeyValueOnly)?;
    let traj = gd_run(&inst, depth, StepsizeSchedule::Fixed { gamma })?;
    let tol = 1e-8;
    let mut max_diff: f64 = 0.0;
    let mut first_bad_layer = None;
    for (l, (state, it)) in trace.states.iter().zip(&traj.iterates).enumerate() {
        let (u, v) = read_dual(state);
        let diff = max_abs_diff(&u, &it.u).max(max_abs_diff(&v, &it.v));
        if !(diff <= tol) && first_bad_layer.is_none() {
            first_bad_layer = Some(l);
        }
        max_diff = if diff.is_nan() {
            f64::INFINITY
        } else {
            max_diff.max(diff)
        };
    }
    Ok(EquivalenceOutcome {
        n,
        d,
        lambda,
        gamma,
        depth,
        max_diff,
        first_bad_layer,
    })
}

/// Analytic dual gradient against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientOutcome {
    pub n: usize,
    pub lambda: f64,
    /// `‖g_fd − g‖₂ / ‖g‖₂`.
    pub rel_err: f64,
}

/// `n ∈ 2..=5` unless given, `d ∈ {1, 2}`, `λ ∈ [0.1, 1)`, duals in
/// `[−λ/2, λ/2)`.
pub fn gradient_trial(n: Option<usize>, seed: u64) -> Result<GradientOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drawn = 2 + (unit_f64(&mut rng) * 4.0) as usize;
    let n = n.unwrap_or(drawn);
    let d = 1 + (unit_f64(&mut rng) * 2.0) as usize;
    let lambda = 0.1 + 0.9 * unit_f64(&mut rng);
    let inst = random_instance(n, d, lambda, seed.wrapping_add(1))?;
    let c = cost_matrix(&inst);
    let theta: Vec<f64> = (0..2 * n).map(|_| lambda * (unit_f64(&mut rng) - 0.5)).collect();
    let split = |t: &[f64]| DualIterate::new(t[..n].to_vec(), t[n..].to_vec());
    let g = grad(&c, &split(&theta), lambda)?;
    let fd = finite_diff_grad(
        |t| dual_objective(&c, &split(t), lambda).unwrap_or(f64::NAN),
        &theta,
        1e-4 * lambda,
    )?;
    let analytic: Vec<f64> = g.u.iter().chain(&g.v).copied().collect();
    let num: f64 = analytic.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum();
    let rel_err = libm::sqrt(num) / libm::sqrt(g.norm_sq()).max(f64::MIN_POSITIVE);
    Ok(GradientOutcome { n, lambda, rel_err })
}

/// Strictly positive `n × n` matrix with log-entries in `[−spread, 0)`.
fn random_positive(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> Matrix {
    Matrix::from_fn(n, n, |_, _| exp(-spread * unit_f64(rng)))
}

/// One trial of the `f`/`g` stability property.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfStepOutcome {
    pub n: usize,
    /// Achieved `ε*` of the sampled `A`.
    pub eps: f64,
    pub eps_f: f64,
    pub eps_g: f64,
    /// `3ε − max(ε*(f(A)), ε*(g(A)))`; negative means a violation.
    pub slack: f64,
}

/// `A = B ∘ (1 + sΔ)` with `B` doubly stochastic, `Δ` uniform in `[−1, 1)`
/// (on every entry, or on a single row for odd seeds), and `s` scaled so
/// that `ε*(A)` lands at a random fraction of `1/(3n)`.
pub fn half_step_trial(n: usize, seed: u64) -> Result<HalfStepOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, eps) = perturbed_doubly_stochastic(&mut rng, n, 1.0 / (3.0 * n as f64), seed % 2 == 1)?;
    let eps_f = s_eps_membership(&f_map(&a)?, 0.0).1;
    let eps_g = s_eps_membership(&g_map(&a)?, 0.0).1;
    Ok(HalfStepOutcome {
        n,
        eps,
        eps_f,
        eps_g,
        slack: 3.0 * eps - eps_f.max(eps_g),
    })
}

fn perturbed_doubly_stochastic(rng: &mut ChaCha8Rng, n: usize, limit: f64, one_row: bool) -> Result<(Matrix, f64)> {
    let k = GibbsKernel::from_positive(&random_positive(rng, n, 3.0))?;
    let b = sinkhorn_solve(&k, 1e-14, 100_000)?.plan.matrix().clone();
    let row = (unit_f64(rng) * n as f64) as usize;
    let delta = Matrix::from_fn(n, n, |i, _| {
        let r = 2.0 * unit_f64(rng) - 1.0;
        if one_row && i != row {
            0.0
        } else {
            r
        }
    });
    let shift = Matrix::from_fn(n, n, |i, j| b[(i, j)] * delta[(i, j)]);
    // Row and column sums of `B∘Δ` are the marginal shifts per unit `s`.
    let unit = shift
        .row_sums()
        .into_iter()
        .chain(shift.col_sums())
        .fold(0.0, |m, x| f64::max(m, x.abs()));
    let target = limit * (0.05 + 0.949 * unit_f64(rng));
    let s = if unit > 0.0 { (target / unit).min(0.999) } else { 0.0 };
    let a = Matrix::from_fn(n, n, |i, j| b[(i, j)] * (1.0 + s * delta[(i, j)]));
    let eps = s_eps_membership(&a, 0.0).1;
    if !(eps < limit) {
        return Err(Error::InvalidParameter {
            name: "eps",
            value: eps,
        });
    }
    Ok((a, eps))
}

/// `μ` displacement of one half-step against `4nε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingShiftOutcome {
    pub n: usize,
    pub eps: f64,
    pub mu: f64,
    pub bound: f64,
    /// `bound − mu`; negative means a violation.
    pub slack: f64,
}

/// `A = diag(w* e^{tα}) Q diag(q* e^{tβ})` with `(w*, q*)` the Sinkhorn
/// scalings of a random positive `Q`, `α, β` uniform in `[−1, 1)`, and `t`
/// bisected so `ε*(A)` sits just under a random fraction of `1/(4n)`.
pub fn scaling_shift_trial(n: usize, seed: u64) -> Result<ScalingShiftOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = GibbsKernel::from_positive(&random_positive(&mut rng, n, 3.0))?;
    let star = sinkhorn_solve(&k, 1e-14, 100_000)?.scaling;
    let alpha: Vec<f64> = (0..n).map(|_| 2.0 * unit_f64(&mut rng) - 1.0).collect();
    let beta: Vec<f64> = (0..n).map(|_| 2.0 * unit_f64(&mut rng) - 1.0).collect();
    let target = (0.05 + 0.949 * unit_f64(&mut rng)) / (4.0 * n as f64);
    let at = |t: f64| ScalingPair {
        log_w: star.log_w.iter().zip(&alpha).map(|(a, b)| a + t * b).collect(),
        log_q: star.log_q.iter().zip(&beta).map(|(a, b)| a + t * b).collect(),
    };
    let eps_at = |t: f64| s_eps_membership(at(t).plan(&k).matrix(), 0.0).1;
    let mut hi = 1e-3;
    while eps_at(hi) <= target && hi < 1e3 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if eps_at(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let out = scaling_shift_check(&k, &at(lo))?;
    let mu = out.mu_q.max(out.mu_w);
    Ok(ScalingShiftOutcome {
        n,
        eps: out.eps,
        mu,
        bound: out.bound,
        slack: out.bound - mu,
    })
}

/// Per-sweep contraction against `η(Q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionOutcome {
    pub n: usize,
    pub lambda: f64,
    pub eta: f64,
    pub worst_ratio: f64,
    /// `η + 1e−9 − worst_ratio`; negative means a violation.
    pub slack: f64,
}

/// Uniform instance with `n ∈ 2..=5` unless given; Sinkhorn from a random
/// start in `[−1, 1)` log-scalings, `sweeps` sweeps.
pub fn contraction_trial(n: Option<usize>, lambda: f64, seed: u64, sweeps: usize) -> Result<ContractionOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drawn = 2 + (unit_f64(&mut rng) * 4.0) as usize;
    let n = n.unwrap_or(drawn);
    let inst = random_instance(n, 1, lambda, seed.wrapping_add(7))?;
    let k = gibbs_kernel(&cost_matrix(&inst), lambda)?;
    let star = reference_scaling(&k, 1e-14, 1_000_000, 10_000)?;
    let start = ScalingPair {
        log_w: (0..n).map(|_| 2.0 * unit_f64(&mut rng) - 1.0).collect(),
        log_q: (0..n).map(|_| 2.0 * unit_f64(&mut rng) - 1.0).collect(),
    };
    let rep = contraction_check(&k, &start, &star, sweeps);
    Ok(ContractionOutcome {
        n,
        lambda,
        eta: rep.eta,
        worst_ratio: rep.worst_ratio,
        slack: rep.eta + 1e-9 - rep.worst_ratio,
    })
}

/// Result of running GD with the radius stepsize at a self-consistent `r`.
#[derive(Debug, Clone)]
pub struct StationarityOutcome {
    pub n: usize,
    pub lambda: f64,
    pub ell: usize,
    /// Radius used for `γ` and the bounds; at least the realized
    /// `max_k ‖θ_k‖₂`.
    pub r: f64,
    pub realized_radius: f64,
    pub gamma: f64,
    /// Layer with the smallest kernel marginal error.
    pub k: usize,
    pub eps_achieved: f64,
    /// `(3n e^{3r/λ} r / ℓ)^{1/2}`.
    pub eps_bound: f64,
    pub min_grad_sq: f64,
    pub grad_bound: f64,
    pub trajectory: dual::Trajectory,
}

impl StationarityOutcome {
    pub fn holds(&self) -> bool {
        self.realized_radius <= self.r && self.eps_achieved <= self.eps_bound && self.min_grad_sq <= self.grad_bound
    }
}

/// GD with `γ = e^{−2r/λ}/(n+2)` where `r` is raised until the realized
/// trajectory radius no longer exceeds it.
pub fn stationarity_pipeline(inst: &ProblemInstance, ell: usize) -> Result<StationarityOutcome> {
    let (n, lambda) = (inst.n(), inst.lambda());
    let mut r: f64 = 0.1;
    for _ in 0..64 {
        let schedule = StepsizeSchedule::Radius { r };
        let traj = gd_run(inst, ell, schedule)?;
        let realized = traj.radius();
        if realized <= r {
            let k = traj.best_marginal_step();
            let eps_achieved = traj.records[k].marginal_error;
            let eps_bound = libm::sqrt(3.0 * n as f64 * exp(3.0 * r / lambda) * r / ell as f64);
            return Ok(StationarityOutcome {
                n,
                lambda,
                ell,
                r,
                realized_radius: realized,
                gamma: schedule.gamma(n, lambda),
                k,
                eps_achieved,
                eps_bound,
                min_grad_sq: traj.min_grad_norm_sq(),
                grad_bound: min_grad_bound(n, r, lambda, ell)?,
                trajectory: traj,
            });
        }
        r = realized * 1.05;
    }
    Err(Error::InvalidParameter { name: "r", value: r })
}

/// Projective distance at the stationarity layer against the convergence bound.
#[derive(Debug, Clone)]
pub struct ProjectiveBoundOutcome {
    pub n: usize,
    pub lambda: f64,
    pub ell: usize,
    pub required_ell: f64,
    pub r: f64,
    /// `‖(λ log w^(k), λ log q^(k))‖₂` after gauge fixing, for reference.
    pub scaling_radius: f64,
    pub k: usize,
    pub eta: f64,
    pub mu_w: f64,
    pub mu_q: f64,
    pub bound: f64,
}

impl ProjectiveBoundOutcome {
    pub fn holds(&self) -> bool {
        self.mu_w.max(self.mu_q) <= self.bound
    }
}

/// Alternates the stationarity pipeline and the depth precondition until `ℓ` meets
/// `64 n³ e^{3r/λ} r` for the `r` realized at that `ℓ`, then compares the
/// stationarity layer's scalings `w = e^{u/λ}`, `q = e^{v/λ}` with Sinkhorn's.
pub fn projective_bound_pipeline(inst: &ProblemInstance, start_ell: usize) -> Result<ProjectiveBoundOutcome> {
    let (n, lambda) = (inst.n(), inst.lambda());
    let mut ell = start_ell.max(1);
    for _ in 0..32 {
        let lem = stationarity_pipeline(inst, ell)?;
        let required = projective_bound_min_depth(n, lem.r, lambda);
        if (ell as f64) < required {
            ell = libm::ceil(required) as usize;
            continue;
        }
        let k = gibbs_kernel(&cost_matrix(inst), lambda)?;
        let star = reference_scaling(&k, 1e-14, 1_000_000, 10_000)?;
        let it = &lem.trajectory.iterates[lem.k];
        let log_w: Vec<f64> = it.u.iter().map(|u| u / lambda).collect();
        let log_q: Vec<f64> = it.v.iter().map(|v| v / lambda).collect();
        let gauge = ScalingPair {
            log_w: log_w.clone(),
            log_q: log_q.clone(),
        }
        .gauge_fixed();
        let scaling_radius = lambda * libm::sqrt(gauge.log_w.iter().chain(&gauge.log_q).map(|a| a * a).sum::<f64>());
        let eta = eta(&k);
        return Ok(ProjectiveBoundOutcome {
            n,
            lambda,
            ell,
            required_ell: required,
            r: lem.r,
            scaling_radius,
            k: lem.k,
            eta,
            mu_w: mu_log(&log_w, &star.log_w),
            mu_q: mu_log(&log_q, &star.log_q),
            bound: projective_bound(n, lem.r, lambda, eta, ell)?,
        });
    }
    Err(Error::InvalidParameter {
        name: "ell",
        value: ell as f64,
    })
}

/// Exhaustive search against rounding and against the monotone matching.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    pub perm: Vec<usize>,
    pub brute: Vec<usize>,
    pub sorting: Vec<usize>,
    /// `None` when rounding the Sinkhorn plan was ambiguous.
    pub rounded: Option<Vec<usize>>,
    pub lambda: f64,
}

impl OracleOutcome {
    pub fn holds(&self) -> bool {
        self.brute == self.sorting && self.rounded.as_ref().is_none_or(|r| *r == self.brute)
    }
}

/// For the sorting instance built from `perm`, compares brute force with
/// the rank map of `x`, and with the rounded Sinkhorn plan at
/// `λ = min(0.005, 0.01 · gap)` where `gap` is the cost gap between the two
/// best permutations.
pub fn oracle_trial(perm: &[usize]) -> Result<OracleOutcome> {
    let inst = instance_from_permutation(perm, DEFAULT_LAMBDA)?;
    let c = cost_matrix(&inst);
    let brute = brute_force_ot(&c)?.perm().to_vec();
    let x = inst.x().column(0);
    let sorting: Vec<usize> = x.iter().map(|xi| x.iter().filter(|xj| *xj < xi).count()).collect();
    let gap = crate::oracles::permutation_cost_gap(&c)?;
    let lambda = if gap.is_finite() {
        DEFAULT_LAMBDA.min(0.01 * gap)
    } else {
        DEFAULT_LAMBDA
    };
    let k = gibbs_kernel(&c, lambda)?;
    let rounded = match sinkhorn_solve(&k, 1e-9, 1_000_000) {
        Ok(sol) => round_plan(sol.plan.matrix(), &c).ok().map(|p| p.perm().to_vec()),
        Err(Error::NotConverged { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(OracleOutcome {
        perm: perm.to_vec(),
        brute,
        sorting,
        rounded,
        lambda,
    })
}

/// Pattern statistics at one checkpoint layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checkpoint {
    pub layer: usize,
    pub eps: f64,
    /// Frobenius distance to the Sinkhorn plan.
    pub frob_to_plan: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceOutcome {
    pub n: usize,
    pub checkpoints: Vec<Checkpoint>,
    pub final_eps: f64,
    /// `σ_min / σ_max` of the final raw kernel.
    pub inverse_condition: f64,
    pub reference_plan: Matrix,
}

impl ConvergenceOutcome {
    /// Allowed increase between checkpoints once both quantities have
    /// reached rounding level: `4n` ulps of 1.
    pub fn roundoff(&self) -> f64 {
        4.0 * self.n as f64 * f64::EPSILON
    }

    /// `ε*` and the Frobenius distance never increase between checkpoints
    /// (beyond [`roundoff`](Self::roundoff)) and both drop from the first
    /// checkpoint to the last.
    pub fn monotone(&self) -> bool {
        let tol = self.roundoff();
        let steps = self
            .checkpoints
            .windows(2)
            .all(|w| w[1].eps <= w[0].eps + tol && w[1].frob_to_plan <= w[0].frob_to_plan + tol);
        let drop = match (self.checkpoints.first(), self.checkpoints.last()) {
            (Some(a), Some(b)) if self.checkpoints.len() > 1 => b.eps < a.eps && b.frob_to_plan < a.frob_to_plan,
            _ => true,
        };
        steps && drop
    }
}

/// Runs `model` on `inst` for `max(checkpoints)` layers and reads the
/// head-1 raw kernel at each checkpoint.
pub fn convergence_run(
    model: &Transformer,
    inst: &ProblemInstance,
    checkpoints: &[usize],
) -> Result<ConvergenceOutcome> {
    let depth = checkpoints.iter().copied().max().unwrap_or(0);
    let trace = model.run(build_prompt(inst), depth, AuxUpdate::KeyValueOnly)?;
    let k = gibbs_kernel(&cost_matrix(inst), inst.lambda())?;
    let plan = reference_scaling(&k, 1e-13, 10_000_000, 10_000)?
        .plan(&k)
        .matrix()
        .clone();
    let checkpoints: Vec<Checkpoint> = checkpoints
        .iter()
        .map(|&layer| {
            let m = trace.kernel(layer);
            Checkpoint {
                layer,
                eps: s_eps_membership(m, 0.0).1,
                frob_to_plan: m.sub(&plan).map_or(f64::INFINITY, |d| d.frobenius()),
            }
        })
        .collect();
    let last = trace.kernel(depth);
    let sv = singular_values(last);
    let inverse_condition = match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if hi > 0.0 => lo / hi,
        _ => 0.0,
    };
    Ok(ConvergenceOutcome {
        n: inst.n(),
        final_eps: s_eps_membership(last, 0.0).1,
        checkpoints,
        inverse_condition,
        reference_plan: plan,
    })
}

/// Fixed-weight convergence on `grid_instance(n, seed)` at the experiment
/// defaults.
pub fn default_convergence(n: usize, seed: u64, checkpoints: &[usize]) -> Result<ConvergenceOutcome> {
    let model = Transformer::constructed(1, DEFAULT_LAMBDA, DEFAULT_GAMMA)?;
    convergence_run(&model, &grid_instance(n, seed)?, checkpoints)
}

/// Transformer sort estimate for `x` at the experiment defaults.
pub fn sort_demo(x: &[f64], depth: usize) -> Result<Vec<f64>> {
    let inst = ProblemInstance::sorting(x, DEFAULT_LAMBDA)?;
    let model = Transformer::constructed(1, DEFAULT_LAMBDA, DEFAULT_GAMMA)?;
    let trace = model.run(build_prompt(&inst), depth, AuxUpdate::KeyValueOnly)?;
    sort_readout(&trace, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equivalence_small() {
        let out = equivalence_trial(3, 1, 0.5, 10, 1, false).unwrap();
        assert!(out.holds(1e-8), "{out:?}");
        let bad = equivalence_trial(3, 1, 0.5, 10, 1, true).unwrap();
        assert!(!bad.holds(1e-8));
        assert_eq!(bad.first_bad_layer, Some(1));
    }

    #[test]
    fn gradient_small() {
        assert!(gradient_trial(None, 3).unwrap().rel_err < 1e-5);
        assert!(gradient_trial(Some(1), 3).unwrap().rel_err < 1e-5);
    }

    #[test]
    fn prop_trials_small() {
        let p1 = half_step_trial(3, 5).unwrap();
        assert!(p1.eps < 1.0 / 9.0 && p1.slack >= 0.0, "{p1:?}");
        let p2 = scaling_shift_trial(3, 5).unwrap();
        assert!(p2.eps < 1.0 / 12.0 && p2.slack >= 0.0, "{p2:?}");
    }

    #[test]
    fn oracle_identity_permutation() {
        let out = oracle_trial(&[0, 1, 2]).unwrap();
        assert!(out.holds(), "{out:?}");
        assert_eq!(out.brute, [0, 1, 2]);
    }
}
