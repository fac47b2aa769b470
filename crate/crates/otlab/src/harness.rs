//! Parallel property suites. Every trial derives its own seed from the run
//! seed, so results do not depend on scheduling.

use otlab_core::checks::{
    contraction_trial, equivalence_trial, gradient_trial, half_step_trial, oracle_trial, projective_bound_pipeline,
    scaling_shift_trial, stationarity_pipeline,
};
use otlab_core::problem::{random_instance, seeded_permutation};
use rayon::prelude::*;
use serde::Serialize;

/// Tolerance on transformer-vs-GD dual columns.
pub const EQUIVALENCE_TOL: f64 = 1e-8;
/// Tolerance on analytic-vs-central-difference gradients.
pub const GRADIENT_TOL: f64 = 1e-5;

/// splitmix64 finalizer over `(base, suite, trial)`.
pub fn trial_seed(base: u64, suite: u64, trial: u64) -> u64 {
    let mut z = base
        .wrapping_add(suite.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(trial.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One trial: `slack ≥ 0` means the property held.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub slack: f64,
    pub note: String,
}

impl Trial {
    fn new(slack: f64, note: impl Into<String>) -> Self {
        Self {
            slack,
            note: note.into(),
        }
    }

    fn failed(note: impl Into<String>) -> Self {
        Self::new(f64::NEG_INFINITY, note)
    }

    pub fn ok(&self) -> bool {
        self.slack >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    /// Smallest slack over all trials; negative on failure.
    pub worst_slack: f64,
    /// Notes of up to five violating trials.
    pub failures: Vec<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    fn collect(name: &str, trials: Vec<Trial>) -> Self {
        let violations = trials.iter().filter(|t| !t.ok()).count();
        let worst_slack = trials.iter().map(|t| t.slack).fold(f64::INFINITY, f64::min);
        Self {
            name: name.to_string(),
            trials: trials.len(),
            violations,
            worst_slack: if trials.is_empty() { 0.0 } else { worst_slack },
            failures: trials.into_iter().filter(|t| !t.ok()).take(5).map(|t| t.note).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub trials: usize,
    pub violations: usize,
    pub suites: Vec<SuiteReport>,
}

impl VerifyReport {
    pub fn failing(&self) -> Vec<&str> {
        self.suites
            .iter()
            .filter(|s| !s.passed())
            .map(|s| s.name.as_str())
            .collect()
    }
}

/// Knobs for [`verify`]. `n = None` uses each suite's own size grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub n: Option<usize>,
    pub seed: u64,
    /// Negate both value maps in the equivalence suite.
    pub flip_value_sign: bool,
}

fn run<F: Fn(u64) -> Trial + Sync + Send>(name: &str, count: usize, f: F) -> SuiteReport {
    let trials = (0..count as u64).into_par_iter().map(&f).collect();
    SuiteReport::collect(name, trials)
}

fn err(e: otlab_core::Error) -> Trial {
    Trial::failed(format!("error: {e}"))
}

pub fn equivalence_suite(opts: &VerifyOptions) -> SuiteReport {
    let ns: Vec<usize> = opts.n.map_or(vec![2, 4, 8], |n| vec![n]);
    let mut cases = Vec::new();
    for &n in &ns {
        for d in [1, 2] {
            for lambda in [0.1, 1.0] {
                for s in 0..5u64 {
                    cases.push((n, d, lambda, s));
                }
            }
        }
    }
    run("transformer_gd_equivalence", cases.len(), |i| {
        let (n, d, lambda, s) = cases[i as usize];
        let seed = trial_seed(opts.seed, 1, i * 16 + s);
        match equivalence_trial(n, d, lambda, 50, seed, opts.flip_value_sign) {
            Ok(o) => Trial::new(
                EQUIVALENCE_TOL - o.max_diff,
                format!(
                    "n={n} d={d} lambda={lambda} seed={seed}: max diff {:e} (first bad layer {:?})",
                    o.max_diff, o.first_bad_layer
                ),
            ),
            Err(e) => err(e),
        }
    })
}

pub fn gradient_suite(opts: &VerifyOptions) -> SuiteReport {
    run("gradient_finite_difference", 20, |i| {
        let seed = trial_seed(opts.seed, 2, i);
        match gradient_trial(opts.n, seed) {
            Ok(o) => Trial::new(
                GRADIENT_TOL - o.rel_err,
                format!("seed={seed} n={}: rel err {:e}", o.n, o.rel_err),
            ),
            Err(e) => err(e),
        }
    })
}

fn size_grid(opts: &VerifyOptions) -> Vec<usize> {
    opts.n.map_or(vec![2, 3, 5, 8], |n| vec![n])
}

pub fn half_step_suite(opts: &VerifyOptions) -> SuiteReport {
    let ns = size_grid(opts);
    run("half_step_marginals", 1000, |i| {
        let n = ns[i as usize % ns.len()];
        let seed = trial_seed(opts.seed, 3, i);
        match half_step_trial(n, seed) {
            Ok(o) => Trial::new(
                o.slack,
                format!(
                    "n={n} seed={seed}: eps {:e}, after f {:e}, after g {:e}",
                    o.eps, o.eps_f, o.eps_g
                ),
            ),
            Err(e) => err(e),
        }
    })
}

pub fn scaling_shift_suite(opts: &VerifyOptions) -> SuiteReport {
    let ns = size_grid(opts);
    run("half_step_scaling_shift", 1000, |i| {
        let n = ns[i as usize % ns.len()];
        let seed = trial_seed(opts.seed, 4, i);
        match scaling_shift_trial(n, seed) {
            Ok(o) => Trial::new(
                o.slack,
                format!("n={n} seed={seed}: mu {:e} > 4n eps {:e}", o.mu, o.bound),
            ),
            Err(e) => err(e),
        }
    })
}

pub fn contraction_suite(opts: &VerifyOptions) -> SuiteReport {
    run("sinkhorn_contraction", 40, |i| {
        let lambda = if i % 2 == 0 { 0.5 } else { 1.0 };
        let seed = trial_seed(opts.seed, 5, i);
        match contraction_trial(opts.n, lambda, seed, 40) {
            Ok(o) => Trial::new(
                o.slack,
                format!(
                    "n={} lambda={lambda} seed={seed}: ratio {} vs eta {}",
                    o.n, o.worst_ratio, o.eta
                ),
            ),
            Err(e) => err(e),
        }
    })
}

pub fn stationarity_suite(opts: &VerifyOptions) -> SuiteReport {
    let n = opts.n.unwrap_or(3);
    run("gd_almost_doubly_stochastic", 1, |i| {
        let seed = trial_seed(opts.seed, 6, i);
        let out = random_instance(n, 1, 1.0, seed).and_then(|inst| stationarity_pipeline(&inst, 5000));
        match out {
            Ok(o) => Trial::new(
                (o.eps_bound - o.eps_achieved)
                    .min(o.grad_bound - o.min_grad_sq)
                    .min(o.r - o.realized_radius),
                format!(
                    "n={n} seed={seed}: r {} k {} eps {:e} bound {:e}; min |grad|^2 {:e} bound {:e}",
                    o.r, o.k, o.eps_achieved, o.eps_bound, o.min_grad_sq, o.grad_bound
                ),
            ),
            Err(e) => err(e),
        }
    })
}

pub fn projective_bound_suite(opts: &VerifyOptions) -> SuiteReport {
    let n = opts.n.unwrap_or(2);
    run("projective_distance_bound", 1, |i| {
        let seed = trial_seed(opts.seed, 7, i);
        let out = random_instance(n, 1, 1.0, seed).and_then(|inst| projective_bound_pipeline(&inst, 5000));
        match out {
            Ok(o) => Trial::new(
                o.bound - o.mu_w.max(o.mu_q),
                format!(
                    "n={n} seed={seed}: mu_w {:e} mu_q {:e} bound {:e} (ell {}, r {})",
                    o.mu_w, o.mu_q, o.bound, o.ell, o.r
                ),
            ),
            Err(e) => err(e),
        }
    })
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// All permutations for `n ≤ 6`, twenty seeded ones for `7 ≤ n ≤ 9`.
pub fn oracle_suite(opts: &VerifyOptions) -> SuiteReport {
    let perms: Vec<Vec<usize>> = match opts.n {
        None => (1..=6).flat_map(permutations).collect(),
        Some(n) if n <= 6 => permutations(n),
        Some(n) if n <= 9 => (0..20)
            .map(|t| seeded_permutation(n, trial_seed(opts.seed, 8, t)))
            .collect(),
        Some(_) => Vec::new(),
    };
    run("oracle_agreement", perms.len(), |i| {
        let p = &perms[i as usize];
        match oracle_trial(p) {
            Ok(o) if o.holds() => Trial::new(0.0, ""),
            Ok(o) => Trial::failed(format!(
                "perm {:?}: brute {:?} sorting {:?} rounded {:?}",
                o.perm, o.brute, o.sorting, o.rounded
            )),
            Err(e) => err(e),
        }
    })
}

pub fn verify(opts: &VerifyOptions) -> VerifyReport {
    let suites = vec![
        equivalence_suite(opts),
        gradient_suite(opts),
        half_step_suite(opts),
        scaling_shift_suite(opts),
        contraction_suite(opts),
        stationarity_suite(opts),
        projective_bound_suite(opts),
        oracle_suite(opts),
    ];
    VerifyReport {
        passed: suites.iter().all(SuiteReport::passed),
        trials: suites.iter().map(|s| s.trials).sum(),
        violations: suites.iter().map(|s| s.violations).sum(),
        suites,
    }
}
