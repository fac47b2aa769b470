//! Sinkhorn scaling of the Gibbs kernel and the projective-metric tools used
//! to measure how far an almost doubly stochastic kernel is from `P*_λ`.
//!
//! Everything runs on `log w`, `log q` and `log Q`; dense plans are only
//! materialized on request.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{exp, ln, logsumexp, sqrt};
use crate::matrix::Matrix;
use crate::problem::CostMatrix;

/// `Q_ij = e^{−C_ij/λ − 1}`, stored as `log Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsKernel {
    log: Matrix,
}

impl GibbsKernel {
    /// Any strictly positive matrix given by its logarithm.
    pub fn from_log(log: Matrix) -> Self {
        Self { log }
    }

    pub fn from_positive(m: &Matrix) -> Result<Self> {
        if let Some(k) = m.as_slice().iter().position(|a| !(*a > 0.0)) {
            return Err(Error::NonPositiveEntry(k));
        }
        Ok(Self { log: m.map(ln) })
    }

    pub fn n(&self) -> usize {
        self.log.rows()
    }

    pub fn log(&self) -> &Matrix {
        &self.log
    }

    pub fn matrix(&self) -> Matrix {
        self.log.map(exp)
    }
}

pub fn gibbs_kernel(c: &CostMatrix, lambda: f64) -> Result<GibbsKernel> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter {
            name: "lambda",
            value: lambda,
        });
    }
    Ok(GibbsKernel {
        log: c.matrix().map(|cij| -cij / lambda - 1.0),
    })
}

/// Positive scalings `(w, q)` held as logarithms.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingPair {
    pub log_w: Vec<f64>,
    pub log_q: Vec<f64>,
}

impl ScalingPair {
    pub fn ones(n: usize) -> Self {
        Self {
            log_w: alloc::vec![0.0; n],
            log_q: alloc::vec![0.0; n],
        }
    }

    pub fn from_positive(w: &[f64], q: &[f64]) -> Result<Self> {
        check_positive(w)?;
        check_positive(q)?;
        Ok(Self {
            log_w: w.iter().map(|a| ln(*a)).collect(),
            log_q: q.iter().map(|a| ln(*a)).collect(),
        })
    }

    pub fn w(&self) -> Vec<f64> {
        self.log_w.iter().map(|a| exp(*a)).collect()
    }

    pub fn q(&self) -> Vec<f64> {
        self.log_q.iter().map(|a| exp(*a)).collect()
    }

    /// Representative with `Σ log w = 0`; the plan is unchanged.
    pub fn gauge_fixed(&self) -> Self {
        let c = self.log_w.iter().sum::<f64>() / self.log_w.len() as f64;
        Self {
            log_w: self.log_w.iter().map(|a| a - c).collect(),
            log_q: self.log_q.iter().map(|a| a + c).collect(),
        }
    }

    /// `diag(w) Q diag(q)` in log form.
    pub fn log_plan(&self, k: &GibbsKernel) -> Matrix {
        let n = k.n();
        Matrix::from_fn(n, n, |i, j| self.log_w[i] + k.log[(i, j)] + self.log_q[j])
    }

    pub fn plan(&self, k: &GibbsKernel) -> TransportPlan {
        TransportPlan::new(self.log_plan(k).map(exp))
    }
}

/// A nonnegative matrix with its marginal error against `1/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    p: Matrix,
    marginal_error: f64,
}

impl TransportPlan {
    pub fn new(p: Matrix) -> Self {
        let marginal_error = s_eps_membership(&p, 0.0).1;
        Self { p, marginal_error }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    pub fn marginal_error(&self) -> f64 {
        self.marginal_error
    }
}

fn check_positive(v: &[f64]) -> Result<()> {
    match v.iter().position(|a| !(*a > 0.0)) {
        Some(k) => Err(Error::NonPositiveEntry(k)),
        None => Ok(()),
    }
}

/// `row(A)_i = 1 / (n Σ_j A_ij)`.
pub fn row_fn(a: &Matrix) -> Result<Vec<f64>> {
    let n = a.rows() as f64;
    a.row_sums()
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            if s > 0.0 {
                Ok(1.0 / (n * s))
            } else {
                Err(Error::NonPositiveSum(i))
            }
        })
        .collect()
}

/// `col(A)_j = 1 / (n Σ_i A_ij)`.
pub fn col_fn(a: &Matrix) -> Result<Vec<f64>> {
    let n = a.rows() as f64;
    a.col_sums()
        .into_iter()
        .enumerate()
        .map(|(j, s)| {
            if s > 0.0 {
                Ok(1.0 / (n * s))
            } else {
                Err(Error::NonPositiveSum(j))
            }
        })
        .collect()
}

/// `f(A) = A diag(col(A))`: columns rescaled to sum to `1/n`.
pub fn f_map(a: &Matrix) -> Result<Matrix> {
    let c = col_fn(a)?;
    Ok(Matrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] * c[j]))
}

/// `g(A) = diag(row(A)) A`: rows rescaled to sum to `1/n`.
pub fn g_map(a: &Matrix) -> Result<Matrix> {
    let r = row_fn(a)?;
    Ok(Matrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] * r[i]))
}

/// Whether `A ∈ S_ε`, plus the smallest such `ε`:
/// `ε* = max(‖A1 − 1/n‖_∞, ‖Aᵀ1 − 1/n‖_∞)`.
pub fn s_eps_membership(a: &Matrix, eps: f64) -> (bool, f64) {
    let inv_n = 1.0 / a.rows() as f64;
    let dev = |s: Vec<f64>| s.into_iter().fold(0.0, |m, x| f64::max(m, (x - inv_n).abs()));
    let achieved = f64::max(dev(a.row_sums()), dev(a.col_sums()));
    (achieved <= eps, achieved)
}

/// `ε*` of a plan given in log form, using logsumexp for its marginals.
pub fn log_marginal_error(log_p: &Matrix) -> f64 {
    let n = log_p.rows();
    let inv_n = 1.0 / n as f64;
    let rows = (0..n).map(|i| exp(logsumexp(log_p.row(i).iter().copied())));
    let cols = (0..n).map(|j| exp(logsumexp((0..n).map(|i| log_p[(i, j)]))));
    rows.chain(cols).fold(0.0, |m, s| f64::max(m, (s - inv_n).abs()))
}

/// `μ(w, w') = max_i(log w_i − log w'_i) − min_i(log w_i − log w'_i)`, the
/// log of the largest cross-ratio `w_i w'_j / (w_j w'_i)`.
pub fn mu_metric(w: &[f64], w2: &[f64]) -> Result<f64> {
    check_positive(w)?;
    check_positive(w2)?;
    Ok(mu_log(
        &w.iter().map(|a| ln(*a)).collect::<Vec<_>>(),
        &w2.iter().map(|a| ln(*a)).collect::<Vec<_>>(),
    ))
}

/// `μ` on vectors already in log form.
pub fn mu_log(log_w: &[f64], log_w2: &[f64]) -> f64 {
    let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
    for (a, b) in log_w.iter().zip(log_w2) {
        let d = a - b;
        hi = hi.max(d);
        lo = lo.min(d);
    }
    if hi < lo {
        0.0
    } else {
        hi - lo
    }
}

/// `log φ(Q)` where `φ(Q) = max_{ijkl} Q_ik Q_jl / (Q_jk Q_il)`.
///
/// For fixed columns `(k, l)` the ratio is `exp(a_i − a_j)` with
/// `a_i = log Q_ik − log Q_il`, so the quadruple max is the largest spread
/// of `a` over column pairs: `O(n³)`.
pub fn log_phi(k: &GibbsKernel) -> f64 {
    let n = k.n();
    let lq = &k.log;
    let mut best: f64 = 0.0;
    for c1 in 0..n {
        for c2 in (c1 + 1)..n {
            let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
            for i in 0..n {
                let a = lq[(i, c1)] - lq[(i, c2)];
                hi = hi.max(a);
                lo = lo.min(a);
            }
            best = best.max(hi - lo);
        }
    }
    best
}

pub fn phi(k: &GibbsKernel) -> f64 {
    exp(log_phi(k))
}

/// `η = (√φ − 1)/(√φ + 1) = tanh(log φ / 4)`.
pub fn eta(k: &GibbsKernel) -> f64 {
    libm::tanh(log_phi(k) / 4.0)
}

/// Outcome of [`sinkhorn_solve`].
#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    pub scaling: ScalingPair,
    pub plan: TransportPlan,
    pub iterations: usize,
}

/// One full sweep `A → g(f(A))` on log scalings: first `q`, then `w`.
pub fn sinkhorn_sweep(k: &GibbsKernel, s: &ScalingPair) -> ScalingPair {
    let n = k.n();
    let ln_n = ln(n as f64);
    let lq = &k.log;
    let log_q: Vec<f64> = (0..n)
        .map(|j| -ln_n - logsumexp((0..n).map(|i| s.log_w[i] + lq[(i, j)])))
        .collect();
    let log_w: Vec<f64> = (0..n)
        .map(|i| -ln_n - logsumexp((0..n).map(|j| lq[(i, j)] + log_q[j])))
        .collect();
    ScalingPair { log_w, log_q }
}

/// Alternates column and row normalization from `Q` until the plan is in
/// `S_tol`. Returns gauge-fixed scalings (`Σ log w = 0`).
pub fn sinkhorn_solve(k: &GibbsKernel, tol: f64, max_iters: usize) -> Result<SinkhornSolution> {
    sinkhorn_from(k, ScalingPair::ones(k.n()), tol, max_iters)
}

pub fn sinkhorn_from(k: &GibbsKernel, start: ScalingPair, tol: f64, max_iters: usize) -> Result<SinkhornSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tol",
            value: tol,
        });
    }
    let mut s = start;
    let mut achieved = log_marginal_error(&s.log_plan(k));
    for it in 1..=max_iters {
        s = sinkhorn_sweep(k, &s);
        achieved = log_marginal_error(&s.log_plan(k));
        if achieved <= tol {
            let scaling = s.gauge_fixed();
            let plan = scaling.plan(k);
            return Ok(SinkhornSolution {
                scaling,
                plan,
                iterations: it,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iters,
        achieved,
    })
}

/// Per-sweep projective distances to a reference solution.
#[derive(Debug, Clone)]
pub struct ContractionReport {
    pub eta: f64,
    /// `μ(w_m, w*)` for `m = 0..=steps`.
    pub mu_w: Vec<f64>,
    pub mu_q: Vec<f64>,
    /// Largest observed `μ_{m+1}/μ_m` over both sequences (for `q` from
    /// `m = 1`), skipping denominators below `1e−12`.
    pub worst_ratio: f64,
    pub holds: bool,
}

/// Runs Sinkhorn sweeps from `start` and checks
/// `μ(w_{m+1}, w*) ≤ η μ(w_m, w*)` (and the same for `q`) up to `1e−9`.
pub fn contraction_check(
    k: &GibbsKernel,
    start: &ScalingPair,
    reference: &ScalingPair,
    steps: usize,
) -> ContractionReport {
    let eta = eta(k);
    let mut s = start.clone();
    let mut mu_w = alloc::vec![mu_log(&s.log_w, &reference.log_w)];
    let mut mu_q = alloc::vec![mu_log(&s.log_q, &reference.log_q)];
    for _ in 0..steps {
        s = sinkhorn_sweep(k, &s);
        mu_w.push(mu_log(&s.log_w, &reference.log_w));
        mu_q.push(mu_log(&s.log_q, &reference.log_q));
    }
    // A sweep recomputes `q` from `w` alone, so the starting `q` carries no
    // information and its first ratio is not a contraction step.
    let mut worst: f64 = 0.0;
    for (seq, first) in [(&mu_w, 0), (&mu_q, 1)] {
        for m in first..steps {
            if seq[m] >= 1e-12 {
                worst = worst.max(seq[m + 1] / seq[m]);
            }
        }
    }
    ContractionReport {
        eta,
        mu_w,
        mu_q,
        worst_ratio: worst,
        holds: worst <= eta + 1e-9,
    }
}

/// Displacements of the two half-steps on a decomposed `A = diag(w) Q diag(q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingShiftCheck {
    pub eps: f64,
    /// `μ(q, q')` where `f(A) = diag(w) Q diag(q')`.
    pub mu_q: f64,
    /// `μ(w, w')` where `g(A) = diag(w') Q diag(q)`.
    pub mu_w: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Checks `μ(q, q') ≤ 4nε` and `μ(w, w') ≤ 4nε` for `A = diag(w) Q diag(q)`
/// with `ε = ε*(A) < 1/(4n)`.
pub fn scaling_shift_check(k: &GibbsKernel, decomposition: &ScalingPair) -> Result<ScalingShiftCheck> {
    let n = k.n();
    let a = decomposition.plan(k);
    let eps = a.marginal_error();
    if !(eps < 1.0 / (4.0 * n as f64)) {
        return Err(Error::InvalidParameter {
            name: "eps",
            value: eps,
        });
    }
    let fa = f_map(a.matrix())?;
    let ga = g_map(a.matrix())?;
    // f(A)_ij = w_i Q_ij q'_j  ⇒  log q'_j = log f(A)_ij − log w_i − log Q_ij, any i.
    let log_q2: Vec<f64> = (0..n)
        .map(|j| ln(fa[(0, j)]) - decomposition.log_w[0] - k.log[(0, j)])
        .collect();
    let log_w2: Vec<f64> = (0..n)
        .map(|i| ln(ga[(i, 0)]) - decomposition.log_q[0] - k.log[(i, 0)])
        .collect();
    let mu_q = mu_log(&decomposition.log_q, &log_q2);
    let mu_w = mu_log(&decomposition.log_w, &log_w2);
    let bound = 4.0 * n as f64 * eps;
    Ok(ScalingShiftCheck {
        eps,
        mu_q,
        mu_w,
        bound,
        holds: mu_q <= bound && mu_w <= bound,
    })
}

/// Smallest depth for which the convergence bound applies:
/// `64 n³ e^{3r/λ} r`.
pub fn projective_bound_min_depth(n: usize, r: f64, lambda: f64) -> f64 {
    let nf = n as f64;
    64.0 * nf * nf * nf * exp(3.0 * r / lambda) * r
}

/// `36 n^{3/2} e^{r/λ} √r / (√ℓ (1 − η))`, the bound on
/// `max{μ(w^(k), w*), μ(q^(k), q*)}` at the almost doubly stochastic layer.
pub fn projective_bound(n: usize, r: f64, lambda: f64, eta: f64, ell: usize) -> Result<f64> {
    let required = projective_bound_min_depth(n, r, lambda);
    if (ell as f64) < required {
        return Err(Error::BoundNotApplicable {
            ell: ell as f64,
            required,
        });
    }
    let nf = n as f64;
    Ok(36.0 * nf * sqrt(nf) * exp(r / lambda) * sqrt(r) / (sqrt(ell as f64) * (1.0 - eta)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn uniform(n: usize) -> Matrix {
        Matrix::from_fn(n, n, |_, _| 1.0 / (n * n) as f64)
    }

    #[test]
    fn gibbs_examples() {
        let c = CostMatrix::from_matrix(Matrix::zeros(2, 2)).unwrap();
        let k = gibbs_kernel(&c, 1.0).unwrap();
        assert!(k
            .matrix()
            .as_slice()
            .iter()
            .all(|q| (q - (-1.0f64).exp()).abs() < 1e-16));
        let c = CostMatrix::from_matrix(Matrix::from_rows(&[[0.0, 0.5625], [0.5625, 0.0]]).unwrap()).unwrap();
        let k = gibbs_kernel(&c, 1e9).unwrap();
        assert!(k.log().as_slice().iter().all(|l| (l + 1.0).abs() < 1e-8));
        assert!(gibbs_kernel(&c, 0.0).is_err());
    }

    #[test]
    fn row_col_examples() {
        for n in 1..5 {
            assert!(row_fn(&uniform(n)).unwrap().iter().all(|r| (r - 1.0).abs() < 1e-14));
            assert!(col_fn(&uniform(n)).unwrap().iter().all(|r| (r - 1.0).abs() < 1e-14));
            let diag = Matrix::identity(n).scale(1.0 / n as f64);
            assert!(row_fn(&diag).unwrap().iter().all(|r| (r - 1.0).abs() < 1e-14));
        }
        let bad = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(row_fn(&bad), Err(Error::NonPositiveSum(1)));
        assert_eq!(col_fn(&bad), Err(Error::NonPositiveSum(1)));
    }

    #[test]
    fn f_g_normalize() {
        let a = uniform(3);
        assert_eq!(f_map(&a).unwrap(), a);
        let b = Matrix::from_rows(&[[0.2, 0.1, 0.4], [0.3, 0.9, 0.05], [0.5, 0.2, 0.7]]).unwrap();
        let gf = g_map(&f_map(&b).unwrap()).unwrap();
        for s in gf.row_sums() {
            assert!((s - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn s_eps_examples() {
        assert_eq!(s_eps_membership(&uniform(4), 0.0), (true, 0.0));
        let mut a = uniform(4);
        a[(1, 2)] += 0.01;
        let (inside, e) = s_eps_membership(&a, 0.005);
        assert!(!inside);
        assert!((e - 0.01).abs() < 1e-15);
    }

    #[test]
    fn mu_examples() {
        let w = [0.3, 1.7, 0.2];
        assert!(mu_metric(&w, &[0.6, 3.4, 0.4]).unwrap().abs() < 1e-15);
        assert!((mu_metric(&[1.0, 2.0], &[1.0, 1.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((mu_metric(&[1.0, 2.0], &[2.0, 1.0]).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!(mu_metric(&[1.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn phi_examples() {
        let k = GibbsKernel::from_positive(&Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap()).unwrap();
        assert!((phi(&k) - 1.5).abs() < 1e-14);
        let rank1 = Matrix::from_fn(3, 3, |i, j| (1.0 + i as f64) * (2.0 + j as f64));
        let k = GibbsKernel::from_positive(&rank1).unwrap();
        assert!((phi(&k) - 1.0).abs() < 1e-14);
        assert!(eta(&k).abs() < 1e-14);
        let e = eta(&GibbsKernel::from_positive(&Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap()).unwrap());
        let s = 1.5f64.sqrt();
        assert!((e - (s - 1.0) / (s + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn single_point_sinkhorn() {
        let c = CostMatrix::from_matrix(Matrix::from_rows(&[[0.3]]).unwrap()).unwrap();
        let sol = sinkhorn_solve(&gibbs_kernel(&c, 0.01).unwrap(), 1e-12, 10).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!((sol.plan.matrix()[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_cost_gives_uniform_plan() {
        let c = CostMatrix::from_matrix(Matrix::from_fn(4, 4, |_, _| 0.7)).unwrap();
        let sol = sinkhorn_solve(&gibbs_kernel(&c, 0.05).unwrap(), 1e-13, 10).unwrap();
        assert!(sol.plan.matrix().max_abs_diff(&uniform(4)) < 1e-14);
        assert!(sol.scaling.log_w.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn not_converged_reports_achieved_error() {
        let c = CostMatrix::from_matrix(Matrix::from_rows(&[[0.0, 1.0], [0.2, 0.0]]).unwrap()).unwrap();
        match sinkhorn_solve(&gibbs_kernel(&c, 0.01).unwrap(), 1e-300, 3) {
            Err(Error::NotConverged {
                iterations: 3,
                achieved,
            }) => assert!(achieved > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn contraction_from_reference_is_zero() {
        let c = CostMatrix::from_matrix(Matrix::from_rows(&[[0.0, 0.4], [0.9, 0.1]]).unwrap()).unwrap();
        let k = gibbs_kernel(&c, 1.0).unwrap();
        let sol = sinkhorn_solve(&k, 1e-15, 1000).unwrap();
        let rep = contraction_check(&k, &sol.scaling, &sol.scaling, 5);
        assert!(rep.mu_w.iter().chain(&rep.mu_q).all(|m| *m < 1e-12));
        assert!(rep.holds);
    }

    #[test]
    fn rank_one_kernel_converges_in_one_sweep() {
        let rank1 = Matrix::from_fn(3, 3, |i, j| (0.5 + i as f64) * (1.0 + 2.0 * j as f64));
        let k = GibbsKernel::from_positive(&rank1).unwrap();
        let sol = sinkhorn_solve(&k, 1e-14, 100).unwrap();
        assert_eq!(sol.iterations, 1);
        let start = ScalingPair::from_positive(&[1.0, 5.0, 0.1], &[2.0, 0.3, 1.0]).unwrap();
        let rep = contraction_check(&k, &start, &sol.scaling, 2);
        assert!(rep.mu_w[1] < 1e-12 && rep.mu_q[1] < 1e-12);
    }

    #[test]
    fn scaling_shift_exact_doubly_stochastic() {
        let k = GibbsKernel::from_positive(&uniform(3)).unwrap();
        let out = scaling_shift_check(&k, &ScalingPair::ones(3)).unwrap();
        assert!(out.mu_q < 1e-14 && out.mu_w < 1e-14 && out.holds);
        let big = GibbsKernel::from_positive(&Matrix::from_fn(2, 2, |_, _| 1.0)).unwrap();
        assert!(scaling_shift_check(&big, &ScalingPair::ones(2)).is_err());
    }

    #[test]
    fn projective_bound_scaling_and_precondition() {
        let req = projective_bound_min_depth(2, 0.5, 1.0).ceil() as usize;
        let a = projective_bound(2, 0.5, 1.0, 0.3, req).unwrap();
        let b = projective_bound(2, 0.5, 1.0, 0.3, 4 * req).unwrap();
        assert!((a / b - 2.0).abs() < 1e-12);
        assert!(matches!(
            projective_bound(2, 0.5, 1.0, 0.3, req - 1),
            Err(Error::BoundNotApplicable { .. })
        ));
        assert_eq!(projective_bound(2, 0.0, 1.0, 0.3, 1).unwrap(), 0.0);
    }

    #[test]
    fn plan_invariant_under_rescaling() {
        let c = CostMatrix::from_matrix(Matrix::from_rows(&[[0.0, 0.4], [0.9, 0.1]]).unwrap()).unwrap();
        let k = gibbs_kernel(&c, 0.5).unwrap();
        let s = ScalingPair::from_positive(&[0.2, 3.0], &[1.5, 0.7]).unwrap();
        let scaled = ScalingPair {
            log_w: s.log_w.iter().map(|a| a + 2.5).collect(),
            log_q: s.log_q.iter().map(|a| a - 2.5).collect(),
        };
        assert!(s.plan(&k).matrix().max_abs_diff(scaled.plan(&k).matrix()) < 1e-15);
        assert_eq!(
            vec![s.gauge_fixed().log_w.iter().sum::<f64>().abs() < 1e-15],
            vec![true]
        );
    }
}
