//! Dual of entropic OT and its adaptive-stepsize gradient descent.
//!
//! ```text
//! L(u, v) = λ Σ_ij exp((−C_ij + u_i + v_j)/λ − 1) − (1/n) Σ_i u_i − (1/n) Σ_j v_j
//! ```
//!
//! `M_ij = exp((−C_ij + u_i + v_j)/λ − 1)` is kept in log form; row and column
//! sums go through a max-shifted logsumexp so that `λ = 0.005` (where
//! `e^{−C/λ}` falls below `1e−40`) stays exact in relative terms.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{exp, logsumexp, max_abs, norm2};
use crate::matrix::Matrix;
use crate::problem::{cost_matrix, CostMatrix, ProblemInstance};

/// Dual potentials after `step` gradient steps from zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DualIterate {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub step: usize,
}

impl DualIterate {
    pub fn zero(n: usize) -> Self {
        Self {
            u: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn new(u: Vec<f64>, v: Vec<f64>) -> Self {
        Self { u, v, step: 0 }
    }

    pub fn n(&self) -> usize {
        self.u.len()
    }

    /// `θ = [u; v]`.
    pub fn theta(&self) -> Vec<f64> {
        self.u.iter().chain(&self.v).copied().collect()
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.theta())
    }

    /// `(u + c·1, v − c·1)`; leaves the kernel unchanged.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            u: self.u.iter().map(|x| x + c).collect(),
            v: self.v.iter().map(|x| x - c).collect(),
            step: self.step,
        }
    }
}

/// `M` in log form: `log M_ij = (−C_ij + u_i + v_j)/λ − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    log: Matrix,
}

impl KernelMatrix {
    pub fn from_log(log: Matrix) -> Self {
        Self { log }
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

    pub fn log_row_sums(&self) -> Vec<f64> {
        (0..self.n())
            .map(|i| logsumexp(self.log.row(i).iter().copied()))
            .collect()
    }

    pub fn log_col_sums(&self) -> Vec<f64> {
        let n = self.n();
        (0..n).map(|j| logsumexp((0..n).map(|i| self.log[(i, j)]))).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.log_row_sums().into_iter().map(exp).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.log_col_sums().into_iter().map(exp).collect()
    }
}

/// Per-layer stepsize `γ_ℓ`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "mode", rename_all = "lowercase"))]
pub enum StepsizeSchedule {
    /// Same `γ` at every layer.
    Fixed { gamma: f64 },
    /// `γ = e^{−2r/λ} / (n+2)`, the inverse smoothness constant on `B(r)`.
    Radius { r: f64 },
}

impl StepsizeSchedule {
    pub fn gamma(&self, n: usize, lambda: f64) -> f64 {
        match *self {
            Self::Fixed { gamma } => gamma,
            Self::Radius { r } => 1.0 / smoothness_zeta(n, r, lambda),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Fixed { gamma } if !(gamma > 0.0 && gamma.is_finite()) => Err(Error::InvalidParameter {
                name: "gamma",
                value: gamma,
            }),
            Self::Radius { r } if !(r >= 0.0 && r.is_finite()) => Err(Error::InvalidParameter { name: "r", value: r }),
            _ => Ok(()),
        }
    }
}

/// `(∇_u L, ∇_v L) = (M1 − 1/n, Mᵀ1 − 1/n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl Gradient {
    pub fn norm_sq(&self) -> f64 {
        self.u.iter().chain(&self.v).map(|g| g * g).sum()
    }

    /// Max-norm of the stacked gradient, i.e. the `S_ε` marginal error of `M`.
    pub fn max_abs(&self) -> f64 {
        f64::max(max_abs(&self.u), max_abs(&self.v))
    }
}

fn check_shapes(c: &CostMatrix, iter: &DualIterate) -> Result<()> {
    if iter.u.len() != c.n() || iter.v.len() != c.n() {
        return Err(Error::Shape {
            expected: (c.n(), 2),
            got: (iter.u.len(), iter.v.len()),
        });
    }
    Ok(())
}

pub fn kernel(c: &CostMatrix, iter: &DualIterate, lambda: f64) -> Result<KernelMatrix> {
    check_shapes(c, iter)?;
    let n = c.n();
    Ok(KernelMatrix {
        log: Matrix::from_fn(n, n, |i, j| (-c.get(i, j) + iter.u[i] + iter.v[j]) / lambda - 1.0),
    })
}

pub fn dual_objective(c: &CostMatrix, iter: &DualIterate, lambda: f64) -> Result<f64> {
    let k = kernel(c, iter, lambda)?;
    let n = c.n() as f64;
    let mass: f64 = k.row_sums().iter().sum();
    let su: f64 = iter.u.iter().sum();
    let sv: f64 = iter.v.iter().sum();
    Ok(lambda * mass - su / n - sv / n)
}

fn grad_from_kernel(k: &KernelMatrix) -> Gradient {
    let inv_n = 1.0 / k.n() as f64;
    Gradient {
        u: k.row_sums().into_iter().map(|s| s - inv_n).collect(),
        v: k.col_sums().into_iter().map(|s| s - inv_n).collect(),
    }
}

pub fn grad(c: &CostMatrix, iter: &DualIterate, lambda: f64) -> Result<Gradient> {
    Ok(grad_from_kernel(&kernel(c, iter, lambda)?))
}

/// Diagonals of `D` and `D'`: `γ/(Σ_j M_ij + 1)` and `γ/(Σ_i M_ij + 1)`.
pub fn adaptive_stepsizes(k: &KernelMatrix, gamma: f64) -> (Vec<f64>, Vec<f64>) {
    let d = k.row_sums().into_iter().map(|s| gamma / (s + 1.0)).collect();
    let dp = k.col_sums().into_iter().map(|s| gamma / (s + 1.0)).collect();
    (d, dp)
}

/// One step `u⁺ = u − D∇_u L`, `v⁺ = v − D'∇_v L` with stepsizes taken at
/// the current iterate.
pub fn gd_step(iter: &DualIterate, c: &CostMatrix, lambda: f64, gamma: f64) -> Result<DualIterate> {
    let k = kernel(c, iter, lambda)?;
    Ok(step_with_kernel(iter, &k, gamma))
}

fn step_with_kernel(iter: &DualIterate, k: &KernelMatrix, gamma: f64) -> DualIterate {
    let g = grad_from_kernel(k);
    let (d, dp) = adaptive_stepsizes(k, gamma);
    DualIterate {
        u: (0..iter.n()).map(|i| iter.u[i] - d[i] * g.u[i]).collect(),
        v: (0..iter.n()).map(|j| iter.v[j] - dp[j] * g.v[j]).collect(),
        step: iter.step + 1,
    }
}

/// Per-iterate diagnostics recorded by [`gd_run`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub grad_u_norm: f64,
    pub grad_v_norm: f64,
    pub objective: f64,
    /// `ε*` of the kernel: max-norm marginal error against `1/n`.
    pub marginal_error: f64,
    pub gamma: f64,
}

impl StepRecord {
    pub fn grad_norm_sq(&self) -> f64 {
        self.grad_u_norm * self.grad_u_norm + self.grad_v_norm * self.grad_v_norm
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub lambda: f64,
    pub cost: CostMatrix,
    /// `iterates[ℓ]` holds `ℓ` steps; `iterates[0]` is zero.
    pub iterates: Vec<DualIterate>,
    /// One record per iterate.
    pub records: Vec<StepRecord>,
}

impl Trajectory {
    /// `max_k ‖θ_k‖₂` over the stored iterates.
    pub fn radius(&self) -> f64 {
        self.iterates.iter().map(DualIterate::norm).fold(0.0, f64::max)
    }

    pub fn last(&self) -> &DualIterate {
        self.iterates.last().expect("trajectory always holds the zero iterate")
    }

    /// `min_{1 ≤ k ≤ ℓ} ‖∇L(θ_k)‖²`, with `ℓ` the trajectory depth.
    pub fn min_grad_norm_sq(&self) -> f64 {
        self.records
            .iter()
            .skip(1)
            .map(StepRecord::grad_norm_sq)
            .fold(f64::INFINITY, f64::min)
    }

    /// Index of the iterate with the smallest marginal error (first on ties).
    pub fn best_marginal_step(&self) -> usize {
        let mut best = 0;
        for (k, r) in self.records.iter().enumerate() {
            if r.marginal_error < self.records[best].marginal_error {
                best = k;
            }
        }
        best
    }

    pub fn kernel_at(&self, step: usize) -> KernelMatrix {
        kernel(&self.cost, &self.iterates[step], self.lambda).expect("trajectory iterates match the cost shape")
    }
}

pub fn gd_run(inst: &ProblemInstance, depth: usize, schedule: StepsizeSchedule) -> Result<Trajectory> {
    schedule.validate()?;
    let c = cost_matrix(inst);
    let (n, lambda) = (inst.n(), inst.lambda());
    let gamma = schedule.gamma(n, lambda);
    let mut iterates = Vec::with_capacity(depth + 1);
    let mut records = Vec::with_capacity(depth + 1);
    let mut cur = DualIterate::zero(n);
    for step in 0..=depth {
        let k = kernel(&c, &cur, lambda)?;
        let g = grad_from_kernel(&k);
        let mass: f64 = k.row_sums().iter().sum();
        let objective = lambda * mass - cur.u.iter().sum::<f64>() / n as f64 - cur.v.iter().sum::<f64>() / n as f64;
        records.push(StepRecord {
            step,
            grad_u_norm: norm2(&g.u),
            grad_v_norm: norm2(&g.v),
            objective,
            marginal_error: g.max_abs(),
            gamma,
        });
        let next = (step < depth).then(|| step_with_kernel(&cur, &k, gamma));
        iterates.push(cur);
        match next {
            Some(nx) => cur = nx,
            None => break,
        }
    }
    Ok(Trajectory {
        lambda,
        cost: c,
        iterates,
        records,
    })
}

/// `ζ = (n+2) e^{2r/λ}`.
pub fn smoothness_zeta(n: usize, r: f64, lambda: f64) -> f64 {
    (n as f64 + 2.0) * exp(2.0 * r / lambda)
}

/// Hessian of `L` in `θ = [u; v]`:
/// `(1/λ) [[diag(M1), M], [Mᵀ, diag(Mᵀ1)]]`.
pub fn hessian(c: &CostMatrix, iter: &DualIterate, lambda: f64) -> Result<Matrix> {
    let k = kernel(c, iter, lambda)?;
    let n = c.n();
    let m = k.matrix();
    let (rs, cs) = (k.row_sums(), k.col_sums());
    Ok(Matrix::from_fn(2 * n, 2 * n, |a, b| {
        let h = match (a < n, b < n) {
            (true, true) => {
                if a == b {
                    rs[a]
                } else {
                    0.0
                }
            }
            (true, false) => m[(a, b - n)],
            (false, true) => m[(b, a - n)],
            (false, false) => {
                if a == b {
                    cs[a - n]
                } else {
                    0.0
                }
            }
        };
        h / lambda
    }))
}

/// Upper bound `ζ (n e^{r/λ} + 1) r / ℓ` on `min_{k≤ℓ} ‖∇L(θ_k)‖²`.
pub fn min_grad_bound(n: usize, r: f64, lambda: f64, ell: usize) -> Result<f64> {
    if ell == 0 {
        return Err(Error::InvalidParameter {
            name: "ell",
            value: 0.0,
        });
    }
    let zeta = smoothness_zeta(n, r, lambda);
    Ok(zeta * (n as f64 * exp(r / lambda) + 1.0) * r / ell as f64)
}

/// Dual point `(λ log w + c, λ log q − c)` for a log-scaling pair, with the
/// gauge `c` chosen so that `Σ u* = sum_u`.
pub fn dual_lift(log_w: &[f64], log_q: &[f64], lambda: f64, sum_u: f64) -> DualIterate {
    let n = log_w.len() as f64;
    let raw_sum: f64 = log_w.iter().map(|lw| lambda * lw).sum();
    let c = (sum_u - raw_sum) / n;
    DualIterate {
        u: log_w.iter().map(|lw| lambda * lw + c).collect(),
        v: log_q.iter().map(|lq| lambda * lq - c).collect(),
        step: 0,
    }
}

fn weighted_dist_sq(theta: &[f64], star: &[f64], inv_weights: &[f64]) -> f64 {
    theta
        .iter()
        .zip(star)
        .zip(inv_weights)
        .map(|((a, b), w)| (a - b) * (a - b) * w)
        .sum()
}

fn inverse_stepsizes(traj: &Trajectory, k: usize) -> Vec<f64> {
    let kern = traj.kernel_at(k);
    let gamma = traj.records[k].gamma;
    let (d, dp) = adaptive_stepsizes(&kern, gamma);
    d.iter().chain(&dp).map(|s| 1.0 / s).collect()
}

/// `Δ_k = ‖θ_k − θ*‖²_{Λ_k^{-1}}` for every stored iterate.
pub fn delta_sequence(traj: &Trajectory, star: &DualIterate) -> Vec<f64> {
    let ts = star.theta();
    (0..traj.iterates.len())
        .map(|k| weighted_dist_sq(&traj.iterates[k].theta(), &ts, &inverse_stepsizes(traj, k)))
        .collect()
}

/// One-step change `‖θ_{k+1} − θ*‖²_{Λ_k^{-1}} − ‖θ_k − θ*‖²_{Λ_k^{-1}}`, both
/// measured in the metric of step `k`. Nonpositive whenever `γ ≤ 1/ζ` on a
/// ball holding the iterates and `θ*`.
pub fn one_step_decrease(traj: &Trajectory, star: &DualIterate) -> Vec<f64> {
    let ts = star.theta();
    (0..traj.iterates.len().saturating_sub(1))
        .map(|k| {
            let w = inverse_stepsizes(traj, k);
            weighted_dist_sq(&traj.iterates[k + 1].theta(), &ts, &w)
                - weighted_dist_sq(&traj.iterates[k].theta(), &ts, &w)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::grid_instance;

    fn single(c: f64) -> CostMatrix {
        CostMatrix::from_matrix(Matrix::from_rows(&[[c]]).unwrap()).unwrap()
    }

    #[test]
    fn kernel_examples() {
        let c = single(0.0);
        let k = kernel(&c, &DualIterate::zero(1), 1.0).unwrap();
        assert!((k.matrix()[(0, 0)] - (-1.0f64).exp()).abs() < 1e-15);
        let k = kernel(&c, &DualIterate::new(vec![1.0], vec![0.0]), 1.0).unwrap();
        assert_eq!(k.log()[(0, 0)], 0.0);
        assert_eq!(k.matrix()[(0, 0)], 1.0);
    }

    #[test]
    fn grid_instance_kernel_spot_check() {
        let inst = grid_instance(4, 9).unwrap();
        let c = cost_matrix(&inst);
        let k = kernel(&c, &DualIterate::zero(4), 0.005).unwrap();
        let m = k.matrix();
        for i in 0..4 {
            for j in 0..4 {
                let direct = (-c.get(i, j) / 0.005 - 1.0).exp();
                assert!((m[(i, j)] - direct).abs() <= 1e-15 * direct.max(1e-300));
            }
        }
    }

    #[test]
    fn objective_and_gradient_single_entry() {
        let c = single(0.0);
        let z = DualIterate::zero(1);
        let e1 = (-1.0f64).exp();
        assert!((dual_objective(&c, &z, 1.0).unwrap() - e1).abs() < 1e-15);
        let g = grad(&c, &z, 1.0).unwrap();
        assert!((g.u[0] - (e1 - 1.0)).abs() < 1e-15);
        assert!((g.v[0] - (e1 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn stepsizes_defining_identity() {
        let k = KernelMatrix::from_log(Matrix::from_rows(&[[0.0]]).unwrap());
        assert_eq!(adaptive_stepsizes(&k, 1.0), (vec![0.5], vec![0.5]));

        let inst = grid_instance(4, 2).unwrap();
        let c = cost_matrix(&inst);
        let it = DualIterate::new(vec![0.01, 0.02, -0.01, 0.0], vec![0.0, 0.03, 0.01, -0.02]);
        let k = kernel(&c, &it, 0.005).unwrap();
        let (d, dp) = adaptive_stepsizes(&k, 0.01);
        let m = k.matrix();
        for i in 0..4 {
            let rs: f64 = (0..4).map(|j| m[(i, j)]).sum();
            let cs: f64 = (0..4).map(|j| m[(j, i)]).sum();
            assert!((d[i] * (rs + 1.0) - 0.01).abs() < 1e-15);
            assert!((dp[i] * (cs + 1.0) - 0.01).abs() < 1e-15);
        }
    }

    #[test]
    fn stationary_point_is_fixed() {
        // M = (1/n²)·ones when C = 0 and u_i + v_j = λ(1 − 2 ln n).
        let n = 3;
        let lambda = 0.7;
        let c = CostMatrix::from_matrix(Matrix::zeros(n, n)).unwrap();
        let half = 0.5 * lambda * (1.0 - 2.0 * (n as f64).ln());
        let it = DualIterate::new(vec![half; n], vec![half; n]);
        let g = grad(&c, &it, lambda).unwrap();
        assert!(g.max_abs() < 1e-15);
        let next = gd_step(&it, &c, lambda, 0.3).unwrap();
        assert!(crate::math::max_abs_diff(&next.u, &it.u) < 1e-15);
        assert_eq!(next.step, 1);
    }

    #[test]
    fn first_step_from_zero() {
        let inst = grid_instance(3, 5).unwrap().with_lambda(0.2).unwrap();
        let c = cost_matrix(&inst);
        let gamma = 0.4;
        let next = gd_step(&DualIterate::zero(3), &c, 0.2, gamma).unwrap();
        for i in 0..3 {
            let m0: f64 = (0..3).map(|j| (-c.get(i, j) / 0.2 - 1.0).exp()).sum();
            let want = -gamma / (m0 + 1.0) * (m0 - 1.0 / 3.0);
            assert!((next.u[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn depth_zero_run() {
        let inst = grid_instance(4, 0).unwrap();
        let t = gd_run(&inst, 0, StepsizeSchedule::Fixed { gamma: 0.01 }).unwrap();
        assert_eq!(t.iterates.len(), 1);
        assert_eq!(t.iterates[0], DualIterate::zero(4));
        assert_eq!(t.records.len(), 1);
    }

    #[test]
    fn zeta_examples() {
        assert_eq!(smoothness_zeta(1, 0.0, 1.0), 3.0);
        let z = smoothness_zeta(2, 2f64.ln(), 1.0);
        assert!((z - 16.0).abs() < 1e-12);
    }

    #[test]
    fn min_grad_bound_scaling() {
        let a = min_grad_bound(3, 0.8, 1.0, 100).unwrap();
        let b = min_grad_bound(3, 0.8, 1.0, 200).unwrap();
        assert!((a / b - 2.0).abs() < 1e-12);
        assert_eq!(min_grad_bound(3, 0.0, 1.0, 10).unwrap(), 0.0);
        assert!(min_grad_bound(3, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn hessian_single_point_is_rank_deficient() {
        let h = hessian(&single(0.3), &DualIterate::zero(1), 1.0).unwrap();
        assert_eq!(h[(0, 0)], h[(1, 1)]);
        assert_eq!(h[(0, 1)], h[(0, 0)]);
        let ev = crate::linalg::symmetric_eigenvalues(&h);
        assert!(ev[0].abs() < 1e-15);
    }

    #[test]
    fn schedule_validation() {
        assert!(StepsizeSchedule::Fixed { gamma: 0.0 }.validate().is_err());
        assert!(StepsizeSchedule::Radius { r: -1.0 }.validate().is_err());
        let g = StepsizeSchedule::Radius { r: 0.5 }.gamma(3, 1.0);
        assert!((g - (-1.0f64).exp() / 5.0).abs() < 1e-15);
    }

    #[test]
    fn lift_gauge() {
        let d = dual_lift(&[0.0, 1.0], &[2.0, -1.0], 0.5, 3.0);
        assert!((d.u.iter().sum::<f64>() - 3.0).abs() < 1e-15);
        assert!((d.u[1] - d.u[0] - 0.5).abs() < 1e-15);
        assert!((d.u[0] + d.v[0] - 0.5 * 2.0).abs() < 1e-15);
    }
}
