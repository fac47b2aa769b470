//! Independent ground truth: exhaustive permutation search, plain sorting,
//! and central differences. None of these share code with the solvers they
//! check.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::problem::CostMatrix;

/// Largest `n` accepted by [`brute_force_ot`] (9! = 362880 permutations).
pub const BRUTE_FORCE_MAX_N: usize = 9;

/// A permutation `i → perm[i]` (0-based) with its transport cost
/// `Σ_i C_{i, perm(i)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationPlan {
    perm: Vec<usize>,
    cost: f64,
}

impl PermutationPlan {
    pub fn new(perm: Vec<usize>, c: &CostMatrix) -> Result<Self> {
        let n = c.n();
        if perm.len() != n {
            return Err(Error::Shape {
                expected: (n, 1),
                got: (perm.len(), 1),
            });
        }
        if !is_bijection(&perm) {
            return Err(Error::NotPermutationLike);
        }
        let cost = perm_cost(c, &perm);
        Ok(Self { perm, cost })
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// The permutation with 1-based indices, as printed in reports.
    pub fn one_based(&self) -> Vec<usize> {
        self.perm.iter().map(|p| p + 1).collect()
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    /// `(1/n)·P` for the permutation matrix `P`.
    pub fn plan_matrix(&self) -> Matrix {
        let n = self.perm.len();
        Matrix::from_fn(n, n, |i, j| if self.perm[i] == j { 1.0 / n as f64 } else { 0.0 })
    }
}

fn is_bijection(perm: &[usize]) -> bool {
    let mut seen = alloc::vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

fn perm_cost(c: &CostMatrix, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| c.get(i, j)).sum()
}

/// Advances `p` to the next permutation in lexicographic order.
fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Exhaustive minimum over all `n!` permutations. Enumeration is
/// lexicographic and only a strictly smaller cost replaces the incumbent, so
/// ties resolve to the lexicographically first permutation.
pub fn brute_force_ot(c: &CostMatrix) -> Result<PermutationPlan> {
    let n = c.n();
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::TooLarge(n));
    }
    let mut p: Vec<usize> = (0..n).collect();
    let mut best = p.clone();
    let mut best_cost = perm_cost(c, &p);
    while next_permutation(&mut p) {
        let cost = perm_cost(c, &p);
        if cost < best_cost {
            best_cost = cost;
            best.copy_from_slice(&p);
        }
    }
    Ok(PermutationPlan {
        perm: best,
        cost: best_cost,
    })
}

/// Cost gap between the best and second-best permutation (`∞` for `n ≤ 1`).
pub fn permutation_cost_gap(c: &CostMatrix) -> Result<f64> {
    let n = c.n();
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::TooLarge(n));
    }
    let mut p: Vec<usize> = (0..n).collect();
    let (mut first, mut second) = (perm_cost(c, &p), f64::INFINITY);
    while next_permutation(&mut p) {
        let cost = perm_cost(c, &p);
        if cost < first {
            second = first;
            first = cost;
        } else if cost < second {
            second = cost;
        }
    }
    Ok(second - first)
}

/// Stable ascending sort.
pub fn sort_oracle(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    out.sort_by(|a, b| a.total_cmp(b));
    out
}

/// Central-difference gradient `(f(θ + h e_i) − f(θ − h e_i)) / 2h`.
pub fn finite_diff_grad<F>(objective: F, point: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidParameter { name: "h", value: h });
    }
    let mut probe = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        probe[i] = point[i] + h;
        let up = objective(&probe);
        probe[i] = point[i] - h;
        let down = objective(&probe);
        probe[i] = point[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Row-wise argmax of a nonnegative plan. Fails unless every row has a
/// unique maximum and the resulting map is a bijection.
pub fn round_plan(p: &Matrix, c: &CostMatrix) -> Result<PermutationPlan> {
    if let Some(k) = p.as_slice().iter().position(|a| !(*a >= 0.0)) {
        return Err(Error::NonPositiveEntry(k));
    }
    let mut perm = Vec::with_capacity(p.rows());
    for i in 0..p.rows() {
        let row = p.row(i);
        let mut arg = 0;
        for j in 1..row.len() {
            if row[j] > row[arg] {
                arg = j;
            }
        }
        if row.iter().enumerate().any(|(j, a)| j != arg && *a == row[arg]) {
            return Err(Error::NotPermutationLike);
        }
        perm.push(arg);
    }
    PermutationPlan::new(perm, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cost(rows: &[[f64; 2]]) -> CostMatrix {
        CostMatrix::from_matrix(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn brute_force_examples() {
        let p = brute_force_ot(&cost(&[[0.0, 1.0], [1.0, 0.0]])).unwrap();
        assert_eq!((p.one_based(), p.cost()), (vec![1, 2], 0.0));
        let p = brute_force_ot(&cost(&[[1.0, 0.0], [0.0, 1.0]])).unwrap();
        assert_eq!((p.one_based(), p.cost()), (vec![2, 1], 0.0));
    }

    #[test]
    fn ties_keep_lexicographic_first() {
        let c = CostMatrix::from_matrix(Matrix::zeros(3, 3)).unwrap();
        assert_eq!(brute_force_ot(&c).unwrap().perm(), &[0, 1, 2]);
    }

    #[test]
    fn size_guard() {
        let c = CostMatrix::from_matrix(Matrix::zeros(10, 10)).unwrap();
        assert_eq!(brute_force_ot(&c), Err(Error::TooLarge(10)));
    }

    #[test]
    fn lexicographic_enumeration_is_complete() {
        let mut p = vec![0, 1, 2, 3];
        let mut count = 1;
        while next_permutation(&mut p) {
            count += 1;
        }
        assert_eq!((count, p), (24, vec![3, 2, 1, 0]));
    }

    #[test]
    fn sort_examples() {
        assert_eq!(sort_oracle(&[0.5, 0.75, 0.25, 0.0]), vec![0.0, 0.25, 0.5, 0.75]);
        assert_eq!(sort_oracle(&[0.1, 0.2, 0.3]), vec![0.1, 0.2, 0.3]);
        assert_eq!(sort_oracle(&[0.3, 0.2, 0.1]), vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn finite_difference_examples() {
        let g = finite_diff_grad(|t| t.iter().map(|a| a * a).sum(), &[0.0; 3], 1e-4).unwrap();
        assert!(g.iter().all(|a| a.abs() < 1e-15));
        let a = [1.5, -2.0, 0.25];
        let g = finite_diff_grad(|t| t.iter().zip(&a).map(|(x, y)| x * y).sum(), &[0.3, 0.1, -0.7], 1e-5).unwrap();
        for (gi, ai) in g.iter().zip(&a) {
            assert!((gi - ai).abs() < 1e-9);
        }
        assert!(finite_diff_grad(|_| 0.0, &[0.0], 0.0).is_err());
    }

    #[test]
    fn round_examples() {
        let c = CostMatrix::from_matrix(Matrix::zeros(3, 3)).unwrap();
        let plan = PermutationPlan::new(vec![2, 0, 1], &c).unwrap();
        assert_eq!(round_plan(&plan.plan_matrix(), &c).unwrap().perm(), &[2, 0, 1]);
        let uniform = Matrix::from_fn(3, 3, |_, _| 1.0 / 9.0);
        assert_eq!(round_plan(&uniform, &c), Err(Error::NotPermutationLike));
        let clash = Matrix::from_rows(&[[0.4, 0.1, 0.0], [0.3, 0.0, 0.1], [0.0, 0.1, 0.3]]).unwrap();
        assert_eq!(round_plan(&clash, &c), Err(Error::NotPermutationLike));
    }

    #[test]
    fn plan_rejects_non_bijection() {
        let c = CostMatrix::from_matrix(Matrix::zeros(2, 2)).unwrap();
        assert_eq!(PermutationPlan::new(vec![1, 1], &c), Err(Error::NotPermutationLike));
    }

    #[test]
    fn cost_gap() {
        let gap = permutation_cost_gap(&cost(&[[0.0, 1.0], [1.0, 0.0]])).unwrap();
        assert_eq!(gap, 2.0);
    }
}
