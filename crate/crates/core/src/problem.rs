//! Transport instances and the squared-Euclidean cost.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Regularization used by the fixed-weight sorting experiments.
pub const DEFAULT_LAMBDA: f64 = 0.005;

/// Two point clouds of equal size `n` in `R^d` plus the entropic weight `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    x: Matrix,
    y: Matrix,
    lambda: f64,
}

impl ProblemInstance {
    pub fn new(x: Matrix, y: Matrix, lambda: f64) -> Result<Self> {
        if x.rows() == 0 || x.cols() == 0 {
            return Err(Error::InvalidInstance("need n >= 1 and d >= 1"));
        }
        if x.shape() != y.shape() {
            return Err(Error::Shape {
                expected: x.shape(),
                got: y.shape(),
            });
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                value: lambda,
            });
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::InvalidInstance("non-finite coordinates"));
        }
        Ok(Self { x, y, lambda })
    }

    /// One-dimensional instance from explicit lists.
    pub fn from_lists(x: &[f64], y: &[f64], lambda: f64) -> Result<Self> {
        let col = |v: &[f64]| Matrix::from_fn(v.len(), 1, |i, _| v[i]);
        Self::new(col(x), col(y), lambda)
    }

    /// Sorting instance: the given `x` against the grid `y_i = i/n`, i = 1..n.
    pub fn sorting(x: &[f64], lambda: f64) -> Result<Self> {
        Self::from_lists(x, &unit_grid(x.len()), lambda)
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                value: lambda,
            });
        }
        self.lambda = lambda;
        Ok(self)
    }

    /// Swaps source and target points.
    pub fn swapped(&self) -> Self {
        Self {
            x: self.y.clone(),
            y: self.x.clone(),
            lambda: self.lambda,
        }
    }
}

/// `C_ij = ‖x_i − y_j‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Matrix);

impl CostMatrix {
    pub fn from_matrix(c: Matrix) -> Result<Self> {
        if c.rows() != c.cols() {
            return Err(Error::Shape {
                expected: (c.rows(), c.rows()),
                got: c.shape(),
            });
        }
        Ok(Self(c))
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }
}

pub fn cost_matrix(inst: &ProblemInstance) -> CostMatrix {
    let (x, y) = (inst.x(), inst.y());
    CostMatrix(Matrix::from_fn(inst.n(), inst.n(), |i, j| {
        x.row(i).iter().zip(y.row(j)).map(|(a, b)| (a - b) * (a - b)).sum()
    }))
}

/// `[1/n, 2/n, …, n/n]`.
pub fn unit_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 / n as f64).collect()
}

/// Uniform integer in `0..bound` by rejection on a `u64` draw.
fn uniform_below(rng: &mut impl RngCore, bound: u64) -> u64 {
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let r = rng.next_u64();
        if r < zone {
            return r % bound;
        }
    }
}

/// Uniform random permutation of `0..n`.
///
/// Fisher–Yates from the back (`i = n-1 … 1`, swap `i` with `j ∈ [0, i]`),
/// drawing `j` by rejection sampling from ChaCha8 seeded through
/// `SeedableRng::seed_from_u64(seed)`. Identical seeds give identical
/// permutations on every platform.
pub fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = uniform_below(&mut rng, i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    perm
}

/// Uniform draw from `[0, 1)` with 53 bits of resolution.
pub fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Points `x, y` drawn uniformly from `[0, 1)^d` by a seeded ChaCha8 stream
/// (all of `x` row by row, then all of `y`).
pub fn random_instance(n: usize, d: usize, lambda: f64, seed: u64) -> Result<ProblemInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_fn(n, d, |_, _| unit_f64(&mut rng));
    let y = Matrix::from_fn(n, d, |_, _| unit_f64(&mut rng));
    ProblemInstance::new(x, y, lambda)
}

/// `x_i = (perm[i] + 1)/n`, `y_i = i/n`, `d = 1`.
pub fn instance_from_permutation(perm: &[usize], lambda: f64) -> Result<ProblemInstance> {
    let n = perm.len();
    let mut seen = alloc::vec![false; n];
    for &p in perm {
        if p >= n || core::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidInstance("not a permutation"));
        }
    }
    let x: Vec<f64> = perm.iter().map(|&p| (p + 1) as f64 / n as f64).collect();
    ProblemInstance::sorting(&x, lambda)
}

/// Experimental data generator: `x` a seeded random permutation of the grid
/// `[1/n, …, 1]`, `y` the grid itself, `λ = 0.005`.
pub fn grid_instance(n: usize, seed: u64) -> Result<ProblemInstance> {
    if n == 0 {
        return Err(Error::InvalidInstance("need n >= 1"));
    }
    instance_from_permutation(&seeded_permutation(n, seed), DEFAULT_LAMBDA)
}
