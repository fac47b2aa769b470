use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(&'static str),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("invalid parameter `{name}`: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("matrix has a nonpositive row or column sum at index {0}")]
    NonPositiveSum(usize),
    #[error("vector entry {0} is not strictly positive")]
    NonPositiveEntry(usize),
    #[error("plan has an all-zero row at index {0}")]
    DegeneratePlan(usize),
    #[error("plan is not permutation-like (row-argmax is not a bijection)")]
    NotPermutationLike,
    #[error("brute-force enumeration refused for n = {0} (limit is 9)")]
    TooLarge(usize),
    #[error("sinkhorn did not reach tolerance after {iterations} sweeps (achieved ε* = {achieved:e})")]
    NotConverged { iterations: usize, achieved: f64 },
    #[error("bound not applicable: depth {ell} is below the required {required}")]
    BoundNotApplicable { ell: f64, required: f64 },
}
