//! # otlab-core
//!
//! A fixed-weight, two-head softmax transformer whose forward pass runs
//! adaptive-stepsize gradient descent on the dual of entropy-regularized
//! optimal transport, together with the reference machinery needed to check
//! it: a log-domain Sinkhorn solver, the projective metric `μ` and its
//! contraction constants, and brute-force oracles.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! parallel property harnesses live in the `otlab` crate.
//!
//! ## Layout
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`problem`] | transport instances, cost matrix, permutation generator |
//! | [`prompt`] | the `(n+1) × (2d+9)` engineered prompt and its column layout |
//! | [`dual`] | dual objective, gradients, adaptive stepsizes, GD trajectories |
//! | [`transformer`] | attention, layers, constructed weights, forward traces |
//! | [`sinkhorn`] | Gibbs kernel, Sinkhorn scaling, `μ`, `φ`/`η`, bound checks |
//! | [`oracles`] | brute-force OT, sorting, finite differences, plan rounding |
//! | [`checks`] | seeded single-trial property checks shared by tests and CLI |

#![no_std]
// Guards are written `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod checks;
pub mod dual;
pub mod error;
pub mod linalg;
pub mod math;
pub mod matrix;
pub mod oracles;
pub mod problem;
pub mod prompt;
pub mod sinkhorn;
pub mod transformer;

pub use error::{Error, Result};
pub use matrix::Matrix;
