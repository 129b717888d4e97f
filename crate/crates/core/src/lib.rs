//! Fully first-order online bilevel optimization.
//!
//! The crate solves a sequence of bilevel problems
//!
//! ```text
//! min_{x in X} F_t(x) = f_t(x, y_t*(x)),   y_t*(x) = argmin_y g_t(x, y)
//! ```
//!
//! without Hessian-vector products. The inner argmin constraint is folded into
//! a penalty `lambda_t * (g_t(x, y) - g_t(x, y_t*(x)))`, and the outer step uses
//! the gradient of the resulting value function, which only needs first-order
//! oracles of `f_t` and `g_t` at two inner points.
//!
//! Module map:
//!
//! - [`geometry`]: constraint sets, projection and the gradient mapping.
//! - [`problem`]: the [`BilevelProblem`](problem::BilevelProblem) oracle trait and
//!   the synthetic problem suite.
//! - [`inner`]: fixed-iteration and tolerance-stopped inner gradient loops.
//! - [`solvers`]: the F2OBO / AF2OBO outer loops, the multiplier schedule and an
//!   oracle-hypergradient baseline.
//! - [`metrics`]: reference hypergradients, local regret, variation meters,
//!   penalty-gap probes and query counters.
//!
//! The crate is `no_std` and only requires `alloc`.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod geometry;
pub mod inner;
mod linalg;
pub mod metrics;
pub mod problem;
pub mod solvers;
pub mod stats;
mod vector;

pub use error::{Error, Result};
pub use geometry::{gradient_mapping, ConstraintSet, GradientMappingResult};
pub use problem::{BilevelProblem, LipschitzMetadata};
pub use vector::Vector;
