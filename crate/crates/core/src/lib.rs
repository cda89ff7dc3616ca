//! Square-loss preference alignment under Huber label corruption and
//! differential privacy, on finite tabular worlds.
//!
//! Everything here is exact where it can be: contexts and actions are finite
//! index sets, so values, gaps, divergences and game solutions are computed by
//! summation. Only data generation and the privacy/corruption channels are
//! random, and they always draw from an explicit seeded stream.
//!
//! Module map:
//!
//! - [`domain`]: instances, policies, policy classes, preference data.
//! - [`mechanisms`]: randomized response, Huber corruption, channel orders,
//!   the exponential mechanism.
//! - [`objectives`]: link functions and every loss the learners minimize.
//! - [`solvers`]: finite-class argmin, log-linear gradient descent, central-DP
//!   sampling and the regularized-optimum solver.
//! - [`regression`]: the least-squares generalization laboratory.
//! - [`selfplay`]: iterative self-play for general preferences.
//! - [`eval`]: exact evaluators, the matrix-game solver and rate fitting.
//! - [`presets`]: named reference worlds used by tests and the harness.

// `!(x > 0.0)` is used on purpose: NaN must fail positivity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domain;
pub mod error;
pub mod eval;
pub mod mechanisms;
pub mod objectives;
pub mod presets;
pub mod regression;
pub mod rng;
pub mod selfplay;
pub mod solvers;
pub mod stats;

pub use error::{Error, Result};
