//! Stochastic optimal advertising with delayed goodwill dynamics.
//!
//! The controlled state is the goodwill level `x` of a product, driven by
//!
//! ```text
//! dx(t) = [b0 u(t) - a0 x(t) - ad x(t-d)] dt + s1 x(t) dW1 + s2 u(t-d) dW2
//! ```
//!
//! with a prescribed history on `[-d, 0]`, a finite (possibly non-convex)
//! control set, and the cost
//!
//! ```text
//! J(u) = E int_0^T (c(u) - l(x)) dt - E r(x(T))
//! ```
//!
//! to be minimised. The crate provides:
//!
//! - [`model`]: model constants, control set, cost functions with analytic
//!   derivatives, piecewise-constant control signals, spike perturbations.
//! - [`paths`]: reproducible Brownian drivers and Euler-Maruyama simulation
//!   of the state, the first/second variation processes, and the auxiliary
//!   process used by the second adjoint.
//! - [`adjoint`]: least-squares Monte Carlo solution of the first-order
//!   anticipated adjoint backward equation `(p, q1, q2)` and estimation of
//!   the second adjoint `P`.
//! - [`maxprin`]: numerical duality checks, the cost expansion in the spike
//!   width, and verification of the maximum-principle variational
//!   inequality over the whole control set.
//! - [`optimize`]: greedy spike-variation descent, an exhaustive
//!   scenario-tree oracle for tiny instances, and spike-width convergence
//!   studies.
//! - [`harness`]: JSON experiment configuration, deterministic seeding, and
//!   CSV/JSON artifact emission. The `goodwill` binary is a thin CLI over
//!   this module.
//!
//! Every Monte Carlo estimate carries a standard error, and all outputs are
//! bit-reproducible for a fixed configuration regardless of worker count.

pub mod adjoint;
pub mod error;
pub mod harness;
pub mod maxprin;
pub mod model;
pub mod optimize;
pub mod paths;
pub mod rng;
pub mod stats;

pub use error::Error;
pub use model::{
    ControlSet, ControlSignal, CostSpec, ModelParams, SpikeSpec, TimeGrid, ValidatedModel,
};
pub use paths::{BrownianBatch, CostEstimate, StateBatch, VariationBatch};
