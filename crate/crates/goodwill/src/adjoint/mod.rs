//! Adjoint processes of the maximum principle: the first-order anticipated
//! backward pair `(p, q1, q2)` solved by backward interval recursion with
//! regression-based conditional expectations, and the second adjoint `P`
//! estimated by nested Monte Carlo or pathwise regression targets.

mod first_order;
mod regression;
mod second_order;

pub use first_order::{
    bsde_residuals, estimate_martingale_repr, q_increment_stats, solve_first_adjoint,
    AdjointBatch, NodeDiagnostics, ReprCoeffs, ResidualReport,
};
pub use regression::{
    condexp_regress, FitDiagnostics, FittedPredictor, RegressionConfig, RIDGE_FALLBACK_WEIGHT,
};
pub use second_order::{
    estimate_second_adjoint, sweep_second_adjoint, PEstimate, PSweep, SecondAdjointMethod,
};
