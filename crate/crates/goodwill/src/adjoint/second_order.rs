//! Second adjoint process `P`.
//!
//! `P(s) = E^{F_s}[ r_xx(x(T)) ytilde(T)^2 + int_s^T l_xx(x(t)) ytilde(t)^2 dt ]`
//! where `ytilde` is the auxiliary process started at 1 at time `s`. Two
//! estimators are provided:
//!
//! - nested Monte Carlo: per outer path, average over inner auxiliary
//!   paths with fresh noise past `s`; `x` inside the second derivatives is
//!   the outer path's trajectory;
//! - pathwise regression targets: one auxiliary path per outer path driven
//!   by the outer path's own `W1`, keeping the joint correlation, which a
//!   later regression on time-`s` features turns into `E^{F_s}` estimates.
//!
//! The two agree whenever `r_xx` and `l_xx` are constant, which covers all
//! the pinned test cases.

use crate::error::{Error, Result};
use crate::model::ValidatedModel;
use crate::paths::{aux_path_with_stream, simulate_auxiliary_at_node, StateBatch};
use crate::rng::NoiseSource;
use crate::stats;
use rayon::prelude::*;

/// Nested Monte Carlo estimate of `P` at one grid time.
#[derive(Debug, Clone)]
pub struct PEstimate {
    pub s: f64,
    pub node: usize,
    /// Per-outer-path estimates of `P(s)` (inner averages).
    pub values: Vec<f64>,
    pub mean: f64,
    pub std_error: f64,
}

/// How a sweep of `P` values is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecondAdjointMethod {
    /// Fresh inner noise per outer path.
    Nested { n_inner: usize },
    /// One joint auxiliary path per outer path on the shared driver.
    PathwiseRegression,
}

/// Pathwise `P`-targets at a set of grid nodes. `raw[k][path]` estimates
/// `P(s_k)` conditionally on path `path`; regressing a column on time-`t`
/// features yields `E^{F_t}[P(s_k)]`.
#[derive(Debug)]
pub struct PSweep {
    pub nodes: Vec<usize>,
    pub raw: Vec<Vec<f64>>,
    pub method: SecondAdjointMethod,
}

impl PSweep {
    pub fn raw_at(&self, node: usize) -> Option<&[f64]> {
        self.nodes
            .iter()
            .position(|&n| n == node)
            .map(|k| self.raw[k].as_slice())
    }

    /// Unconditional estimate `E[P(s)]` with its standard error.
    pub fn estimate(&self, node: usize) -> Option<(f64, f64)> {
        self.raw_at(node).map(stats::mean_and_stderr)
    }
}

/// Integrand weights shared by both estimators: the outer path's
/// `r_xx(x(T))` and per-step `l_xx(x(t)) dt` from `s` to `T`.
struct CurvatureWeights {
    r_xx_terminal: f64,
    /// `l_xx(x(t_j)) dt` for `j` in `start..n`.
    l_xx_dt: Vec<f64>,
}

fn curvature_weights(model: &ValidatedModel, batch: &StateBatch, start: usize) -> Vec<CurvatureWeights> {
    let grid = model.grid();
    let cost = model.cost();
    let n = grid.n_steps();
    let dt = grid.dt();
    (0..batch.x.n_paths())
        .map(|path| {
            let row = batch.x.row(path);
            CurvatureWeights {
                r_xx_terminal: cost.r_xx(row[n]),
                l_xx_dt: (start..n).map(|j| cost.l_xx(row[j]) * dt).collect(),
            }
        })
        .collect()
}

/// Nested Monte Carlo estimate of `P(s)`.
///
/// For each outer path, `n_inner` auxiliary paths are spawned with fresh
/// noise beyond `s` and the quadratic functional is averaged; `x` inside
/// `r_xx` and `l_xx` is the outer path's trajectory. The degenerate case
/// `r_xx = l_xx = 0` yields exactly zero.
pub fn estimate_second_adjoint(
    model: &ValidatedModel,
    batch: &StateBatch,
    s: f64,
    n_inner: usize,
    seed: u64,
    budget_cap: usize,
) -> Result<PEstimate> {
    let grid = model.grid();
    let node = grid.node_of(s).ok_or(Error::StartOffGrid(s))?;
    let n_outer = batch.x.n_paths();
    if n_inner == 0 {
        return Err(Error::NoPaths(0));
    }
    if n_outer.saturating_mul(n_inner) > budget_cap {
        return Err(Error::BudgetExceeded {
            outer: n_outer,
            inner: n_inner,
            cap: budget_cap,
        });
    }
    let n = grid.n_steps();
    let weights = curvature_weights(model, batch, node);
    let rel_len = n - node + 1;

    let values: Vec<f64> = (0..n_outer)
        .into_par_iter()
        .map(|outer| {
            let w = &weights[outer];
            // Exactly zero integrand: skip the inner simulation entirely so
            // the degenerate identity holds bit-for-bit.
            if w.r_xx_terminal == 0.0 && w.l_xx_dt.iter().all(|&v| v == 0.0) {
                return 0.0;
            }
            let src = NoiseSource::new(NoiseSource::derive(seed, outer as u64));
            let mut aux = vec![0.0; rel_len];
            let mut acc = 0.0;
            for inner in 0..n_inner {
                let mut stream = src.stream(inner as u64);
                aux_path_with_stream(model, node, &mut stream, &mut aux);
                let mut val = w.r_xx_terminal * aux[rel_len - 1] * aux[rel_len - 1];
                for (j, &lw) in w.l_xx_dt.iter().enumerate() {
                    val += lw * aux[j] * aux[j];
                }
                acc += val;
            }
            acc / n_inner as f64
        })
        .collect();
    let (mean, std_error) = stats::mean_and_stderr(&values);
    Ok(PEstimate {
        s,
        node,
        values,
        mean,
        std_error,
    })
}

/// Produce pathwise `P`-targets at several grid nodes.
pub fn sweep_second_adjoint(
    model: &ValidatedModel,
    batch: &StateBatch,
    nodes: &[usize],
    method: SecondAdjointMethod,
    seed: u64,
    budget_cap: usize,
) -> Result<PSweep> {
    let grid = model.grid();
    let n = grid.n_steps();
    let mut raw = Vec::with_capacity(nodes.len());
    for &node in nodes {
        assert!(node <= n, "sweep node beyond the grid");
        let column = match method {
            SecondAdjointMethod::Nested { n_inner } => {
                estimate_second_adjoint(model, batch, grid.time(node), n_inner, seed, budget_cap)?
                    .values
            }
            SecondAdjointMethod::PathwiseRegression => {
                let weights = curvature_weights(model, batch, node);
                if node == n {
                    // ytilde(T) = 1 and the integral is empty.
                    weights.iter().map(|w| w.r_xx_terminal).collect()
                } else {
                    let aux = simulate_auxiliary_at_node(model, node, &batch.driver);
                    (0..batch.x.n_paths())
                        .into_par_iter()
                        .map(|path| {
                            let w = &weights[path];
                            let row = aux.values.row(path);
                            let mut val =
                                w.r_xx_terminal * row[row.len() - 1] * row[row.len() - 1];
                            for (j, &lw) in w.l_xx_dt.iter().enumerate() {
                                val += lw * row[j] * row[j];
                            }
                            val
                        })
                        .collect()
                }
            }
        };
        raw.push(column);
    }
    Ok(PSweep {
        nodes: nodes.to_vec(),
        raw,
        method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        validate_model, AdvertisingCost, ControlSet, ControlSignal, CostSpec, HistorySpec,
        ModelParams, RunningReward, TerminalReward, TimeGrid,
    };
    use crate::paths::{sample_brownian, simulate_state};
    use std::sync::Arc;

    fn build(
        a0: f64,
        ad: f64,
        sigma1: f64,
        terminal: TerminalReward,
        running: RunningReward,
    ) -> ValidatedModel {
        let grid = TimeGrid::from_times(0.01, 1.0, 0.5).unwrap();
        let params = ModelParams {
            a0,
            ad,
            b0: 2.0,
            sigma1,
            sigma2: 0.3,
            delay_d: 0.5,
            horizon_t: 1.0,
            history: HistorySpec::Constant(1.0),
        };
        let cost = CostSpec {
            advertising: AdvertisingCost::Quadratic {
                alpha: 0.5,
                beta: 0.1,
            },
            running,
            terminal,
            operating_interval: (0.0, 4.0),
            linear_growth_bound: 10.0,
        };
        validate_model(params, ControlSet::new(vec![0.0, 1.0]).unwrap(), cost, grid).unwrap()
    }

    #[test]
    fn degenerate_curvature_gives_exact_zero() {
        let model = build(
            1.0,
            0.5,
            0.2,
            TerminalReward::Linear { rho: 1.0 },
            RunningReward::Linear { a: 0.5, b: 0.0 },
        );
        let driver = Arc::new(sample_brownian(model.grid(), 500, 3).unwrap());
        let u = ControlSignal::constant(model.grid(), model.control_set(), 1.0).unwrap();
        let s = simulate_state(&model, &u, &driver).unwrap();
        let est = estimate_second_adjoint(&model, &s, 0.25, 16, 7, usize::MAX).unwrap();
        assert!(est.values.iter().all(|&v| v == 0.0));
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn constant_auxiliary_gives_two() {
        // r = x^2, l = 0, a0 = ad = s1 = 0: ytilde = 1 so P(s) = 2.
        let model = build(
            0.0,
            0.0,
            0.0,
            TerminalReward::Quadratic {
                a: 1.0,
                b: 0.1,
                c: 0.0,
            },
            RunningReward::Linear { a: 0.0, b: 0.0 },
        );
        let driver = Arc::new(sample_brownian(model.grid(), 200, 5).unwrap());
        let u = ControlSignal::constant(model.grid(), model.control_set(), 1.0).unwrap();
        let s = simulate_state(&model, &u, &driver).unwrap();
        for probe in [0.0, 0.5, 0.75] {
            let est = estimate_second_adjoint(&model, &s, probe, 8, 7, usize::MAX).unwrap();
            assert!((est.mean - 2.0).abs() < 1e-12, "P({probe}) = {}", est.mean);
        }
    }

    #[test]
    fn lognormal_moment_identity() {
        // r = x^2, l = 0, ad = 0, a0 = 0, s1 > 0:
        // P(s) = 2 E[ytilde(T)^2] = 2 exp(s1^2 (T - s)).
        let sigma1 = 0.3;
        let model = build(
            0.0,
            0.0,
            sigma1,
            TerminalReward::Quadratic {
                a: 1.0,
                b: 0.1,
                c: 0.0,
            },
            RunningReward::Linear { a: 0.0, b: 0.0 },
        );
        let driver = Arc::new(sample_brownian(model.grid(), 2_000, 5).unwrap());
        let u = ControlSignal::constant(model.grid(), model.control_set(), 1.0).unwrap();
        let s = simulate_state(&model, &u, &driver).unwrap();
        for probe in [0.0, 0.5, 0.9] {
            let est = estimate_second_adjoint(&model, &s, probe, 64, 11, usize::MAX).unwrap();
            let expected = 2.0 * (sigma1 * sigma1 * (1.0 - probe)).exp();
            assert!(
                (est.mean - expected).abs() <= 3.0 * est.std_error + 0.01,
                "P({probe}) = {} vs {expected} (se {})",
                est.mean,
                est.std_error
            );
        }
    }

    #[test]
    fn budget_cap_is_enforced() {
        let model = build(
            1.0,
            0.5,
            0.2,
            TerminalReward::Linear { rho: 1.0 },
            RunningReward::Linear { a: 0.5, b: 0.0 },
        );
        let driver = Arc::new(sample_brownian(model.grid(), 100, 3).unwrap());
        let u = ControlSignal::constant(model.grid(), model.control_set(), 1.0).unwrap();
        let s = simulate_state(&model, &u, &driver).unwrap();
        assert!(matches!(
            estimate_second_adjoint(&model, &s, 0.25, 1000, 7, 50_000).unwrap_err(),
            Error::BudgetExceeded { .. }
        ));
    }

    #[test]
    fn sweep_methods_agree_for_constant_curvature() {
        let model = build(
            0.5,
            0.25,
            0.2,
            TerminalReward::Quadratic {
                a: 1.0,
                b: 0.1,
                c: 0.0,
            },
            RunningReward::Linear { a: 0.0, b: 0.0 },
        );
        let driver = Arc::new(sample_brownian(model.grid(), 4_000, 9).unwrap());
        let u = ControlSignal::constant(model.grid(), model.control_set(), 1.0).unwrap();
        let s = simulate_state(&model, &u, &driver).unwrap();
        let nodes = [model.grid().node_of(0.5).unwrap()];
        let nested = sweep_second_adjoint(
            &model,
            &s,
            &nodes,
            SecondAdjointMethod::Nested { n_inner: 64 },
            13,
            usize::MAX,
        )
        .unwrap();
        let joint = sweep_second_adjoint(
            &model,
            &s,
            &nodes,
            SecondAdjointMethod::PathwiseRegression,
            13,
            usize::MAX,
        )
        .unwrap();
        let (m1, se1) = nested.estimate(nodes[0]).unwrap();
        let (m2, se2) = joint.estimate(nodes[0]).unwrap();
        let z = stats::z_score(m1, se1, m2, se2);
        assert!(z < 4.0, "nested {m1} vs joint {m2}: z = {z}");
    }

    #[test]
    fn sweep_at_horizon_is_terminal_curvature() {
        let model = build(
            1.0,
            0.5,
            0.2,
            TerminalReward::Quadratic {
                a: 1.0,
                b: 0.1,
                c: 0.0,
            },
            RunningReward::Linear { a: 0.0, b: 0.0 },
        );
        let driver = Arc::new(sample_brownian(model.grid(), 500, 3).unwrap());
        let u = ControlSignal::constant(model.grid(), model.control_set(), 1.0).unwrap();
        let s = simulate_state(&model, &u, &driver).unwrap();
        let n = model.grid().n_steps();
        let sweep = sweep_second_adjoint(
            &model,
            &s,
            &[n],
            SecondAdjointMethod::PathwiseRegression,
            1,
            usize::MAX,
        )
        .unwrap();
        let raw = sweep.raw_at(n).unwrap();
        for (path, &v) in raw.iter().enumerate() {
            assert_eq!(v, model.cost().r_xx(s.x.at(path, n)));
        }
    }
}
