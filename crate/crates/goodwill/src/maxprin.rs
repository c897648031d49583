//! Duality relations, the cost expansion in the spike width, and the
//! maximum-principle variational inequality.
//!
//! With the spike delta `du = (v - u) 1_window` and the adjoint convention
//! of [`crate::adjoint`], Ito's product rule gives the two duality
//! relations
//!
//! ```text
//! E[r_x(x(T)) y(T)] = -E int_0^T [l_x(x) y + s2 q2 du(t-d)] dt
//! E[r_x(x(T)) z(T)] = -E int_0^T l_x(x) z dt + E int_0^T b0 p du dt
//! ```
//!
//! and the cost expansion
//!
//! ```text
//! J(u) - J(u_spiked) = E int (-dc + b0 p du - s2 q2 du(t-d)) dt
//!                      + 1/2 E int s2^2 du(t-d)^2 P dt + o(eps),
//! dc = (c(v) - c(u)) 1_window.
//! ```
//!
//! Discretely these relations are summation-by-parts identities against
//! the Euler recursions, exact when the `b0 p du` integrand is read with
//! `p` at the right node of each step (the node where a step's spiked
//! drift lands); the quadratures below do exactly that, so the checks are
//! limited by Monte Carlo noise and regression quality, not by O(dt)
//! scheme bias.
//!
//! Localizing the expansion at a point gives the per-(t, v) gap checked by
//! [`verify_max_principle`]: at an optimal control
//!
//! ```text
//! (c(u_t) - c(v)) - b0 (u_t - v) p(t) + s2 (u_t - v) E_t[q2(t+d)]
//!   + 1/2 s2^2 (u_t - v)^2 E_t[P(t+d)] <= 0   for all v in U,
//! ```
//!
//! with the conditional terms read as zero past the horizon. A
//! statistically positive gap flags a profitable spike, which is exactly
//! what the descent loop in [`crate::optimize`] consumes.

use crate::adjoint::{condexp_regress, AdjointBatch, PSweep, RegressionConfig};
use crate::error::{Error, Result};
use crate::model::{apply_spike, ControlSignal, SpikeSpec, ValidatedModel};
use crate::paths::{cost_per_path, simulate_state, CostEstimate, StateBatch, VariationBatch};
use crate::stats;
use rayon::prelude::*;
use std::sync::Arc;

/// Which first-order duality relation to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DualityRelation {
    FirstY,
    FirstZ,
}

/// Two-sided Monte Carlo comparison of a duality relation.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DualityReport {
    pub relation: DualityRelation,
    pub lhs_mean: f64,
    pub lhs_stderr: f64,
    pub rhs_mean: f64,
    pub rhs_stderr: f64,
    pub z_score: f64,
}

fn duality_report(relation: DualityRelation, lhs: &[f64], rhs: &[f64]) -> DualityReport {
    let (lhs_mean, lhs_stderr) = stats::mean_and_stderr(lhs);
    let (rhs_mean, rhs_stderr) = stats::mean_and_stderr(rhs);
    DualityReport {
        relation,
        lhs_mean,
        lhs_stderr,
        rhs_mean,
        rhs_stderr,
        z_score: stats::z_score(lhs_mean, lhs_stderr, rhs_mean, rhs_stderr),
    }
}

/// Check one of the first-order duality relations on a shared driver.
pub fn check_duality_first(
    model: &ValidatedModel,
    state: &StateBatch,
    variations: &VariationBatch,
    adjoint: &AdjointBatch,
    which: DualityRelation,
) -> Result<DualityReport> {
    if !Arc::ptr_eq(&state.driver, &variations.driver) {
        return Err(Error::GridMismatch("state vs variation driver"));
    }
    let grid = model.grid();
    let p_par = model.params();
    let cost = model.cost();
    let n = grid.n_steps();
    let dt = grid.dt();
    let lag = grid.delay_steps();
    let n_paths = state.x.n_paths();
    let delta = &variations.delta;

    let (lhs, rhs): (Vec<f64>, Vec<f64>) = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let x = state.x.row(path);
            match which {
                DualityRelation::FirstY => {
                    let y = variations.y.row(path);
                    let lhs = cost.r_x(x[n]) * y[n];
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += (cost.l_x(x[j]) * y[j]
                            + p_par.sigma2 * adjoint.q2.at(path, j) * delta.at_lagged(j, lag))
                            * dt;
                    }
                    (lhs, -acc)
                }
                DualityRelation::FirstZ => {
                    let z = variations.z.row(path);
                    let lhs = cost.r_x(x[n]) * z[n];
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += (-cost.l_x(x[j]) * z[j]
                            + p_par.b0 * adjoint.p.at(path, j + 1) * delta.at(j))
                            * dt;
                    }
                    (lhs, acc)
                }
            }
        })
        .unzip();
    Ok(duality_report(which, &lhs, &rhs))
}

/// Pointwise gap of the variational inequality at `(t, v)`:
///
/// ```text
/// (c(u_t) - c(v)) - b0 (u_t - v) p_t + s2 (u_t - v) q2_ahead
///   + 1/2 s2^2 (u_t - v)^2 P_ahead
/// ```
///
/// `q2_ahead` and `P_ahead` approximate `E^{F_t}[q2(t+d)]` and
/// `E^{F_t}[P(t+d)]` (zero when `t + d` is past the horizon). The maximum
/// principle asserts this is `<= 0` along an optimal pair; a positive value
/// is the improvement rate of spiking to `v`.
pub fn hamiltonian_gap(
    model: &ValidatedModel,
    v: f64,
    u_t: f64,
    p_t: f64,
    q2_ahead: f64,
    p2_ahead: f64,
) -> Result<f64> {
    let p_par = model.params();
    let du = u_t - v;
    Ok(model.c(u_t)? - model.c(v)?
        - p_par.b0 * du * p_t
        + p_par.sigma2 * du * q2_ahead
        + 0.5 * p_par.sigma2 * p_par.sigma2 * du * du * p2_ahead)
}

/// Gap statistics at one `(grid time, control level)` pair.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GapStat {
    pub t: f64,
    pub v: f64,
    pub gap_mean: f64,
    pub gap_stderr: f64,
}

/// Result of scanning every `(grid time, control level)` pair.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MpReport {
    /// Every checked pair, ordered by (t, v).
    pub gaps: Vec<GapStat>,
    /// Gaps with mean above `sigma * stderr`, sorted by (t, v).
    pub violations: Vec<GapStat>,
    /// Largest gap mean over all checked points.
    pub max_gap: f64,
    pub checked_points: usize,
    pub sigma: f64,
}

impl MpReport {
    pub fn is_certificate(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Grid nodes a `PSweep` must cover for [`verify_max_principle`].
pub fn mp_sweep_nodes(model: &ValidatedModel) -> Vec<usize> {
    let grid = model.grid();
    (grid.delay_steps()..=grid.n_steps()).collect()
}

/// Grid nodes a `PSweep` must cover for [`check_cost_expansion`] of a
/// given spike (the delayed image of the window, clipped to the grid).
pub fn expansion_sweep_nodes(model: &ValidatedModel, spike: &SpikeSpec) -> Result<Vec<usize>> {
    let grid = model.grid();
    let (start, end) = spike.step_range(grid)?;
    let lag = grid.delay_steps();
    Ok((start + lag..end + lag)
        .filter(|&j| j < grid.n_steps())
        .collect())
}

/// Evaluate the variational inequality for every grid step and control
/// level, averaging the pathwise gap over the ensemble.
///
/// `E^{F_t}` of the forward-looking terms is realized by regressing the
/// stored `q2(t+d)` values and the sweep's `P(t+d)` targets on the time-t
/// state features. Gaps whose mean exceeds `sigma` standard errors are
/// reported as violations, earliest time first, smallest level first.
pub fn verify_max_principle(
    model: &ValidatedModel,
    u: &ControlSignal,
    state: &StateBatch,
    adjoint: &AdjointBatch,
    p_sweep: &PSweep,
    cfg: &RegressionConfig,
    sigma: f64,
) -> Result<MpReport> {
    if u.values() != state.control.values() {
        return Err(Error::GridMismatch("control vs simulated batch"));
    }
    let grid = model.grid();
    let p_par = model.params();
    let n = grid.n_steps();
    let lag = grid.delay_steps();
    let n_paths = state.x.n_paths();
    let levels = model.control_set().levels();
    let needs_second_order = p_par.sigma2 != 0.0;

    let mut gaps = Vec::with_capacity(n * levels.len());
    let mut violations = Vec::new();
    let mut max_gap = f64::NEG_INFINITY;
    let zeros = vec![0.0; n_paths];

    for i in 0..n {
        let f1 = state.x.column(i);
        let f2: Vec<f64> = if i >= lag {
            state.x.column(i - lag)
        } else {
            vec![model.history()[i]; n_paths]
        };

        // E_t[q2(t+d)]: zero past the horizon by the future-time condition.
        let q2_ahead: Vec<f64> = if needs_second_order && i + lag < n {
            let target = adjoint.q2.column(i + lag);
            condexp_regress(&f1, &f2, &target, cfg)?.predict_all(&f1, &f2)
        } else {
            zeros.clone()
        };
        // E_t[P(t+d)] from the sweep's pathwise targets (tower property:
        // regressing the raw target directly on time-t features estimates
        // the same conditional expectation).
        let p2_ahead: Vec<f64> = if needs_second_order && i + lag <= n {
            let raw = p_sweep.raw_at(i + lag).ok_or(Error::GridMismatch(
                "second-adjoint sweep does not cover t + d",
            ))?;
            if raw.iter().all(|&x| x == 0.0) {
                zeros.clone()
            } else {
                condexp_regress(&f1, &f2, raw, cfg)?.predict_all(&f1, &f2)
            }
        } else {
            zeros.clone()
        };

        let u_t = u.at(i);
        let c_ut = model.c(u_t)?;
        for &v in levels {
            let du = u_t - v;
            let c_diff = c_ut - model.c(v)?;
            // p read at the right node of the step, matching the exact
            // discrete pairing of the cost expansion.
            let vals: Vec<f64> = (0..n_paths)
                .into_par_iter()
                .map(|path| {
                    c_diff - p_par.b0 * du * adjoint.p.at(path, i + 1)
                        + p_par.sigma2 * du * q2_ahead[path]
                        + 0.5 * p_par.sigma2 * p_par.sigma2 * du * du * p2_ahead[path]
                })
                .collect();
            let (gap_mean, gap_stderr) = stats::mean_and_stderr(&vals);
            max_gap = max_gap.max(gap_mean);
            let stat = GapStat {
                t: grid.time(i),
                v,
                gap_mean,
                gap_stderr,
            };
            if gap_mean > sigma * gap_stderr {
                violations.push(stat.clone());
            }
            gaps.push(stat);
        }
    }
    Ok(MpReport {
        gaps,
        violations,
        max_gap,
        checked_points: n * levels.len(),
        sigma,
    })
}

/// Cost expansion of one spike, with every term carrying a standard error.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ExpansionReport {
    pub epsilon: f64,
    /// `J(u) - J(u_spiked)` by simulation with common random numbers.
    pub cost_diff: CostEstimate,
    pub first_order: CostEstimate,
    pub second_order: CostEstimate,
    /// `cost_diff - first_order - second_order`, expected `o(eps)`.
    pub residual: CostEstimate,
}

/// Compute the simulated cost difference and the adjoint-based expansion
/// independently, on common random numbers, and report the residual.
pub fn check_cost_expansion(
    model: &ValidatedModel,
    u: &ControlSignal,
    spike: &SpikeSpec,
    state: &StateBatch,
    adjoint: &AdjointBatch,
    p_sweep: &PSweep,
) -> Result<ExpansionReport> {
    let grid = model.grid();
    let p_par = model.params();
    let n = grid.n_steps();
    let dt = grid.dt();
    let lag = grid.delay_steps();
    let n_paths = state.x.n_paths();

    let app = apply_spike(grid, model.control_set(), u, spike)?;
    let spiked = simulate_state(model, &app.control, &state.driver)?;
    let base_costs = cost_per_path(model, u, state)?;
    let spiked_costs = cost_per_path(model, &app.control, &spiked)?;
    let delta = &app.delta;

    // dc(s) = (c(v) - c(u(s))) on the window, 0 elsewhere.
    let mut dc = vec![0.0; n];
    let (w_start, w_end) = spike.step_range(grid)?;
    for i in w_start..w_end {
        dc[i] = model.c(spike.value)? - model.c(u.at(i))?;
    }

    // Second-order sweep columns for the delayed window nodes.
    let needed = expansion_sweep_nodes(model, spike)?;
    let p_raw: Vec<Option<&[f64]>> = if p_par.sigma2 == 0.0 {
        Vec::new()
    } else {
        needed
            .iter()
            .map(|&node| p_sweep.raw_at(node))
            .collect::<Vec<_>>()
    };
    if p_par.sigma2 != 0.0 && p_raw.iter().any(|r| r.is_none()) {
        return Err(Error::GridMismatch(
            "second-adjoint sweep does not cover the delayed spike window",
        ));
    }

    let first: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut acc = 0.0;
            for j in 0..n {
                let du = delta.at(j);
                let du_lag = delta.at_lagged(j, lag);
                if du != 0.0 || du_lag != 0.0 {
                    acc += (-dc[j] + p_par.b0 * adjoint.p.at(path, j + 1) * du
                        - p_par.sigma2 * adjoint.q2.at(path, j) * du_lag)
                        * dt;
                }
            }
            acc
        })
        .collect();
    let second: Vec<f64> = if p_par.sigma2 == 0.0 {
        vec![0.0; n_paths]
    } else {
        (0..n_paths)
            .into_par_iter()
            .map(|path| {
                let mut acc = 0.0;
                for (k, &node) in needed.iter().enumerate() {
                    let du_lag = delta.at_lagged(node, lag);
                    let p_val = p_raw[k].unwrap()[path];
                    acc += 0.5 * p_par.sigma2 * p_par.sigma2 * du_lag * du_lag * p_val * dt;
                }
                acc
            })
            .collect()
    };

    let diff: Vec<f64> = (0..n_paths)
        .map(|p| base_costs[p] - spiked_costs[p])
        .collect();
    let residual: Vec<f64> = (0..n_paths)
        .map(|p| diff[p] - first[p] - second[p])
        .collect();

    let wrap = |vals: &[f64]| {
        let (mean, std_error) = stats::mean_and_stderr(vals);
        CostEstimate {
            mean,
            std_error,
            n_paths,
        }
    };
    Ok(ExpansionReport {
        epsilon: spike.epsilon,
        cost_diff: wrap(&diff),
        first_order: wrap(&first),
        second_order: wrap(&second),
        residual: wrap(&residual),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::{
        solve_first_adjoint, sweep_second_adjoint, SecondAdjointMethod,
    };
    use crate::model::{
        validate_model, AdvertisingCost, ControlSet, CostSpec, HistorySpec, ModelParams,
        RunningReward, TerminalReward, TimeGrid,
    };
    use crate::paths::{sample_brownian, simulate_variations};

    fn build(
        a0: f64,
        ad: f64,
        sigma1: f64,
        sigma2: f64,
        terminal: TerminalReward,
        running: RunningReward,
        levels: Vec<f64>,
    ) -> ValidatedModel {
        let grid = TimeGrid::from_times(0.02, 1.0, 0.5).unwrap();
        let params = ModelParams {
            a0,
            ad,
            b0: 2.0,
            sigma1,
            sigma2,
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
        validate_model(params, ControlSet::new(levels).unwrap(), cost, grid).unwrap()
    }

    fn full_sweep(
        model: &ValidatedModel,
        state: &StateBatch,
    ) -> PSweep {
        sweep_second_adjoint(
            model,
            state,
            &mp_sweep_nodes(model),
            SecondAdjointMethod::PathwiseRegression,
            5,
            usize::MAX,
        )
        .unwrap()
    }

    #[test]
    fn gap_is_zero_at_the_running_control() {
        let model = build(
            1.0,
            0.5,
            0.2,
            0.3,
            TerminalReward::Linear { rho: 1.0 },
            RunningReward::Linear { a: 0.5, b: 0.0 },
            vec![0.0, 1.0],
        );
        for (p, q2, pp) in [(0.5, 0.3, 0.4), (-1.0, 0.0, 2.0)] {
            assert_eq!(
                hamiltonian_gap(&model, 1.0, 1.0, p, q2, pp).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn gap_matches_hand_arithmetic_for_sigma2_zero() {
        // u_t = 1, v = 0, b0 = 2, p = 0.5, c(u) = u^2:
        // (1 - 0) - 2 * 1 * 0.5 = 0.
        let grid = TimeGrid::from_times(0.02, 1.0, 0.5).unwrap();
        let params = ModelParams {
            a0: 1.0,
            ad: 0.0,
            b0: 2.0,
            sigma1: 0.0,
            sigma2: 0.0,
            delay_d: 0.5,
            horizon_t: 1.0,
            history: HistorySpec::Constant(1.0),
        };
        let cost = CostSpec {
            advertising: AdvertisingCost::Quadratic {
                alpha: 1.0,
                beta: 0.0,
            },
            running: RunningReward::Linear { a: 0.0, b: 0.0 },
            terminal: TerminalReward::Linear { rho: 1.0 },
            operating_interval: (0.0, 4.0),
            linear_growth_bound: 10.0,
        };
        let model =
            validate_model(params, ControlSet::new(vec![0.0, 1.0]).unwrap(), cost, grid).unwrap();
        let gap = hamiltonian_gap(&model, 0.0, 1.0, 0.5, 0.0, 0.0).unwrap();
        assert_eq!(gap, 0.0);
    }

    #[test]
    fn duality_degenerates_cleanly_when_sigma2_is_zero() {
        let model = build(
            1.0,
            0.5,
            0.2,
            0.0,
            TerminalReward::Linear { rho: 1.0 },
            RunningReward::Quadratic {
                a: 0.25,
                b: 0.0,
                c: 0.0,
            },
            vec![0.0, 1.0],
        );
        let driver = Arc::new(sample_brownian(model.grid(), 10_000, 3).unwrap());
        let u = ControlSignal::constant(model.grid(), model.control_set(), 1.0).unwrap();
        let s = simulate_state(&model, &u, &driver).unwrap();
        let spike = SpikeSpec {
            t_start: 0.2,
            epsilon: 0.06,
            value: 0.0,
        };
        let v = simulate_variations(&model, &u, &spike, &driver).unwrap();
        let adj = solve_first_adjoint(&model, &s, &RegressionConfig::default()).unwrap();
        let rep = check_duality_first(&model, &s, &v, &adj, DualityRelation::FirstY).unwrap();
        // y vanishes identically, so the relation is 0 = 0 up to noise.
        assert_eq!(rep.lhs_mean, 0.0);
        assert!(rep.z_score < 3.0, "z = {}", rep.z_score);
    }

    #[test]
    fn duality_y_trivial_when_delayed_window_leaves_horizon() {
        let model = build(
            1.0,
            0.5,
            0.2,
            0.3,
            TerminalReward::Linear { rho: 1.0 },
            RunningReward::Quadratic {
                a: 0.25,
                b: 0.0,
                c: 0.0,
            },
            vec![0.0, 1.0],
        );
        let driver = Arc::new(sample_brownian(model.grid(), 5_000, 5).unwrap());
        let u = ControlSignal::constant(model.grid(), model.control_set(), 1.0).unwrap();
        let s = simulate_state(&model, &u, &driver).unwrap();
        // window inside (T - d, T]: delayed support leaves [0, T]
        let spike = SpikeSpec {
            t_start: 0.9,
            epsilon: 0.1,
            value: 0.0,
        };
        let v = simulate_variations(&model, &u, &spike, &driver).unwrap();
        let adj = solve_first_adjoint(&model, &s, &RegressionConfig::default()).unwrap();
        let rep = check_duality_first(&model, &s, &v, &adj, DualityRelation::FirstY).unwrap();
        assert_eq!(rep.lhs_mean, 0.0);
        assert_eq!(rep.rhs_mean, 0.0);
        assert_eq!(rep.z_score, 0.0);
    }

    #[test]
    fn duality_z_against_deterministic_adjoint() {
        // l = 0, r(x) = x, ad = 0: p(t) = e^{-a0 (T - t)} deterministic, so
        // the right side has a closed form.
        let model = build(
            0.8,
            0.0,
            0.2,
            0.3,
            TerminalReward::Linear { rho: 1.0 },
            RunningReward::Linear { a: 0.0, b: 0.0 },
            vec![0.0, 1.0],
        );
        let driver = Arc::new(sample_brownian(model.grid(), 50_000, 7).unwrap());
        let u = ControlSignal::constant(model.grid(), model.control_set(), 1.0).unwrap();
        let s = simulate_state(&model, &u, &driver).unwrap();
        let spike = SpikeSpec {
            t_start: 0.2,
            epsilon: 0.06,
            value: 0.0,
        };
        let v = simulate_variations(&model, &u, &spike, &driver).unwrap();
        let adj = solve_first_adjoint(&model, &s, &RegressionConfig::default()).unwrap();
        let rep = check_duality_first(&model, &s, &v, &adj, DualityRelation::FirstZ).unwrap();
        assert!(rep.z_score < 3.0, "z = {}", rep.z_score);
        // closed-form right side: sum b0 e^{-a0 (T - s)} du(s) ds read at
        // the step's right node, within the Euler discounting gap
        let grid = model.grid();
        let mut expected = 0.0;
        for j in 0..grid.n_steps() {
            expected += 2.0
                * (-0.8 * (grid.horizon() - grid.time(j + 1))).exp()
                * v.delta.at(j)
                * grid.dt();
        }
        assert!(
            (rep.rhs_mean - expected).abs() < 0.02 * expected.abs().max(0.05),
            "rhs {} vs closed form {expected}",
            rep.rhs_mean
        );
    }

    #[test]
    fn duality_y_holds_on_a_stochastic_model() {
        let model = build(
            1.0,
            0.5,
            0.2,
            0.3,
            TerminalReward::Linear { rho: 1.0 },
            RunningReward::Quadratic {
                a: 0.25,
                b: 0.0,
                c: 0.0,
            },
            vec![0.0, 1.0],
        );
        let driver = Arc::new(sample_brownian(model.grid(), 50_000, 11).unwrap());
        let u = ControlSignal::constant(model.grid(), model.control_set(), 1.0).unwrap();
        let s = simulate_state(&model, &u, &driver).unwrap();
        let spike = SpikeSpec {
            t_start: 0.2,
            epsilon: 0.06,
            value: 0.0,
        };
        let v = simulate_variations(&model, &u, &spike, &driver).unwrap();
        let adj = solve_first_adjoint(&model, &s, &RegressionConfig::default()).unwrap();
        let rep = check_duality_first(&model, &s, &v, &adj, DualityRelation::FirstY).unwrap();
        assert!(rep.z_score < 3.0, "y-duality z = {}", rep.z_score);
    }

    #[test]
    fn singleton_control_set_certifies_immediately() {
        let model = build(
            1.0,
            0.5,
            0.2,
            0.3,
            TerminalReward::Linear { rho: 1.0 },
            RunningReward::Linear { a: 0.5, b: 0.0 },
            vec![1.0],
        );
        let driver = Arc::new(sample_brownian(model.grid(), 2_000, 3).unwrap());
        let u = ControlSignal::constant(model.grid(), model.control_set(), 1.0).unwrap();
        let s = simulate_state(&model, &u, &driver).unwrap();
        let adj = solve_first_adjoint(&model, &s, &RegressionConfig::default()).unwrap();
        let sweep = full_sweep(&model, &s);
        let rep = verify_max_principle(
            &model,
            &u,
            &s,
            &adj,
            &sweep,
            &RegressionConfig::default(),
            3.0,
        )
        .unwrap();
        assert!(rep.is_certificate());
        assert_eq!(rep.checked_points, model.grid().n_steps());
        assert_eq!(rep.max_gap, 0.0);
    }

    #[test]
    fn expansion_is_exactly_zero_for_a_null_spike() {
        let model = build(
            1.0,
            0.5,
            0.2,
            0.3,
            TerminalReward::Linear { rho: 1.0 },
            RunningReward::Linear { a: 0.5, b: 0.0 },
            vec![0.0, 1.0],
        );
        let driver = Arc::new(sample_brownian(model.grid(), 2_000, 3).unwrap());
        let u = ControlSignal::constant(model.grid(), model.control_set(), 1.0).unwrap();
        let s = simulate_state(&model, &u, &driver).unwrap();
        let adj = solve_first_adjoint(&model, &s, &RegressionConfig::default()).unwrap();
        let spike = SpikeSpec {
            t_start: 0.2,
            epsilon: 0.06,
            value: 1.0, // equals u on the window
        };
        let sweep = sweep_second_adjoint(
            &model,
            &s,
            &expansion_sweep_nodes(&model, &spike).unwrap(),
            SecondAdjointMethod::PathwiseRegression,
            5,
            usize::MAX,
        )
        .unwrap();
        let rep = check_cost_expansion(&model, &u, &spike, &s, &adj, &sweep).unwrap();
        assert_eq!(rep.cost_diff.mean, 0.0);
        assert_eq!(rep.first_order.mean, 0.0);
        assert_eq!(rep.second_order.mean, 0.0);
        assert_eq!(rep.residual.mean, 0.0);
    }

    #[test]
    fn expansion_first_order_dominates_with_deterministic_p() {
        // sigma2 = 0, l = 0, r(x) = x, ad = 0: the expansion reduces to the
        // first-order term with p(t) = e^{-a0(T-t)}.
        let model = build(
            0.8,
            0.0,
            0.2,
            0.0,
            TerminalReward::Linear { rho: 1.0 },
            RunningReward::Linear { a: 0.0, b: 0.0 },
            vec![0.0, 1.0],
        );
        let driver = Arc::new(sample_brownian(model.grid(), 50_000, 13).unwrap());
        let u = ControlSignal::constant(model.grid(), model.control_set(), 1.0).unwrap();
        let s = simulate_state(&model, &u, &driver).unwrap();
        let adj = solve_first_adjoint(&model, &s, &RegressionConfig::default()).unwrap();
        let spike = SpikeSpec {
            t_start: 0.2,
            epsilon: 0.04,
            value: 0.0,
        };
        let sweep = PSweep {
            nodes: vec![],
            raw: vec![],
            method: SecondAdjointMethod::PathwiseRegression,
        };
        let rep = check_cost_expansion(&model, &u, &spike, &s, &adj, &sweep).unwrap();
        assert_eq!(rep.second_order.mean, 0.0);
        let z = stats::z_score(
            rep.cost_diff.mean,
            rep.cost_diff.std_error,
            rep.first_order.mean,
            rep.first_order.std_error,
        );
        // residual is o(eps): allow 3 sigma plus the eps^2 Taylor tail
        assert!(
            rep.residual.mean.abs()
                <= 3.0 * rep.residual.std_error + 2.0 * spike.epsilon * spike.epsilon,
            "residual {} (se {}), z = {z}",
            rep.residual.mean,
            rep.residual.std_error
        );
    }
}
