//! Control improvement and verification tooling: greedy spike-variation
//! descent driven by the maximum-principle gaps, an exhaustive
//! scenario-tree oracle for tiny instances, and the spike-width
//! convergence study for the variation processes.

use crate::adjoint::{
    solve_first_adjoint, sweep_second_adjoint, PSweep, RegressionConfig, SecondAdjointMethod,
};
use crate::error::{Error, Result};
use crate::maxprin::{mp_sweep_nodes, verify_max_principle, MpReport};
use crate::model::{apply_spike, ControlSignal, SpikeSpec, ValidatedModel};
use crate::paths::{
    cost_per_path, euler_state_step, sample_brownian, simulate_state, simulate_variations,
    CostEstimate,
};
use crate::stats::{self, LineFit};
use std::sync::Arc;

/// Why the descent loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The maximum-principle scan found no statistically positive gap.
    NoViolation,
    /// Iteration budget exhausted (a normal outcome, not a failure).
    Budget,
    /// The spike width hit the grid floor without an accepted improvement.
    Stagnation,
}

/// One accepted descent step.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DescentStep {
    pub iteration: usize,
    pub spike: SpikeSpec,
    pub cost: CostEstimate,
}

/// Final state of a spike-variation descent run.
#[derive(Debug)]
pub struct OptimizeResult {
    pub control: ControlSignal,
    /// Cost after iteration 0 (initial control) and after each accepted
    /// spike; non-increasing beyond one pooled standard error.
    pub cost_trace: Vec<CostEstimate>,
    pub accepted_spikes: Vec<DescentStep>,
    pub stop_reason: StopReason,
    pub iterations: usize,
    /// The last maximum-principle report (the certificate when the stop
    /// reason is `NoViolation`).
    pub final_report: Option<MpReport>,
}

/// Tunables of the descent loop.
#[derive(Debug, Clone, Copy)]
pub struct DescentConfig {
    pub n_paths: usize,
    pub regression: RegressionConfig,
    /// Violation threshold in standard errors.
    pub sigma: f64,
    /// Initial spike width in grid steps.
    pub init_width_steps: usize,
    /// Budget cap forwarded to nested second-adjoint estimation.
    pub second_adjoint_cap: usize,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            n_paths: 20_000,
            regression: RegressionConfig::default(),
            sigma: 3.0,
            init_width_steps: 4,
            second_adjoint_cap: 100_000_000,
        }
    }
}

/// Greedy spike descent: repeatedly scan the variational inequality,
/// spike the largest statistically positive gap, and keep the spike only
/// if the common-random-number cost estimate improves by more than one
/// pooled standard error; otherwise halve the spike width (floor one grid
/// step).
pub fn spike_descent(
    model: &ValidatedModel,
    u0: &ControlSignal,
    budget: usize,
    seed: u64,
    cfg: &DescentConfig,
) -> Result<OptimizeResult> {
    let grid = model.grid();
    let n = grid.n_steps();
    let dt = grid.dt();
    let driver = Arc::new(sample_brownian(grid, cfg.n_paths, seed)?);
    let needs_sweep = model.params().sigma2 != 0.0;
    let empty_sweep = PSweep {
        nodes: vec![],
        raw: vec![],
        method: SecondAdjointMethod::PathwiseRegression,
    };

    let mut u = u0.clone();
    let mut state = simulate_state(model, &u, &driver)?;
    let mut costs = cost_per_path(model, &u, &state)?;
    let (m, se) = stats::mean_and_stderr(&costs);
    let mut cost_trace = vec![CostEstimate {
        mean: m,
        std_error: se,
        n_paths: costs.len(),
    }];
    let mut accepted = Vec::new();
    let mut width_steps = cfg.init_width_steps.max(1);
    let mut stop_reason = StopReason::Budget;
    let mut final_report = None;
    let mut iterations = 0;

    for iteration in 0..budget {
        iterations = iteration + 1;
        let adj = solve_first_adjoint(model, &state, &cfg.regression)?;
        let sweep = if needs_sweep {
            sweep_second_adjoint(
                model,
                &state,
                &mp_sweep_nodes(model),
                SecondAdjointMethod::PathwiseRegression,
                crate::rng::NoiseSource::derive(seed, 0x5157_4545),
                cfg.second_adjoint_cap,
            )?
        } else {
            PSweep {
                nodes: empty_sweep.nodes.clone(),
                raw: vec![],
                method: empty_sweep.method,
            }
        };
        let report =
            verify_max_principle(model, &u, &state, &adj, &sweep, &cfg.regression, cfg.sigma)?;
        if report.is_certificate() {
            stop_reason = StopReason::NoViolation;
            final_report = Some(report);
            break;
        }
        // Largest gap; on ties the earliest (t, v) wins since violations
        // are already sorted that way.
        let best = report
            .violations
            .iter()
            .max_by(|a, b| a.gap_mean.partial_cmp(&b.gap_mean).unwrap())
            .cloned()
            .expect("non-empty violations");
        final_report = Some(report);

        let start_step = grid.node_of(best.t).expect("violation time is on-grid");
        let width = width_steps.min(n - start_step).max(1);
        let spike = SpikeSpec {
            t_start: best.t,
            epsilon: width as f64 * dt,
            value: best.v,
        };
        let candidate = apply_spike(grid, model.control_set(), &u, &spike)?.control;
        let cand_state = simulate_state(model, &candidate, &driver)?;
        let cand_costs = cost_per_path(model, &candidate, &cand_state)?;
        let diff: Vec<f64> = costs
            .iter()
            .zip(&cand_costs)
            .map(|(a, b)| a - b)
            .collect();
        let (improvement, improvement_se) = stats::mean_and_stderr(&diff);
        if improvement > improvement_se {
            u = candidate;
            state = cand_state;
            costs = cand_costs;
            let (m, se) = stats::mean_and_stderr(&costs);
            cost_trace.push(CostEstimate {
                mean: m,
                std_error: se,
                n_paths: costs.len(),
            });
            accepted.push(DescentStep {
                iteration,
                spike,
                cost: *cost_trace.last().unwrap(),
            });
        } else if width_steps <= 1 {
            stop_reason = StopReason::Stagnation;
            break;
        } else {
            width_steps = (width_steps / 2).max(1);
        }
    }

    Ok(OptimizeResult {
        control: u,
        cost_trace,
        accepted_spikes: accepted,
        stop_reason,
        iterations,
        final_report,
    })
}

/// Exhaustive open-loop oracle on the two-point scenario tree.
#[derive(Debug, Clone, serde::Serialize)]
pub struct OracleResult {
    /// Per-coarse-step control levels of the minimizer.
    pub best_control: Vec<f64>,
    /// Exact expected cost on the tree measure.
    pub best_cost: f64,
    /// Number of control sequences evaluated.
    pub enumerated: u64,
    /// Human-readable description of the tree.
    pub tree_spec: String,
    pub coarse_dt: f64,
}

struct CoarseGrid {
    dt: f64,
    n: usize,
    lag: usize,
    history: Vec<f64>,
}

fn coarse_grid(model: &ValidatedModel, n_coarse: usize) -> Result<CoarseGrid> {
    if n_coarse == 0 {
        return Err(Error::EmptyGrid);
    }
    let grid = model.grid();
    let dt_c = grid.horizon() / n_coarse as f64;
    let fine_per_coarse = dt_c / grid.dt();
    let stride = fine_per_coarse.round();
    if (fine_per_coarse - stride).abs() > 1e-9 * fine_per_coarse.max(1.0) || stride < 1.0 {
        return Err(Error::GridMismatch("coarse step vs fine grid"));
    }
    let stride = stride as usize;
    let lag_f = model.params().delay_d / dt_c;
    let lag = lag_f.round();
    if (lag_f - lag).abs() > 1e-9 * lag_f.max(1.0) || lag < 1.0 {
        return Err(Error::DelayNotGridAligned {
            d: model.params().delay_d,
            dt: dt_c,
        });
    }
    let lag = lag as usize;
    let history: Vec<f64> = (0..=lag)
        .map(|k| model.history()[k * stride])
        .collect();
    Ok(CoarseGrid {
        dt: dt_c,
        n: n_coarse,
        lag,
        history,
    })
}

/// Exact expected cost of one open-loop control sequence on the tree
/// measure (each Brownian increment is +-sqrt(dt) with probability 1/2,
/// matching mean and variance), integrated with the same Euler recursion
/// as the Monte Carlo simulator.
pub fn oracle_evaluate(model: &ValidatedModel, n_coarse: usize, control: &[f64]) -> Result<f64> {
    let cg = coarse_grid(model, n_coarse)?;
    if cg.n > 16 {
        // 4^n scenarios: anything beyond this is out of enumeration reach.
        return Err(Error::EnumerationCapExceeded {
            size: 1u128 << (2 * cg.n.min(64)),
            cap: 1 << 32,
        });
    }
    if control.len() != cg.n {
        return Err(Error::ControlLengthMismatch {
            expected: cg.n,
            got: control.len(),
        });
    }
    let p = model.params();
    let cost = model.cost();
    let sqrt_dt = cg.dt.sqrt();
    let n_scenarios = 1u64 << (2 * cg.n);

    // Deterministic control cost accumulates once.
    let mut c_part = 0.0;
    for &uv in control {
        c_part += model.c(uv)? * cg.dt;
    }

    let mut total = 0.0;
    let mut x = vec![0.0; cg.n + 1];
    for scenario in 0..n_scenarios {
        x[0] = cg.history[cg.lag];
        let mut state_part = 0.0;
        for j in 0..cg.n {
            state_part -= cost.l(x[j]) * cg.dt;
            let x_lag = if j >= cg.lag {
                x[j - cg.lag]
            } else {
                cg.history[j]
            };
            let u_lag = if j >= cg.lag { control[j - cg.lag] } else { 0.0 };
            let dw1 = if scenario >> (2 * j) & 1 == 0 { sqrt_dt } else { -sqrt_dt };
            let dw2 = if scenario >> (2 * j + 1) & 1 == 0 { sqrt_dt } else { -sqrt_dt };
            x[j + 1] = euler_state_step(
                p.a0, p.ad, p.b0, p.sigma1, p.sigma2, cg.dt, x[j], x_lag, control[j], u_lag,
                dw1, dw2,
            );
        }
        state_part -= cost.r(x[cg.n]);
        total += state_part;
    }
    Ok(c_part + total / n_scenarios as f64)
}

/// Enumerate every open-loop control sequence on the coarse grid and
/// return the exact tree-measure minimizer.
pub fn tree_oracle(model: &ValidatedModel, n_coarse: usize, cap: u128) -> Result<OracleResult> {
    let cg = coarse_grid(model, n_coarse)?;
    let levels = model.control_set().levels();
    let n_controls = (levels.len() as u128)
        .checked_pow(cg.n as u32)
        .ok_or(Error::EnumerationCapExceeded {
            size: u128::MAX,
            cap,
        })?;
    let n_scenarios = if cg.n > 16 {
        u128::MAX
    } else {
        1u128 << (2 * cg.n)
    };
    let size = n_controls.saturating_mul(n_scenarios);
    if size > cap {
        return Err(Error::EnumerationCapExceeded { size, cap });
    }

    let mut best_cost = f64::INFINITY;
    let mut best_control = vec![levels[0]; cg.n];
    let mut control = vec![levels[0]; cg.n];
    let mut enumerated = 0u64;
    // Lexicographic enumeration over the sorted level set.
    let mut digits = vec![0usize; cg.n];
    loop {
        for (j, &d) in digits.iter().enumerate() {
            control[j] = levels[d];
        }
        let cost = oracle_evaluate(model, n_coarse, &control)?;
        enumerated += 1;
        if cost < best_cost {
            best_cost = cost;
            best_control.copy_from_slice(&control);
        }
        // increment base-|U| counter
        let mut k = cg.n;
        loop {
            if k == 0 {
                break;
            }
            k -= 1;
            digits[k] += 1;
            if digits[k] < levels.len() {
                break;
            }
            digits[k] = 0;
        }
        if digits.iter().all(|&d| d == 0) {
            break;
        }
    }

    Ok(OracleResult {
        best_control,
        best_cost,
        enumerated,
        tree_spec: format!(
            "{} coarse steps, dt = {}, 2-point increments per Brownian component ({} scenarios), {} control sequences",
            cg.n, cg.dt, n_scenarios, n_controls
        ),
        coarse_dt: cg.dt,
    })
}

/// Fitted scaling of one sup-moment quantity across spike widths.
#[derive(Debug, Clone, serde::Serialize)]
pub struct QuantityFit {
    pub name: &'static str,
    pub eps: Vec<f64>,
    /// `E sup |.|^2` at each width.
    pub values: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    /// All values at rounding level: the quantity vanishes identically and
    /// a log-log fit is meaningless.
    pub below_floor: bool,
}

/// Values below this are rounding noise of the path recursions, not a
/// physical magnitude.
pub const SUP_SQ_FLOOR: f64 = 1e-20;

/// Log-log slopes of the four spike-variation quantities.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SlopeReport {
    pub quantities: Vec<QuantityFit>,
}

/// One slope-contract outcome.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SlopeCheck {
    pub name: String,
    pub observed: f64,
    pub passed: bool,
    pub detail: String,
}

impl SlopeReport {
    pub fn quantity(&self, name: &str) -> Option<&QuantityFit> {
        self.quantities.iter().find(|q| q.name == name)
    }

    /// Evaluate the asymptotic-order contracts:
    /// `E sup|y|^2 ~ eps`, `E sup|z|^2 ~ eps`, `E sup|x_eps - x - y|^2 ~
    /// eps^2`, and `E sup|x_eps - x - y - z|^2 = o(eps^2)` (one-sided).
    ///
    /// Note on the z contract: the dynamics are linear in the control, so
    /// `z` scales like the window mass itself and its fitted exponent sits
    /// near 2 (the same numbers drive the third quantity, whose contract
    /// is exponent 2). The O(eps) bound therefore holds with room to
    /// spare, but the two-sided band centered at 1 asserted here cannot:
    /// the check is kept as stated and reports its honest outcome.
    pub fn contract_checks(&self) -> Vec<SlopeCheck> {
        let mut out = Vec::new();
        let band = |q: &QuantityFit, center: f64, tol: f64, label: &str| SlopeCheck {
            name: label.to_string(),
            observed: q.slope,
            passed: !q.below_floor && (q.slope - center).abs() <= tol,
            detail: format!(
                "slope {:.3} (se {:.3}), band {center} +- {tol}",
                q.slope, q.slope_stderr
            ),
        };
        if let Some(q) = self.quantity("sup_y_sq") {
            out.push(band(q, 1.0, 0.2, "slope(E sup|y|^2) = 1.0 +- 0.2"));
        }
        if let Some(q) = self.quantity("sup_z_sq") {
            let mut check = band(q, 1.0, 0.2, "slope(E sup|z|^2) = 1.0 +- 0.2");
            check.detail.push_str(&format!(
                "; O(eps) upper bound itself {} (slope >= 0.8 one-sided)",
                if q.slope >= 0.8 { "holds" } else { "fails" }
            ));
            out.push(check);
        }
        if let Some(q) = self.quantity("sup_xmy_sq") {
            out.push(band(q, 2.0, 0.3, "slope(E sup|x_eps - x - y|^2) = 2.0 +- 0.3"));
        }
        if let Some(q) = self.quantity("sup_xmyz_sq") {
            let passed = if q.below_floor {
                // The two-term expansion is exact for these linear
                // dynamics: the remainder is rounding noise, which
                // certifies o(eps^2) outright.
                true
            } else {
                q.slope - 1.645 * q.slope_stderr > 2.0
            };
            out.push(SlopeCheck {
                name: "slope(E sup|x_eps - x - y - z|^2) > 2 (one-sided)".to_string(),
                observed: q.slope,
                passed,
                detail: if q.below_floor {
                    format!(
                        "all values below {SUP_SQ_FLOOR:.0e}: remainder is exactly zero, o(eps^2) certified"
                    )
                } else {
                    format!("slope {:.3} (se {:.3})", q.slope, q.slope_stderr)
                },
            });
        }
        out
    }
}

/// Simulate the state, the spiked state, and both variations on common
/// noise for each spike width, and fit the log-log scaling of the four
/// sup-moment quantities.
pub fn convergence_study(
    model: &ValidatedModel,
    u: &ControlSignal,
    t_start: f64,
    v: f64,
    eps_list: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<SlopeReport> {
    let grid = model.grid();
    let dt = grid.dt();
    if eps_list.len() < 4 {
        return Err(Error::EpsilonSpanTooNarrow);
    }
    let mut sorted = eps_list.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if sorted[sorted.len() - 1] / sorted[0] < 8.0 * (1.0 - 1e-9) {
        return Err(Error::EpsilonSpanTooNarrow);
    }
    for &eps in eps_list {
        let steps = eps / dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) || steps.round() < 1.0 {
            return Err(Error::EpsilonNotAligned(eps));
        }
    }

    let driver = Arc::new(sample_brownian(grid, n_paths, seed)?);
    let base = simulate_state(model, u, &driver)?;
    let n = grid.n_steps();

    let names = ["sup_y_sq", "sup_z_sq", "sup_xmy_sq", "sup_xmyz_sq"];
    let mut values = vec![Vec::with_capacity(eps_list.len()); 4];
    for &eps in &sorted {
        let spike = SpikeSpec {
            t_start,
            epsilon: eps,
            value: v,
        };
        let spiked_u = apply_spike(grid, model.control_set(), u, &spike)?.control;
        let spiked = simulate_state(model, &spiked_u, &driver)?;
        let var = simulate_variations(model, u, &spike, &driver)?;
        let mut sums = [0.0f64; 4];
        for path in 0..n_paths {
            let xr = base.x.row(path);
            let xe = spiked.x.row(path);
            let yr = var.y.row(path);
            let zr = var.z.row(path);
            let mut sup = [0.0f64; 4];
            for i in 0..=n {
                let d = xe[i] - xr[i];
                sup[0] = sup[0].max(yr[i].abs());
                sup[1] = sup[1].max(zr[i].abs());
                sup[2] = sup[2].max((d - yr[i]).abs());
                sup[3] = sup[3].max((d - yr[i] - zr[i]).abs());
            }
            for k in 0..4 {
                sums[k] += sup[k] * sup[k];
            }
        }
        for k in 0..4 {
            values[k].push(sums[k] / n_paths as f64);
        }
    }

    let quantities = names
        .iter()
        .enumerate()
        .map(|(k, &name)| {
            let vals = &values[k];
            let below_floor = vals.iter().all(|&m| m <= SUP_SQ_FLOOR);
            let xs: Vec<f64> = sorted.iter().map(|&e| e.ln()).collect();
            let ys: Vec<f64> = vals.iter().map(|&m| m.max(f64::MIN_POSITIVE).ln()).collect();
            let LineFit {
                slope,
                intercept,
                slope_stderr,
            } = stats::fit_line(&xs, &ys);
            QuantityFit {
                name,
                eps: sorted.clone(),
                values: vals.clone(),
                slope,
                intercept,
                slope_stderr,
                below_floor,
            }
        })
        .collect();
    Ok(SlopeReport { quantities })
}
