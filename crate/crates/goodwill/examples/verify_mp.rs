//! Verify the maximum-principle variational inequality for a candidate
//! control on a tiny instance, using the exhaustive scenario-tree oracle
//! as ground truth: the oracle optimum passes with no violations, and a
//! deliberately perturbed control is flagged.
//!
//! ```bash
//! cargo run --release --example verify_mp
//! ```

use goodwill::adjoint::{
    solve_first_adjoint, sweep_second_adjoint, RegressionConfig, SecondAdjointMethod,
};
use goodwill::maxprin::{mp_sweep_nodes, verify_max_principle};
use goodwill::model::{
    validate_model, AdvertisingCost, ControlSet, ControlSignal, CostSpec, HistorySpec,
    ModelParams, RunningReward, TerminalReward, TimeGrid, ValidatedModel,
};
use goodwill::optimize::{oracle_evaluate, tree_oracle};
use goodwill::paths::{sample_brownian, simulate_state};
use std::sync::Arc;

fn check(model: &ValidatedModel, control: &ControlSignal, label: &str) {
    let driver = Arc::new(sample_brownian(model.grid(), 50_000, 9).unwrap());
    let state = simulate_state(model, control, &driver).unwrap();
    let adjoint = solve_first_adjoint(model, &state, &RegressionConfig::default()).unwrap();
    let sweep = sweep_second_adjoint(
        model,
        &state,
        &mp_sweep_nodes(model),
        SecondAdjointMethod::PathwiseRegression,
        10,
        usize::MAX,
    )
    .unwrap();
    let report = verify_max_principle(
        model,
        control,
        &state,
        &adjoint,
        &sweep,
        &RegressionConfig::default(),
        3.0,
    )
    .unwrap();
    println!(
        "{label}: {} violations out of {} points, max gap {:+.4}",
        report.violations.len(),
        report.checked_points,
        report.max_gap
    );
    for v in &report.violations {
        println!(
            "    t = {:.2}, v = {}: gap {:+.4} +- {:.4}",
            v.t, v.v, v.gap_mean, v.gap_stderr
        );
    }
}

fn main() {
    let grid = TimeGrid::from_times(0.25, 1.0, 0.25).unwrap();
    let params = ModelParams {
        a0: 1.0,
        ad: 0.5,
        b0: 2.0,
        sigma1: 0.15,
        sigma2: 0.2,
        delay_d: 0.25,
        horizon_t: 1.0,
        history: HistorySpec::Constant(1.0),
    };
    let cost = CostSpec {
        advertising: AdvertisingCost::Quadratic {
            alpha: 0.0,
            beta: 0.3,
        },
        running: RunningReward::Linear { a: 0.0, b: 0.0 },
        terminal: TerminalReward::Linear { rho: 1.0 },
        operating_interval: (0.0, 4.0),
        linear_growth_bound: 10.0,
    };
    let model =
        validate_model(params, ControlSet::new(vec![0.0, 1.0]).unwrap(), cost, grid).unwrap();

    let oracle = tree_oracle(&model, 4, 1 << 40).unwrap();
    println!(
        "oracle: best control {:?}, best cost {:.6} over {} sequences\n",
        oracle.best_control, oracle.best_cost, oracle.enumerated
    );

    let best =
        ControlSignal::new(model.grid(), model.control_set(), oracle.best_control.clone())
            .unwrap();
    check(&model, &best, "oracle optimum");

    // flip one step where the oracle shows strict deterioration
    let mut perturbed = oracle.best_control.clone();
    perturbed[1] = 1.0 - perturbed[1];
    println!(
        "\nflipping step 1 raises the tree cost to {:.6}",
        oracle_evaluate(&model, 4, &perturbed).unwrap()
    );
    let bad = ControlSignal::new(model.grid(), model.control_set(), perturbed).unwrap();
    check(&model, &bad, "perturbed control");
}
