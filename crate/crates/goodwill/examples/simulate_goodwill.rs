//! Simulate goodwill paths under a constant advertising policy and
//! estimate the cost functional.
//!
//! ```bash
//! cargo run --release --example simulate_goodwill
//! ```

use goodwill::model::{
    validate_model, AdvertisingCost, ControlSet, ControlSignal, CostSpec, HistorySpec,
    ModelParams, RunningReward, TerminalReward, TimeGrid,
};
use goodwill::paths::{estimate_cost, sample_brownian, simulate_state};
use std::sync::Arc;

fn main() {
    let grid = TimeGrid::from_times(0.01, 1.0, 0.5).unwrap();
    let params = ModelParams {
        a0: 1.0,
        ad: 0.5,
        b0: 2.0,
        sigma1: 0.2,
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
        running: RunningReward::Quadratic {
            a: 0.25,
            b: 0.0,
            c: 0.0,
        },
        terminal: TerminalReward::Linear { rho: 1.0 },
        operating_interval: (0.0, 4.0),
        linear_growth_bound: 10.0,
    };
    let model = validate_model(params, ControlSet::new(vec![0.0, 1.0]).unwrap(), cost, grid)
        .expect("hypotheses hold");

    let driver = Arc::new(sample_brownian(model.grid(), 20_000, 42).unwrap());
    let full_on = ControlSignal::constant(model.grid(), model.control_set(), 1.0).unwrap();
    let off = ControlSignal::constant(model.grid(), model.control_set(), 0.0).unwrap();

    for (name, control) in [("u = 1", &full_on), ("u = 0", &off)] {
        let state = simulate_state(&model, control, &driver).unwrap();
        let cost = estimate_cost(&model, control, &state).unwrap();
        let terminal = state.x.column(model.grid().n_steps());
        let (x_mean, x_se) = goodwill::stats::mean_and_stderr(&terminal);
        println!(
            "{name}: J = {:+.4} +- {:.4}   E[x(T)] = {:.4} +- {:.4}",
            cost.mean, cost.std_error, x_mean, x_se
        );
    }

    println!("\nfirst path under u = 1 (every 10th node):");
    let state = simulate_state(&model, &full_on, &driver).unwrap();
    for node in (0..=model.grid().n_steps()).step_by(10) {
        println!(
            "  t = {:>4.2}   x = {:.4}",
            model.grid().time(node),
            state.x.at(0, node)
        );
    }
}
