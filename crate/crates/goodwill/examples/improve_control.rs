//! Improve a control by spike-variation descent: scan the variational
//! inequality, spike the largest statistically positive gap, keep the
//! spike when the common-random-number cost improves.
//!
//! ```bash
//! cargo run --release --example improve_control
//! ```

use goodwill::model::{
    validate_model, AdvertisingCost, ControlSet, ControlSignal, CostSpec, HistorySpec,
    ModelParams, RunningReward, TerminalReward, TimeGrid,
};
use goodwill::optimize::{spike_descent, tree_oracle, DescentConfig};

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

    let u0 = ControlSignal::constant(model.grid(), model.control_set(), 0.0).unwrap();
    let cfg = DescentConfig {
        n_paths: 30_000,
        init_width_steps: 1,
        ..DescentConfig::default()
    };
    let result = spike_descent(&model, &u0, 24, 7, &cfg).unwrap();

    println!("descent from u = 0:");
    println!("  initial cost {:+.5} +- {:.5}", result.cost_trace[0].mean, result.cost_trace[0].std_error);
    for (k, step) in result.accepted_spikes.iter().enumerate() {
        println!(
            "  iter {:>2}: spike to {} on [{:.2}, {:.2}] -> cost {:+.5} +- {:.5}",
            step.iteration,
            step.spike.value,
            step.spike.t_start,
            step.spike.t_start + step.spike.epsilon,
            result.cost_trace[k + 1].mean,
            result.cost_trace[k + 1].std_error
        );
    }
    println!(
        "  stopped: {:?} after {} iterations, final control {:?}",
        result.stop_reason,
        result.iterations,
        result.control.values()
    );

    let oracle = tree_oracle(&model, 4, 1 << 40).unwrap();
    println!(
        "\nscenario-tree oracle: best control {:?} with cost {:+.5}",
        oracle.best_control, oracle.best_cost
    );
}
