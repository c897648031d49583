//! Fit the spike-width scaling of the variation processes: how
//! E sup|y|^2, E sup|z|^2, and the expansion remainders shrink with the
//! window width.
//!
//! ```bash
//! cargo run --release --example convergence_orders
//! ```

use goodwill::model::{
    validate_model, AdvertisingCost, ControlSet, ControlSignal, CostSpec, HistorySpec,
    ModelParams, RunningReward, TerminalReward, TimeGrid,
};
use goodwill::optimize::convergence_study;

fn main() {
    let grid = TimeGrid::from_times(0.01, 1.0, 0.3).unwrap();
    let params = ModelParams {
        a0: 1.0,
        ad: 0.5,
        b0: 2.0,
        sigma1: 0.2,
        sigma2: 0.3,
        delay_d: 0.3,
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
    let model =
        validate_model(params, ControlSet::new(vec![0.0, 1.0]).unwrap(), cost, grid).unwrap();
    let u = ControlSignal::constant(model.grid(), model.control_set(), 1.0).unwrap();

    let report =
        convergence_study(&model, &u, 0.1, 0.0, &[0.02, 0.04, 0.08, 0.16], 20_000, 71).unwrap();
    println!("quantity        slope   (se)     values across eps = 0.02..0.16");
    for q in &report.quantities {
        let vals: Vec<String> = q.values.iter().map(|v| format!("{v:.2e}")).collect();
        println!(
            "{:<14}  {:>6.3}  ({:.3})   {}",
            q.name,
            q.slope,
            q.slope_stderr,
            vals.join("  ")
        );
    }
    println!("\ncontract checks:");
    for check in report.contract_checks() {
        println!(
            "  [{}] {}: {}",
            if check.passed { "ok" } else { "off" },
            check.name,
            check.detail
        );
    }
    println!("\nnote: y carries the diffusion kick, so it scales like the");
    println!("window mass; z is the drift response and scales like its");
    println!("square. x_eps - x - y equals z exactly for these linear");
    println!("dynamics, and the final remainder sits at rounding level.");
}
