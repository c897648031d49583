//! Estimate the second adjoint P(s) by nested Monte Carlo and compare it
//! against the lognormal moment identity P(s) = 2 exp(s1^2 (T - s)) that
//! holds for a quadratic terminal reward with no decay.
//!
//! ```bash
//! cargo run --release --example second_adjoint
//! ```

use goodwill::adjoint::estimate_second_adjoint;
use goodwill::model::{
    validate_model, AdvertisingCost, ControlSet, ControlSignal, CostSpec, HistorySpec,
    ModelParams, RunningReward, TerminalReward, TimeGrid,
};
use goodwill::paths::{sample_brownian, simulate_state};
use std::sync::Arc;

fn main() {
    let sigma1 = 0.3;
    let grid = TimeGrid::from_times(0.01, 1.0, 0.5).unwrap();
    let params = ModelParams {
        a0: 0.0,
        ad: 0.0,
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
        running: RunningReward::Linear { a: 0.0, b: 0.0 },
        // r(x) = x^2 + 0.1 x: r_xx = 2 and r stays increasing on the
        // operating range
        terminal: TerminalReward::Quadratic {
            a: 1.0,
            b: 0.1,
            c: 0.0,
        },
        operating_interval: (0.0, 4.0),
        linear_growth_bound: 10.0,
    };
    let model =
        validate_model(params, ControlSet::new(vec![0.0, 1.0]).unwrap(), cost, grid).unwrap();
    let driver = Arc::new(sample_brownian(model.grid(), 4_000, 81).unwrap());
    let u = ControlSignal::constant(model.grid(), model.control_set(), 1.0).unwrap();
    let state = simulate_state(&model, &u, &driver).unwrap();

    println!("   s      P nested (outer 4e3 x inner 1e2)   2 e^(s1^2 (T-s))");
    for s in [0.0, 0.25, 0.5, 0.75, 0.9] {
        let est = estimate_second_adjoint(&model, &state, s, 100, 5, usize::MAX).unwrap();
        let exact = 2.0 * (sigma1 * sigma1 * (1.0 - s)).exp();
        println!(
            "  {s:>4.2}    {:.4} +- {:.4}                  {exact:.4}",
            est.mean, est.std_error
        );
    }
}
