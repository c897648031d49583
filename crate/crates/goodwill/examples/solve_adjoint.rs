//! Solve the first-order anticipated adjoint equation on a case with a
//! closed-form answer: with zero running reward, linear terminal reward,
//! and no delayed drift the adjoint is p(t) = e^{-a0 (T - t)} and both
//! martingale integrands vanish.
//!
//! ```bash
//! cargo run --release --example solve_adjoint
//! ```

use goodwill::adjoint::{q_increment_stats, solve_first_adjoint, RegressionConfig};
use goodwill::model::{
    validate_model, AdvertisingCost, ControlSet, ControlSignal, CostSpec, HistorySpec,
    ModelParams, RunningReward, TerminalReward, TimeGrid,
};
use goodwill::paths::{sample_brownian, simulate_state};
use goodwill::stats;
use std::sync::Arc;

fn main() {
    let a0 = 0.5;
    let grid = TimeGrid::from_times(0.01, 1.0, 0.5).unwrap();
    let params = ModelParams {
        a0,
        ad: 0.0,
        b0: 2.0,
        sigma1: 0.25,
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
        terminal: TerminalReward::Linear { rho: 1.0 },
        operating_interval: (0.0, 4.0),
        linear_growth_bound: 10.0,
    };
    let model =
        validate_model(params, ControlSet::new(vec![0.0, 1.0]).unwrap(), cost, grid).unwrap();
    let driver = Arc::new(sample_brownian(model.grid(), 50_000, 31).unwrap());
    let u = ControlSignal::constant(model.grid(), model.control_set(), 1.0).unwrap();
    let state = simulate_state(&model, &u, &driver).unwrap();
    let adjoint = solve_first_adjoint(&model, &state, &RegressionConfig::default()).unwrap();

    println!("   t      p (solved)   e^(-a0 (T-t))   rel err");
    for node in (0..=model.grid().n_steps()).step_by(10) {
        let t = model.grid().time(node);
        let (mean, _) = stats::mean_and_stderr(&adjoint.p.column(node));
        let exact = (-a0 * (1.0 - t)).exp();
        println!(
            "  {t:>4.2}    {mean:.6}     {exact:.6}        {:+.2e}",
            (mean - exact) / exact
        );
    }

    let ((m1, se1), (m2, se2)) = q_increment_stats(&state, &adjoint, model.grid().n_steps() / 2);
    println!("\nq at t = 0.5: q1 = {m1:+.5} +- {se1:.5}, q2 = {m2:+.5} +- {se2:.5} (both ~ 0)");
}
