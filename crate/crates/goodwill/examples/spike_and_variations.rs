//! Spike a control on a small window and simulate the first and second
//! variation processes. Because the dynamics are linear in the state and
//! the control, the spiked state decomposes exactly as x + y + z; the
//! example verifies that identity pathwise and shows how the variations
//! scale with the window width.
//!
//! ```bash
//! cargo run --release --example spike_and_variations
//! ```

use goodwill::model::{
    apply_spike, validate_model, AdvertisingCost, ControlSet, ControlSignal, CostSpec,
    HistorySpec, ModelParams, RunningReward, SpikeSpec, TerminalReward, TimeGrid,
};
use goodwill::paths::{sample_brownian, simulate_state, simulate_variations};
use std::sync::Arc;

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
        running: RunningReward::Linear { a: 0.0, b: 0.0 },
        terminal: TerminalReward::Linear { rho: 1.0 },
        operating_interval: (0.0, 4.0),
        linear_growth_bound: 10.0,
    };
    let model =
        validate_model(params, ControlSet::new(vec![0.0, 1.0]).unwrap(), cost, grid).unwrap();
    let u = ControlSignal::constant(model.grid(), model.control_set(), 1.0).unwrap();
    let driver = Arc::new(sample_brownian(model.grid(), 10_000, 7).unwrap());
    let base = simulate_state(&model, &u, &driver).unwrap();

    println!("window      E sup|y|^2    E sup|z|^2    max |x_eps - x - y - z|");
    for eps in [0.04, 0.08, 0.16] {
        let spike = SpikeSpec {
            t_start: 0.1,
            epsilon: eps,
            value: 0.0,
        };
        let spiked_u = apply_spike(model.grid(), model.control_set(), &u, &spike)
            .unwrap()
            .control;
        let spiked = simulate_state(&model, &spiked_u, &driver).unwrap();
        let var = simulate_variations(&model, &u, &spike, &driver).unwrap();

        let n = model.grid().n_steps();
        let mut sup_y = 0.0;
        let mut sup_z = 0.0;
        let mut worst_resid = 0.0f64;
        for path in 0..driver.n_paths() {
            let mut sy = 0.0f64;
            let mut sz = 0.0f64;
            for node in 0..=n {
                sy = sy.max(var.y.at(path, node).abs());
                sz = sz.max(var.z.at(path, node).abs());
                let resid = spiked.x.at(path, node)
                    - base.x.at(path, node)
                    - var.y.at(path, node)
                    - var.z.at(path, node);
                worst_resid = worst_resid.max(resid.abs());
            }
            sup_y += sy * sy;
            sup_z += sz * sz;
        }
        let nf = driver.n_paths() as f64;
        println!(
            "[0.10,{:4.2}]   {:.6}      {:.6}      {:.2e}",
            0.1 + eps,
            sup_y / nf,
            sup_z / nf,
            worst_resid
        );
    }
    println!("\ny carries the delayed diffusion kick (scales like eps),");
    println!("z carries the drift kick (scales like eps^2 in square mean),");
    println!("and the two-term expansion is exact up to float rounding.");
}
