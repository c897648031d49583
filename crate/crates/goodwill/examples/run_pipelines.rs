//! Drive the experiment harness programmatically: load a JSON config,
//! run a pipeline, and inspect the machine-readable summary. Equivalent
//! to the `goodwill` CLI but embedded.
//!
//! ```bash
//! cargo run --release --example run_pipelines
//! ```

use goodwill::harness::{config_digest, load_config, run_command, Command};

fn main() {
    let text = r#"{
  "model": {
    "a0": 1.0, "ad": 0.5, "b0": 2.0,
    "sigma1": 0.2, "sigma2": 0.3,
    "delay_d": 0.5, "horizon_t": 1.0,
    "history": { "constant": 1.0 }
  },
  "control": {
    "levels": [0.0, 1.0],
    "initial": { "constant": 1.0 },
    "spike": { "t_start": 0.2, "epsilon": 0.06, "value": 0.0 }
  },
  "cost": {
    "advertising": { "quadratic": { "alpha": 0.5, "beta": 0.1 } },
    "running": { "quadratic": { "a": 0.25, "b": 0.0, "c": 0.0 } },
    "terminal": { "linear": { "rho": 1.0 } },
    "operating_interval": [0.0, 4.0],
    "linear_growth_bound": 10.0
  },
  "numerics": { "dt": 0.02, "n_paths": 5000, "seed": 11, "dump_paths": 3 }
}"#;
    let config = load_config(text).expect("valid config");
    println!("config digest: {}", config_digest(&config));

    let tmp = std::env::temp_dir().join(format!("goodwill-demo-{}", std::process::id()));
    for command in [Command::Simulate, Command::Adjoint, Command::Expand] {
        let out = tmp.join(command.name());
        let artifacts = run_command(&config, command, Some(&out), Some(2), None).unwrap();
        println!("\n{} -> {}", command.name(), artifacts.out_dir.display());
        println!("  files: {}", artifacts.files.join(", "));
        for test in &artifacts.summary.tests {
            println!(
                "  [{}] {}: statistic {:.4} vs threshold {:.4}",
                if test.passed { "PASS" } else { "FAIL" },
                test.name,
                test.statistic,
                test.threshold
            );
        }
    }
    println!("\nartifacts left under {}", tmp.display());
}
