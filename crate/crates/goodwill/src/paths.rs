//! Brownian drivers and forward Monte Carlo simulation.
//!
//! All processes share one Euler-Maruyama convention: coefficients are read
//! at the left node, delayed terms are read by an exact index shift of
//! `delay_steps`, and the running cost uses left-endpoint quadrature.
//! Simulation is parallel over paths with per-path counter-based noise, so
//! results are bit-identical for any worker count.

use crate::error::{Error, Result};
use crate::model::{ControlSignal, DeltaSignal, SpikeSpec, TimeGrid, ValidatedModel};
use crate::rng::NoiseSource;
use crate::stats;
use rayon::prelude::*;
use std::sync::Arc;

/// Reproducible batch of Brownian increments `(dW1, dW2)`, one pair per
/// path per step, each `N(0, dt)` and independent across everything.
#[derive(Debug)]
pub struct BrownianBatch {
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
    dw1: Vec<f64>,
    dw2: Vec<f64>,
}

/// Generate a batch. Increments are a pure function of
/// `(seed, path, step)`.
pub fn sample_brownian(grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<BrownianBatch> {
    if n_paths == 0 {
        return Err(Error::NoPaths(n_paths));
    }
    let n = grid.n_steps();
    let sqrt_dt = grid.dt().sqrt();
    let src = NoiseSource::new(seed);
    let mut dw1 = vec![0.0; n_paths * n];
    let mut dw2 = vec![0.0; n_paths * n];
    dw1.par_chunks_mut(n)
        .zip(dw2.par_chunks_mut(n))
        .enumerate()
        .for_each(|(path, (row1, row2))| {
            let mut stream = src.stream(path as u64);
            for step in 0..n {
                let (z1, z2) = stream.next_pair();
                row1[step] = z1 * sqrt_dt;
                row2[step] = z2 * sqrt_dt;
            }
        });
    Ok(BrownianBatch {
        grid: *grid,
        n_paths,
        seed,
        dw1,
        dw2,
    })
}

impl BrownianBatch {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn dw1(&self, path: usize, step: usize) -> f64 {
        self.dw1[path * self.grid.n_steps() + step]
    }

    #[inline]
    pub fn dw2(&self, path: usize, step: usize) -> f64 {
        self.dw2[path * self.grid.n_steps() + step]
    }

    /// Per-path increment rows.
    pub fn rows(&self, path: usize) -> (&[f64], &[f64]) {
        let n = self.grid.n_steps();
        (
            &self.dw1[path * n..(path + 1) * n],
            &self.dw2[path * n..(path + 1) * n],
        )
    }

    /// Recompute the increment pair for `(path, step)` from scratch;
    /// used to assert the counter-based reproducibility contract.
    pub fn recompute(&self, path: usize, step: usize) -> (f64, f64) {
        let (z1, z2) = NoiseSource::new(self.seed).pair_at(path as u64, step as u64);
        let s = self.grid.dt().sqrt();
        (z1 * s, z2 * s)
    }
}

/// Dense per-path node values on `0..=n_steps`.
#[derive(Debug, Clone)]
pub struct PathMatrix {
    n_nodes: usize,
    values: Vec<f64>,
}

impl PathMatrix {
    pub fn zeros(n_paths: usize, n_nodes: usize) -> Self {
        Self {
            n_nodes,
            values: vec![0.0; n_paths * n_nodes],
        }
    }

    #[inline]
    pub fn at(&self, path: usize, node: usize) -> f64 {
        self.values[path * self.n_nodes + node]
    }

    pub fn row(&self, path: usize) -> &[f64] {
        &self.values[path * self.n_nodes..(path + 1) * self.n_nodes]
    }

    pub fn row_mut(&mut self, path: usize) -> &mut [f64] {
        &mut self.values[path * self.n_nodes..(path + 1) * self.n_nodes]
    }

    pub fn n_paths(&self) -> usize {
        self.values.len() / self.n_nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn par_rows_mut(&mut self) -> rayon::slice::ChunksMut<'_, f64> {
        self.values.par_chunks_mut(self.n_nodes)
    }

    /// Column `node` gathered across paths.
    pub fn column(&self, node: usize) -> Vec<f64> {
        (0..self.n_paths()).map(|p| self.at(p, node)).collect()
    }
}

/// Simulated goodwill paths together with the control and the driving
/// noise that produced them.
#[derive(Debug)]
pub struct StateBatch {
    pub control: ControlSignal,
    pub driver: Arc<BrownianBatch>,
    /// x at nodes `0..=n_steps`.
    pub x: PathMatrix,
}

impl StateBatch {
    /// Delayed state `x(t_i - d)` for path `p`: exact index shift into the
    /// path for `i >= L`, history sample otherwise.
    #[inline]
    pub fn x_lagged(&self, model: &ValidatedModel, path: usize, node: usize) -> f64 {
        let lag = model.grid().delay_steps();
        if node >= lag {
            self.x.at(path, node - lag)
        } else {
            model.history()[node]
        }
    }
}

/// One Euler-Maruyama step of the goodwill dynamics. Shared by the Monte
/// Carlo simulator and the scenario-tree oracle so both integrate the same
/// recursion.
#[inline]
pub fn euler_state_step(
    a0: f64,
    ad: f64,
    b0: f64,
    sigma1: f64,
    sigma2: f64,
    dt: f64,
    x: f64,
    x_lag: f64,
    u: f64,
    u_lag: f64,
    dw1: f64,
    dw2: f64,
) -> f64 {
    x + (b0 * u - a0 * x - ad * x_lag) * dt + sigma1 * x * dw1 + sigma2 * u_lag * dw2
}

/// Euler-Maruyama paths of the state equation under `u`.
pub fn simulate_state(
    model: &ValidatedModel,
    u: &ControlSignal,
    driver: &Arc<BrownianBatch>,
) -> Result<StateBatch> {
    let grid = model.grid();
    if driver.grid() != grid {
        return Err(Error::GridMismatch("driver vs model grid"));
    }
    if u.values().len() != grid.n_steps() {
        return Err(Error::GridMismatch("control vs model grid"));
    }
    let p = model.params();
    let (a0, ad, b0, s1, s2) = (p.a0, p.ad, p.b0, p.sigma1, p.sigma2);
    let dt = grid.dt();
    let n = grid.n_steps();
    let lag = grid.delay_steps();
    let history = model.history();
    let x0 = history[lag];

    let mut x = PathMatrix::zeros(driver.n_paths(), n + 1);
    let d = Arc::clone(driver);
    x.par_rows_mut().enumerate().for_each(|(path, row)| {
        let (dw1, dw2) = d.rows(path);
        row[0] = x0;
        for i in 0..n {
            let x_lag = if i >= lag { row[i - lag] } else { history[i] };
            row[i + 1] = euler_state_step(
                a0,
                ad,
                b0,
                s1,
                s2,
                dt,
                row[i],
                x_lag,
                u.at(i),
                u.at_lagged(i, lag),
                dw1[i],
                dw2[i],
            );
        }
    });
    Ok(StateBatch {
        control: u.clone(),
        driver: Arc::clone(driver),
        x,
    })
}

/// First and second variation paths for a spike.
#[derive(Debug)]
pub struct VariationBatch {
    pub spike: SpikeSpec,
    pub delta: DeltaSignal,
    pub driver: Arc<BrownianBatch>,
    /// First variation y: carries the `s2 du(t-d) dW2` diffusion.
    pub y: PathMatrix,
    /// Second variation z: carries the `b0 du(t) dt` drift.
    pub z: PathMatrix,
}

/// Simulate the first variation `y` and second variation `z` of the state
/// for the given spike, on the same driver as the accompanying state
/// simulation:
///
/// ```text
/// dy = [-a0 y - ad y(t-d)] dt + s1 y dW1 + s2 du(t-d) dW2,  y = 0 on [-d, 0]
/// dz = [-a0 z - ad z(t-d) + b0 du(t)] dt + s1 z dW1,        z = 0 on [-d, 0]
/// ```
///
/// With `du = (v - u) 1_window` the spiked state satisfies
/// `x_spiked = x + y + z` exactly (the dynamics are linear), which pins the
/// asymptotics checked by the convergence study.
pub fn simulate_variations(
    model: &ValidatedModel,
    u: &ControlSignal,
    spike: &SpikeSpec,
    driver: &Arc<BrownianBatch>,
) -> Result<VariationBatch> {
    let grid = model.grid();
    if driver.grid() != grid {
        return Err(Error::GridMismatch("driver vs model grid"));
    }
    let app = crate::model::apply_spike(grid, model.control_set(), u, spike)?;
    let delta = app.delta;
    let p = model.params();
    let (a0, ad, s1, s2, b0) = (p.a0, p.ad, p.sigma1, p.sigma2, p.b0);
    let dt = grid.dt();
    let n = grid.n_steps();
    let lag = grid.delay_steps();

    let mut y = PathMatrix::zeros(driver.n_paths(), n + 1);
    let mut z = PathMatrix::zeros(driver.n_paths(), n + 1);
    let d = Arc::clone(driver);
    let delta_ref = &delta;
    y.par_rows_mut()
        .zip(z.par_rows_mut())
        .enumerate()
        .for_each(|(path, (yrow, zrow))| {
            let (dw1, dw2) = d.rows(path);
            for i in 0..n {
                let y_lag = if i >= lag { yrow[i - lag] } else { 0.0 };
                let z_lag = if i >= lag { zrow[i - lag] } else { 0.0 };
                let du_lag = delta_ref.at_lagged(i, lag);
                yrow[i + 1] = yrow[i]
                    + (-a0 * yrow[i] - ad * y_lag) * dt
                    + s1 * yrow[i] * dw1[i]
                    + s2 * du_lag * dw2[i];
                zrow[i + 1] = zrow[i]
                    + (-a0 * zrow[i] - ad * z_lag + b0 * delta_ref.at(i)) * dt
                    + s1 * zrow[i] * dw1[i];
            }
        });
    Ok(VariationBatch {
        spike: *spike,
        delta,
        driver: Arc::clone(driver),
        y,
        z,
    })
}

/// Auxiliary process paths started from 1 at a grid time `s` with zero
/// pre-history.
#[derive(Debug)]
pub struct AuxBatch {
    /// Node index of the start time.
    pub start_node: usize,
    /// Values at nodes `start_node..=n_steps`; column 0 is exactly 1.
    pub values: PathMatrix,
}

impl AuxBatch {
    /// Value at an absolute grid node `>= start_node`.
    #[inline]
    pub fn at_node(&self, path: usize, node: usize) -> f64 {
        self.values.at(path, node - self.start_node)
    }
}

/// Simulate one auxiliary path into `out` (node offsets relative to
/// `start`), given the `dW1` increments for steps `start..n_steps`.
///
/// On the first delay segment `[s, min(s+d, T)]` the process has no delayed
/// feedback, so we use the exact lognormal solution
/// `exp((-a0 - s1^2/2)(t - s) + s1 (W1(t) - W1(s)))`; past `s + d` it
/// continues with Euler steps that read the delayed value by index shift.
fn aux_path(
    a0: f64,
    ad: f64,
    sigma1: f64,
    dt: f64,
    lag: usize,
    dw1: &[f64],
    out: &mut [f64],
) {
    let n_rel = out.len() - 1;
    out[0] = 1.0;
    let first = lag.min(n_rel);
    let drift = -a0 - 0.5 * sigma1 * sigma1;
    let mut w_acc = 0.0;
    for j in 0..first {
        w_acc += dw1[j];
        out[j + 1] = (drift * (j + 1) as f64 * dt + sigma1 * w_acc).exp();
    }
    for j in first..n_rel {
        let lagged = if j >= lag { out[j - lag] } else { 0.0 };
        out[j + 1] = out[j] + (-a0 * out[j] - ad * lagged) * dt + sigma1 * out[j] * dw1[j];
    }
}

/// Simulate the auxiliary process from grid time `s` on the given driver
/// (one auxiliary path per driver path, using that path's own `dW1`).
pub fn simulate_auxiliary(
    model: &ValidatedModel,
    s: f64,
    driver: &Arc<BrownianBatch>,
) -> Result<AuxBatch> {
    let grid = model.grid();
    if driver.grid() != grid {
        return Err(Error::GridMismatch("driver vs model grid"));
    }
    let start_node = grid
        .node_of(s)
        .filter(|&i| i < grid.n_steps())
        .ok_or(Error::StartOffGrid(s))?;
    Ok(simulate_auxiliary_at_node(model, start_node, driver))
}

/// Node-indexed variant of [`simulate_auxiliary`]; `start_node` may equal
/// `n_steps`, in which case every path is the single value 1.
pub fn simulate_auxiliary_at_node(
    model: &ValidatedModel,
    start_node: usize,
    driver: &Arc<BrownianBatch>,
) -> AuxBatch {
    let grid = model.grid();
    let p = model.params();
    let n = grid.n_steps();
    let lag = grid.delay_steps();
    let dt = grid.dt();
    let mut values = PathMatrix::zeros(driver.n_paths(), n - start_node + 1);
    let d = Arc::clone(driver);
    values.par_rows_mut().enumerate().for_each(|(path, row)| {
        let (dw1, _) = d.rows(path);
        aux_path(p.a0, p.ad, p.sigma1, dt, lag, &dw1[start_node..], row);
    });
    AuxBatch { start_node, values }
}

/// Simulate one auxiliary path with a private noise stream (used by the
/// nested second-adjoint estimator).
pub(crate) fn aux_path_with_stream(
    model: &ValidatedModel,
    start_node: usize,
    stream: &mut crate::rng::NoiseStream,
    out: &mut [f64],
) {
    let grid = model.grid();
    let p = model.params();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let n_rel = grid.n_steps() - start_node;
    let mut dw1 = vec![0.0; n_rel];
    for w in dw1.iter_mut() {
        *w = stream.next_pair().0 * sqrt_dt;
    }
    aux_path(p.a0, p.ad, p.sigma1, dt, grid.delay_steps(), &dw1, out);
}

/// Monte Carlo cost estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

/// Per-path realized cost under left-endpoint quadrature:
/// `sum_i (c(u_i) - l(x_i)) dt - r(x_N)`.
pub fn cost_per_path(
    model: &ValidatedModel,
    u: &ControlSignal,
    batch: &StateBatch,
) -> Result<Vec<f64>> {
    let grid = model.grid();
    if u.values() != batch.control.values() {
        return Err(Error::GridMismatch("control vs simulated batch"));
    }
    let n = grid.n_steps();
    let dt = grid.dt();
    let cost = model.cost();
    // Control-dependent part is deterministic; precompute once.
    let mut c_sum = 0.0;
    for i in 0..n {
        c_sum += model.c(u.at(i))? * dt;
    }
    let values = (0..batch.x.n_paths())
        .into_par_iter()
        .map(|path| {
            let row = batch.x.row(path);
            let mut running = 0.0;
            for i in 0..n {
                running -= cost.l(row[i]) * dt;
            }
            c_sum + running - cost.r(row[n])
        })
        .collect();
    Ok(values)
}

/// Monte Carlo estimate of the cost functional `J(u)`.
pub fn estimate_cost(
    model: &ValidatedModel,
    u: &ControlSignal,
    batch: &StateBatch,
) -> Result<CostEstimate> {
    let values = cost_per_path(model, u, batch)?;
    let (mean, std_error) = stats::mean_and_stderr(&values);
    Ok(CostEstimate {
        mean,
        std_error,
        n_paths: values.len(),
    })
}
