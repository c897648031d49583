//! Model constants, control set, cost functions, control signals, and
//! validation of the standing assumptions.
//!
//! Controls are piecewise constant on the grid (left-continuous) and take
//! values in a finite set, which makes the variational inequality of the
//! maximum principle checkable per step and per candidate level. The delay
//! must be an integer number of grid steps so delayed terms are read by an
//! exact index shift.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Relative tolerance for grid-alignment checks (d/dt, T/dt, windows).
const ALIGN_TOL: f64 = 1e-9;

/// Round a time ratio to the nearest integer if it is within `ALIGN_TOL`.
fn aligned_steps(value: f64, dt: f64) -> Option<usize> {
    let ratio = value / dt;
    let rounded = ratio.round();
    if rounded >= 0.0 && (ratio - rounded).abs() <= ALIGN_TOL * ratio.abs().max(1.0) {
        Some(rounded as usize)
    } else {
        None
    }
}

/// Uniform time grid on `[0, T]` with an extension over `[-d, 0]` for
/// history indexing.
///
/// Node `i` of the simulation arrays is time `i * dt`; the delay is
/// `delay_steps` grid steps, so a delayed read at node `i` is node
/// `i - delay_steps` (or a history sample when that is negative).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    dt: f64,
    n_steps: usize,
    delay_steps: usize,
}

impl TimeGrid {
    /// Build a grid from continuous-time inputs, checking that both the
    /// delay and the horizon are integer multiples of `dt`.
    pub fn from_times(dt: f64, horizon: f64, delay: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::NonPositiveStep(dt));
        }
        if !(delay > 0.0) {
            return Err(Error::NonPositiveDelay(delay));
        }
        if !(horizon > 0.0) {
            return Err(Error::NonPositiveHorizon(horizon));
        }
        if delay >= horizon {
            return Err(Error::DelayExceedsHorizon { d: delay, horizon });
        }
        let delay_steps =
            aligned_steps(delay, dt).ok_or(Error::DelayNotGridAligned { d: delay, dt })?;
        let n_steps = aligned_steps(horizon, dt).ok_or(Error::DelayNotGridAligned {
            d: horizon,
            dt,
        })?;
        if n_steps == 0 || delay_steps == 0 {
            return Err(Error::EmptyGrid);
        }
        Ok(Self {
            dt,
            n_steps,
            delay_steps,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of steps on `[0, T]`; nodes are `0..=n_steps`.
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Delay expressed in grid steps.
    pub fn delay_steps(&self) -> usize {
        self.delay_steps
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn delay(&self) -> f64 {
        self.delay_steps as f64 * self.dt
    }

    /// Time of node `i`.
    pub fn time(&self, node: usize) -> f64 {
        node as f64 * self.dt
    }

    /// Node index of a time in `[0, T]`, if grid-aligned.
    pub fn node_of(&self, t: f64) -> Option<usize> {
        let i = aligned_steps(t, self.dt)?;
        (i <= self.n_steps).then_some(i)
    }
}

/// Goodwill history on `[-d, 0]`: either a constant level or explicit
/// samples at the extended grid nodes (left-constant between nodes, which
/// is all the Euler scheme ever reads).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum HistorySpec {
    Constant(f64),
    /// `delay_steps + 1` samples at times `-d, -d + dt, ..., 0`.
    Samples(Vec<f64>),
}

/// All model constants of the goodwill dynamics plus the initial history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Image deterioration rate (1/time).
    pub a0: f64,
    /// Delayed deterioration rate (1/time).
    pub ad: f64,
    /// Advertising effectiveness factor.
    pub b0: f64,
    /// Word-of-mouth volatility (multiplies `x dW1`).
    pub sigma1: f64,
    /// Delayed-advertising volatility (multiplies `u(t-d) dW2`).
    pub sigma2: f64,
    /// Delay d > 0.
    pub delay_d: f64,
    /// Horizon T > d.
    pub horizon_t: f64,
    /// Goodwill history on `[-d, 0]`.
    pub history: HistorySpec,
}

/// Finite set of admissible control levels. No convexity is assumed; the
/// levels are stored sorted so enumeration order never depends on input
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSet {
    levels: Vec<f64>,
}

impl ControlSet {
    pub fn new(mut levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::EmptyControlSet);
        }
        if levels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteControlLevel);
        }
        levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in levels.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateControlLevel(w[0]));
            }
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn contains(&self, u: f64) -> bool {
        self.levels.iter().any(|&v| v == u)
    }

    /// Index of an exact level.
    pub fn index_of(&self, u: f64) -> Option<usize> {
        self.levels.iter().position(|&v| v == u)
    }
}

/// Advertising cost `c`, defined on the control set only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AdvertisingCost {
    /// `c(u) = alpha u^2 + beta u`.
    Quadratic { alpha: f64, beta: f64 },
    /// One value per control level, aligned with the sorted set.
    Tabulated { values: Vec<f64> },
}

/// Running reward `l` with analytic first and second derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RunningReward {
    /// `l(x) = a x + b`.
    Linear { a: f64, b: f64 },
    /// `l(x) = a x^2 + b x + c`.
    Quadratic { a: f64, b: f64, c: f64 },
    /// `l(x) = level (1 - exp(-rate x))`: increasing and capped.
    ExpSaturating { level: f64, rate: f64 },
}

/// Terminal reward `r` with analytic derivatives; must be strictly
/// increasing on the declared operating interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalReward {
    /// `r(x) = rho x`, rho > 0.
    Linear { rho: f64 },
    /// `r(x) = a x^2 + b x + c` (bounded second derivative).
    Quadratic { a: f64, b: f64, c: f64 },
    /// `r(x) = m tanh(x / s)`: smooth, saturating, increasing.
    Saturating { m: f64, s: f64 },
}

/// Which cost function or derivative to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostTerm {
    C,
    L,
    LX,
    LXX,
    R,
    RX,
    RXX,
}

/// Cost specification: advertising cost `c`, running reward `l`, terminal
/// reward `r`, the operating interval on which `r` must increase, and the
/// declared linear-growth bound for `l_x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub advertising: AdvertisingCost,
    pub running: RunningReward,
    pub terminal: TerminalReward,
    /// Interval of goodwill values the model is expected to visit.
    pub operating_interval: (f64, f64),
    /// Bound on `|l_x|` over the operating interval.
    pub linear_growth_bound: f64,
}

impl CostSpec {
    /// Advertising cost at a control level. Errors for tabulated costs
    /// queried off the control grid.
    pub fn c(&self, control_set: &ControlSet, u: f64) -> Result<f64> {
        match &self.advertising {
            AdvertisingCost::Quadratic { alpha, beta } => Ok(alpha * u * u + beta * u),
            AdvertisingCost::Tabulated { values } => {
                let idx = control_set
                    .index_of(u)
                    .ok_or(Error::TabulatedCostOffGrid(u))?;
                Ok(values[idx])
            }
        }
    }

    pub fn l(&self, x: f64) -> f64 {
        match &self.running {
            RunningReward::Linear { a, b } => a * x + b,
            RunningReward::Quadratic { a, b, c } => a * x * x + b * x + c,
            RunningReward::ExpSaturating { level, rate } => level * (1.0 - (-rate * x).exp()),
        }
    }

    pub fn l_x(&self, x: f64) -> f64 {
        match &self.running {
            RunningReward::Linear { a, .. } => *a,
            RunningReward::Quadratic { a, b, .. } => 2.0 * a * x + b,
            RunningReward::ExpSaturating { level, rate } => level * rate * (-rate * x).exp(),
        }
    }

    pub fn l_xx(&self, x: f64) -> f64 {
        match &self.running {
            RunningReward::Linear { .. } => 0.0,
            RunningReward::Quadratic { a, .. } => 2.0 * a,
            RunningReward::ExpSaturating { level, rate } => {
                -level * rate * rate * (-rate * x).exp()
            }
        }
    }

    pub fn r(&self, x: f64) -> f64 {
        match &self.terminal {
            TerminalReward::Linear { rho } => rho * x,
            TerminalReward::Quadratic { a, b, c } => a * x * x + b * x + c,
            TerminalReward::Saturating { m, s } => m * (x / s).tanh(),
        }
    }

    pub fn r_x(&self, x: f64) -> f64 {
        match &self.terminal {
            TerminalReward::Linear { rho } => *rho,
            TerminalReward::Quadratic { a, b, .. } => 2.0 * a * x + b,
            TerminalReward::Saturating { m, s } => {
                let c = (x / s).cosh();
                m / (s * c * c)
            }
        }
    }

    pub fn r_xx(&self, x: f64) -> f64 {
        match &self.terminal {
            TerminalReward::Linear { .. } => 0.0,
            TerminalReward::Quadratic { a, .. } => 2.0 * a,
            TerminalReward::Saturating { m, s } => {
                let t = (x / s).tanh();
                let c = (x / s).cosh();
                -2.0 * m * t / (s * s * c * c)
            }
        }
    }

    /// Exact analytic evaluation of the requested function or derivative.
    pub fn eval(&self, control_set: &ControlSet, which: CostTerm, point: f64) -> Result<f64> {
        Ok(match which {
            CostTerm::C => self.c(control_set, point)?,
            CostTerm::L => self.l(point),
            CostTerm::LX => self.l_x(point),
            CostTerm::LXX => self.l_xx(point),
            CostTerm::R => self.r(point),
            CostTerm::RX => self.r_x(point),
            CostTerm::RXX => self.r_xx(point),
        })
    }
}

/// Piecewise-constant admissible control on the grid: `values[i]` holds on
/// `[t_i, t_{i+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    values: Vec<f64>,
}

impl ControlSignal {
    pub fn new(grid: &TimeGrid, control_set: &ControlSet, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_steps() {
            return Err(Error::ControlLengthMismatch {
                expected: grid.n_steps(),
                got: values.len(),
            });
        }
        for &v in &values {
            if !control_set.contains(v) {
                return Err(Error::ControlLevelNotInSet(v));
            }
        }
        Ok(Self { values })
    }

    pub fn constant(grid: &TimeGrid, control_set: &ControlSet, level: f64) -> Result<Self> {
        Self::new(grid, control_set, vec![level; grid.n_steps()])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Control value on step `i`, reading 0 before the campaign start
    /// (`i` past the end is a caller bug and panics via indexing).
    #[inline]
    pub fn at(&self, step: usize) -> f64 {
        self.values[step]
    }

    /// Delayed control `u(t_i - d)`: 0 for `t < d` because no advertising
    /// happens before the campaign starts.
    #[inline]
    pub fn at_lagged(&self, step: usize, delay_steps: usize) -> f64 {
        if step >= delay_steps {
            self.values[step - delay_steps]
        } else {
            0.0
        }
    }
}

/// Spike perturbation: replace the control by the level `value` on the
/// window `[t_start, t_start + epsilon)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikeSpec {
    pub t_start: f64,
    pub epsilon: f64,
    pub value: f64,
}

impl SpikeSpec {
    /// Step range `[start, end)` of the window, after alignment checks.
    pub fn step_range(&self, grid: &TimeGrid) -> Result<(usize, usize)> {
        let dt = grid.dt();
        let start = aligned_steps(self.t_start, dt);
        let len = aligned_steps(self.epsilon, dt);
        let (Some(start), Some(len)) = (start, len) else {
            return Err(Error::WindowNotAligned {
                t_start: self.t_start,
                epsilon: self.epsilon,
                dt,
            });
        };
        if len == 0 {
            return Err(Error::WindowNotAligned {
                t_start: self.t_start,
                epsilon: self.epsilon,
                dt,
            });
        }
        if self.t_start < 0.0 || start + len > grid.n_steps() {
            return Err(Error::WindowOutOfRange {
                start: self.t_start,
                end: self.t_start + self.epsilon,
                horizon: grid.horizon(),
            });
        }
        Ok((start, start + len))
    }
}

/// Spike delta signal `du(t) = (v - u(t)) 1_{window}(t)`, the per-step
/// deviation the spiked control adds on top of `u`. With this sign the
/// spiked state decomposes as `x + y + z` and the cost expansion carries
/// the delta without extra signs; see the duality and expansion tests.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSignal {
    values: Vec<f64>,
}

impl DeltaSignal {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, step: usize) -> f64 {
        self.values[step]
    }

    /// Delayed read `du(t_i - d)`, 0 before time d.
    #[inline]
    pub fn at_lagged(&self, step: usize, delay_steps: usize) -> f64 {
        if step >= delay_steps {
            self.values[step - delay_steps]
        } else {
            0.0
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Result of applying a spike to a control.
#[derive(Debug, Clone)]
pub struct SpikeApplication {
    /// The spiked control `u^eps`.
    pub control: ControlSignal,
    /// The delta signal `du`.
    pub delta: DeltaSignal,
}

/// Replace `u` by the spike level on the window and expose the delta
/// signal. Idempotent when the level already equals `u` there.
pub fn apply_spike(
    grid: &TimeGrid,
    control_set: &ControlSet,
    u: &ControlSignal,
    spike: &SpikeSpec,
) -> Result<SpikeApplication> {
    if !control_set.contains(spike.value) {
        return Err(Error::ControlLevelNotInSet(spike.value));
    }
    let (start, end) = spike.step_range(grid)?;
    let mut values = u.values().to_vec();
    let mut delta = vec![0.0; values.len()];
    for i in start..end {
        delta[i] = spike.value - values[i];
        values[i] = spike.value;
    }
    Ok(SpikeApplication {
        control: ControlSignal { values },
        delta: DeltaSignal { values: delta },
    })
}

/// A sealed, validated model: every hypothesis on the coefficients, the
/// control set, and the cost has been checked. Immutable afterwards and
/// safe to share across workers.
#[derive(Debug, Clone)]
pub struct ValidatedModel {
    params: ModelParams,
    control_set: ControlSet,
    cost: CostSpec,
    grid: TimeGrid,
    /// History samples at nodes `-d, -d + dt, ..., 0` (length L + 1).
    history: Vec<f64>,
}

/// Check all standing hypotheses and seal the model.
pub fn validate_model(
    params: ModelParams,
    control_set: ControlSet,
    cost: CostSpec,
    grid: TimeGrid,
) -> Result<ValidatedModel> {
    // Grid consistency with the continuous-time parameters.
    let g = TimeGrid::from_times(grid.dt(), params.horizon_t, params.delay_d)?;
    if g != grid {
        return Err(Error::GridMismatch("grid vs model delay/horizon"));
    }

    let lag = grid.delay_steps();
    let history = match &params.history {
        HistorySpec::Constant(level) => {
            if !level.is_finite() {
                return Err(Error::NonFiniteHistory);
            }
            vec![*level; lag + 1]
        }
        HistorySpec::Samples(samples) => {
            if samples.len() != lag + 1 {
                return Err(Error::HistoryLengthMismatch {
                    expected: lag + 1,
                    got: samples.len(),
                });
            }
            if samples.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteHistory);
            }
            samples.clone()
        }
    };

    // Tabulated cost must cover the control set exactly.
    if let AdvertisingCost::Tabulated { values } = &cost.advertising {
        if values.len() != control_set.len() {
            return Err(Error::TabulatedCostLengthMismatch {
                expected: control_set.len(),
                got: values.len(),
            });
        }
    }

    // Midpoint convexity of c, checked exhaustively over pairs whose
    // midpoint is itself a control level.
    for (i, &ui) in control_set.levels().iter().enumerate() {
        for &uj in control_set.levels().iter().skip(i + 1) {
            let mid = 0.5 * (ui + uj);
            if let Some(_) = control_set.index_of(mid) {
                let lhs = cost.c(&control_set, mid)?;
                let rhs = 0.5 * (cost.c(&control_set, ui)? + cost.c(&control_set, uj)?);
                if lhs > rhs + 1e-12 * rhs.abs().max(1.0) {
                    return Err(Error::NonConvexCost(mid));
                }
            }
        }
    }

    // Terminal reward strictly increasing on the operating interval:
    // probe the endpoints and midpoint.
    let (lo, hi) = cost.operating_interval;
    for probe in [lo, 0.5 * (lo + hi), hi] {
        if cost.r_x(probe) <= 0.0 {
            return Err(Error::NonIncreasingTerminalReward(probe));
        }
    }

    // Declared linear-growth bound for l_x: for our families |l_x| on an
    // interval is attained at an endpoint.
    let lx_max = cost.l_x(lo).abs().max(cost.l_x(hi).abs());
    if lx_max > cost.linear_growth_bound {
        return Err(Error::LinearGrowthBoundExceeded {
            observed: lx_max,
            bound: cost.linear_growth_bound,
        });
    }

    Ok(ValidatedModel {
        params,
        control_set,
        cost,
        grid,
        history,
    })
}

impl ValidatedModel {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn control_set(&self) -> &ControlSet {
        &self.control_set
    }

    pub fn cost(&self) -> &CostSpec {
        &self.cost
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// History samples at the extended nodes `-d, ..., 0`.
    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Advertising cost at a level of the validated control set.
    pub fn c(&self, u: f64) -> Result<f64> {
        self.cost.c(&self.control_set, u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basic_cost() -> CostSpec {
        CostSpec {
            advertising: AdvertisingCost::Quadratic {
                alpha: 1.0,
                beta: 0.0,
            },
            running: RunningReward::Linear { a: 0.0, b: 0.0 },
            terminal: TerminalReward::Linear { rho: 1.0 },
            operating_interval: (0.0, 4.0),
            linear_growth_bound: 10.0,
        }
    }

    fn basic_params() -> ModelParams {
        ModelParams {
            a0: 1.0,
            ad: 0.5,
            b0: 2.0,
            sigma1: 0.2,
            sigma2: 0.3,
            delay_d: 0.5,
            horizon_t: 1.0,
            history: HistorySpec::Constant(1.0),
        }
    }

    #[test]
    fn validates_a_sane_model() {
        let grid = TimeGrid::from_times(0.05, 1.0, 0.5).unwrap();
        let set = ControlSet::new(vec![0.0, 1.0]).unwrap();
        let model = validate_model(basic_params(), set, basic_cost(), grid).unwrap();
        assert_eq!(model.grid().delay_steps(), 10);
        assert_eq!(model.history().len(), 11);
    }

    #[test]
    fn rejects_misaligned_delay() {
        // d/dt = 12.5
        let err = TimeGrid::from_times(0.04, 1.0, 0.5).unwrap_err();
        assert!(matches!(err, Error::DelayNotGridAligned { .. }));
    }

    #[test]
    fn rejects_empty_control_set() {
        assert!(matches!(
            ControlSet::new(vec![]).unwrap_err(),
            Error::EmptyControlSet
        ));
    }

    #[test]
    fn rejects_nonpositive_delay() {
        assert!(matches!(
            TimeGrid::from_times(0.05, 1.0, 0.0).unwrap_err(),
            Error::NonPositiveDelay(_)
        ));
    }

    #[test]
    fn rejects_nonconvex_cost_on_set_with_midpoints() {
        let grid = TimeGrid::from_times(0.05, 1.0, 0.5).unwrap();
        let set = ControlSet::new(vec![0.0, 1.0, 2.0]).unwrap();
        let mut cost = basic_cost();
        // c(0)=0, c(1)=5, c(2)=2: midpoint convexity fails at u=1.
        cost.advertising = AdvertisingCost::Tabulated {
            values: vec![0.0, 5.0, 2.0],
        };
        let err = validate_model(basic_params(), set, cost, grid).unwrap_err();
        assert!(matches!(err, Error::NonConvexCost(_)));
    }

    #[test]
    fn rejects_decreasing_terminal_reward() {
        let grid = TimeGrid::from_times(0.05, 1.0, 0.5).unwrap();
        let set = ControlSet::new(vec![0.0, 1.0]).unwrap();
        let mut cost = basic_cost();
        // r_x = 2ax + b = -x: non-positive on [0, 4].
        cost.terminal = TerminalReward::Quadratic {
            a: -0.5,
            b: 0.0,
            c: 0.0,
        };
        let err = validate_model(basic_params(), set, cost, grid).unwrap_err();
        assert!(matches!(err, Error::NonIncreasingTerminalReward(_)));
    }

    #[test]
    fn cost_eval_matches_analytic_values() {
        let set = ControlSet::new(vec![0.0, 1.0]).unwrap();
        let cost = CostSpec {
            advertising: AdvertisingCost::Quadratic {
                alpha: 1.0,
                beta: 0.0,
            },
            running: RunningReward::Quadratic {
                a: 0.5,
                b: 0.0,
                c: 0.0,
            },
            terminal: TerminalReward::Linear { rho: 1.0 },
            operating_interval: (0.0, 4.0),
            linear_growth_bound: 10.0,
        };
        // c(u) = u^2 at u = 1
        assert_eq!(cost.eval(&set, CostTerm::C, 1.0).unwrap(), 1.0);
        // r(x) = x so r_xx = 0 anywhere
        assert_eq!(cost.eval(&set, CostTerm::RXX, 3.7).unwrap(), 0.0);
        // l(x) = x^2/2 so l_xx = 1 anywhere
        assert_eq!(cost.eval(&set, CostTerm::LXX, -2.0).unwrap(), 1.0);
    }

    #[test]
    fn tabulated_cost_off_grid_errors() {
        let set = ControlSet::new(vec![0.0, 1.0]).unwrap();
        let cost = CostSpec {
            advertising: AdvertisingCost::Tabulated {
                values: vec![0.0, 1.0],
            },
            ..basic_cost()
        };
        assert!(matches!(
            cost.c(&set, 0.5).unwrap_err(),
            Error::TabulatedCostOffGrid(_)
        ));
    }

    #[test]
    fn spike_replaces_window_and_exposes_delta() {
        let grid = TimeGrid::from_times(0.05, 1.0, 0.5).unwrap();
        let set = ControlSet::new(vec![0.0, 1.0]).unwrap();
        let u = ControlSignal::constant(&grid, &set, 0.0).unwrap();
        let spike = SpikeSpec {
            t_start: 0.2,
            epsilon: 0.05,
            value: 1.0,
        };
        let app = apply_spike(&grid, &set, &u, &spike).unwrap();
        for (i, (&v, &dv)) in app
            .control
            .values()
            .iter()
            .zip(app.delta.values())
            .enumerate()
        {
            if i == 4 {
                assert_eq!(v, 1.0);
                assert_eq!(dv, 1.0);
            } else {
                assert_eq!(v, 0.0);
                assert_eq!(dv, 0.0);
            }
        }
    }

    #[test]
    fn spike_identity_when_level_matches() {
        let grid = TimeGrid::from_times(0.05, 1.0, 0.5).unwrap();
        let set = ControlSet::new(vec![0.0, 1.0]).unwrap();
        let u = ControlSignal::constant(&grid, &set, 1.0).unwrap();
        let spike = SpikeSpec {
            t_start: 0.2,
            epsilon: 0.1,
            value: 1.0,
        };
        let app = apply_spike(&grid, &set, &u, &spike).unwrap();
        assert_eq!(app.control, u);
        assert!(app.delta.is_zero());
    }

    #[test]
    fn spike_window_errors() {
        let grid = TimeGrid::from_times(0.05, 1.0, 0.5).unwrap();
        let set = ControlSet::new(vec![0.0, 1.0]).unwrap();
        let u = ControlSignal::constant(&grid, &set, 0.0).unwrap();
        let out = SpikeSpec {
            t_start: 0.95,
            epsilon: 0.1,
            value: 1.0,
        };
        assert!(matches!(
            apply_spike(&grid, &set, &u, &out).unwrap_err(),
            Error::WindowOutOfRange { .. }
        ));
        let misaligned = SpikeSpec {
            t_start: 0.2,
            epsilon: 0.03,
            value: 1.0,
        };
        assert!(matches!(
            apply_spike(&grid, &set, &u, &misaligned).unwrap_err(),
            Error::WindowNotAligned { .. }
        ));
    }

    #[test]
    fn delayed_spike_support_can_leave_the_horizon() {
        // Window [0.9, 1.0] with d = 0.5: the delayed delta du(. - d) is
        // supported on [1.4, 1.5], outside [0, 1], so every delayed read
        // within the horizon is zero.
        let grid = TimeGrid::from_times(0.05, 1.0, 0.5).unwrap();
        let set = ControlSet::new(vec![0.0, 1.0]).unwrap();
        let u = ControlSignal::constant(&grid, &set, 1.0).unwrap();
        let spike = SpikeSpec {
            t_start: 0.9,
            epsilon: 0.1,
            value: 0.0,
        };
        let app = apply_spike(&grid, &set, &u, &spike).unwrap();
        let lag = grid.delay_steps();
        for i in 0..grid.n_steps() {
            assert_eq!(app.delta.at_lagged(i, lag), 0.0);
        }
    }

    #[test]
    fn control_set_is_order_insensitive() {
        let a = ControlSet::new(vec![2.0, 0.0, 1.0]).unwrap();
        let b = ControlSet::new(vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(a, b);
    }
}

#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    fn grid_and_set() -> (TimeGrid, ControlSet) {
        (
            TimeGrid::from_times(0.05, 1.0, 0.25).unwrap(),
            ControlSet::new(vec![0.0, 1.0, 2.0]).unwrap(),
        )
    }

    proptest! {
        /// Spiked controls stay inside the control set at every step.
        #[test]
        fn spiked_controls_stay_in_set(
            start_step in 0usize..19,
            len in 1usize..6,
            level_idx in 0usize..3,
            base_idx in 0usize..3,
        ) {
            let (grid, set) = grid_and_set();
            prop_assume!(start_step + len <= grid.n_steps());
            let base = set.levels()[base_idx];
            let u = ControlSignal::constant(&grid, &set, base).unwrap();
            let spike = SpikeSpec {
                t_start: start_step as f64 * grid.dt(),
                epsilon: len as f64 * grid.dt(),
                value: set.levels()[level_idx],
            };
            let app = apply_spike(&grid, &set, &u, &spike).unwrap();
            prop_assert!(app.control.values().iter().all(|&v| set.contains(v)));
            // delta vanishes exactly off the window
            for (i, &dv) in app.delta.values().iter().enumerate() {
                let inside = i >= start_step && i < start_step + len;
                if !inside {
                    prop_assert_eq!(dv, 0.0);
                }
            }
            // applying the same spike twice is idempotent
            let again = apply_spike(&grid, &set, &app.control, &spike).unwrap();
            prop_assert_eq!(again.control, app.control);
            prop_assert!(again.delta.is_zero());
        }
    }
}
