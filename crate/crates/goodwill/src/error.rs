//! Crate-wide error type with a coarse classification used by the CLI to
//! pick its exit status (config errors vs numerical failures).

use thiserror::Error;

/// Everything that can go wrong while building or running an experiment.
#[derive(Debug, Error)]
pub enum Error {
    // --- model construction / validation ---
    #[error("delay is not positive: d = {0}")]
    NonPositiveDelay(f64),
    #[error("horizon is not positive: T = {0}")]
    NonPositiveHorizon(f64),
    #[error("delay must be smaller than the horizon: d = {d}, T = {horizon}")]
    DelayExceedsHorizon { d: f64, horizon: f64 },
    #[error("delay is not an integer number of grid steps: d = {d}, dt = {dt}")]
    DelayNotGridAligned { d: f64, dt: f64 },
    #[error("time step is not positive: dt = {0}")]
    NonPositiveStep(f64),
    #[error("grid step count must be positive")]
    EmptyGrid,
    #[error("control set is empty")]
    EmptyControlSet,
    #[error("control set contains a duplicate level: {0}")]
    DuplicateControlLevel(f64),
    #[error("control set contains a non-finite level")]
    NonFiniteControlLevel,
    #[error("control level {0} is not in the control set")]
    ControlLevelNotInSet(f64),
    #[error("advertising cost fails midpoint convexity on the control set at u = {0}")]
    NonConvexCost(f64),
    #[error("terminal reward is not strictly increasing at probe point x = {0}")]
    NonIncreasingTerminalReward(f64),
    #[error("running reward slope exceeds the declared linear growth bound: |l_x| = {observed}, bound = {bound}")]
    LinearGrowthBoundExceeded { observed: f64, bound: f64 },
    #[error("tabulated advertising cost has {got} entries but the control set has {expected}")]
    TabulatedCostLengthMismatch { expected: usize, got: usize },
    #[error("tabulated advertising cost queried off the control grid at u = {0}")]
    TabulatedCostOffGrid(f64),
    #[error("history has {got} samples but the grid needs {expected} on [-d, 0]")]
    HistoryLengthMismatch { expected: usize, got: usize },
    #[error("history contains a non-finite sample")]
    NonFiniteHistory,
    #[error("control signal has {got} values but the grid has {expected} steps")]
    ControlLengthMismatch { expected: usize, got: usize },

    // --- spike windows ---
    #[error("spike window [{start}, {end}] is not inside [0, {horizon}]")]
    WindowOutOfRange { start: f64, end: f64, horizon: f64 },
    #[error("spike window is not aligned to the time grid: t_start = {t_start}, epsilon = {epsilon}, dt = {dt}")]
    WindowNotAligned { t_start: f64, epsilon: f64, dt: f64 },

    // --- simulation ---
    #[error("grid mismatch between {0}")]
    GridMismatch(&'static str),
    #[error("need at least one path, got {0}")]
    NoPaths(usize),
    #[error("auxiliary start time {0} is not a grid point in [0, T)")]
    StartOffGrid(f64),

    // --- adjoint / regression ---
    #[error("regression needs at least {need} paths for {dim} basis columns, got {got}")]
    TooFewPathsForBasis { need: usize, dim: usize, got: usize },
    #[error("regression basis degree {0} is not supported (1..=4)")]
    UnsupportedBasisDegree(usize),
    #[error("nested second-adjoint budget exceeded: {outer} x {inner} paths > cap {cap}")]
    BudgetExceeded { outer: usize, inner: usize, cap: usize },

    // --- optimize ---
    #[error("scenario tree enumeration {size} exceeds cap {cap}")]
    EnumerationCapExceeded { size: u128, cap: u128 },
    #[error("spike width {0} is not a positive multiple of the grid step")]
    EpsilonNotAligned(f64),
    #[error("epsilon list needs >= 4 values spanning a factor >= 8")]
    EpsilonSpanTooNarrow,

    // --- harness / config ---
    #[error("config parse error: {0}")]
    ParseError(String),
    #[error("unknown key in config: {0}")]
    UnknownKey(String),
    #[error("missing required config key: {0}")]
    MissingRequired(String),
    #[error("config constraint violation at {key}: {reason}")]
    ConstraintViolation { key: String, reason: String },
    #[error("output directory {dir} already holds artifacts for digest {existing}, refusing to mix with {new}")]
    DigestCollision {
        dir: String,
        existing: String,
        new: String,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Exit-status classification for the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad configuration or inputs: exit status 2.
    Config,
    /// Numerical or runtime failure: exit status 3.
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            NonPositiveDelay(_)
            | NonPositiveHorizon(_)
            | DelayExceedsHorizon { .. }
            | DelayNotGridAligned { .. }
            | NonPositiveStep(_)
            | EmptyGrid
            | EmptyControlSet
            | DuplicateControlLevel(_)
            | NonFiniteControlLevel
            | ControlLevelNotInSet(_)
            | NonConvexCost(_)
            | NonIncreasingTerminalReward(_)
            | LinearGrowthBoundExceeded { .. }
            | TabulatedCostLengthMismatch { .. }
            | HistoryLengthMismatch { .. }
            | NonFiniteHistory
            | ControlLengthMismatch { .. }
            | WindowOutOfRange { .. }
            | WindowNotAligned { .. }
            | EpsilonNotAligned(_)
            | EpsilonSpanTooNarrow
            | ParseError(_)
            | UnknownKey(_)
            | MissingRequired(_)
            | ConstraintViolation { .. }
            | DigestCollision { .. } => ErrorClass::Config,
            _ => ErrorClass::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
