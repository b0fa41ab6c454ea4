use thiserror::Error;

/// Errors produced by the core library.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("non-positive braking acceleration: {0}")]
    NonPositiveBraking(f64),

    #[error("already unsafe at zero response time: distance short by {deficit} m")]
    AlreadyUnsafe { deficit: f64 },

    #[error("dependency cycle involving modules {0:?}")]
    CycleDetected(Vec<String>),

    #[error("edge references unknown module '{0}'")]
    DanglingEdge(String),

    #[error("duplicate module name '{0}'")]
    DuplicateModule(String),

    #[error("missing latency stats for module '{0}'")]
    MissingStats(String),

    #[error("missing latency for critical module '{0}'")]
    MissingLatency(String),

    #[error("critical set is empty")]
    EmptyCriticalSet,

    #[error("invalid ROI: {0}")]
    InvalidRoi(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("insufficient data for fit: {0}")]
    InsufficientData(String),

    #[error("no conversion ratio for module '{module}' on resource {resource}")]
    MissingConversion { module: String, resource: u32 },

    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("plan enumeration produced no plans")]
    EmptyPlanSpace,

    #[error("priority search space too large: {modules} modules, limit {limit}")]
    PrioritySpaceTooLarge { modules: usize, limit: usize },

    #[error("no samples to plan over")]
    EmptySamples,

    #[error("cluster store is empty")]
    EmptyStore,

    #[error("module '{module}' has no schedulable resource on this machine")]
    Unschedulable { module: String },

    #[error("no power rating for resource {0}")]
    MissingPower(u32),

    #[error("reports disagree on trace length: {0} vs {1}")]
    TraceMismatch(usize, usize),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("malformed data: {0}")]
    MalformedData(String),

    #[error("linear solve failed: {0}")]
    SolveFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;
