use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid coefficient: {0}")]
    InvalidCoefficient(String),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("denominator underflow ({value:e}) at node {node} (x = {location:?})")]
    Underflow {
        node: usize,
        location: Vec<f64>,
        value: f64,
    },

    #[error("resolution too coarse: {0}")]
    Resolution(String),

    #[error("linear solver did not converge: {what} (residual {residual:e})")]
    Numeric { what: String, residual: f64 },

    #[error("domain too small: {0}")]
    DomainTooSmall(String),

    #[error("explicit sub-step cap exceeded: {needed} sub-steps needed, cap is {cap}")]
    SubstepCap { needed: usize, cap: usize },

    #[error("positivity clamp removed too much mass: {clamped:e} of {total:e}")]
    ClampExceeded { clamped: f64, total: f64 },

    #[error("instability: monitored C2 norm {norm:e} exceeds cap {cap:e} at t = {time}")]
    Instability { norm: f64, cap: f64, time: f64 },

    #[error("test function support (radius {radius}) exceeds the box half-width {half_width}")]
    Support { radius: f64, half_width: f64 },

    #[error("observable reads node {node} past the conditioning time node {limit}")]
    Measurability { node: usize, limit: usize },

    #[error("gauge too weak: no n <= {limit} satisfies the delta rule for epsilon = {epsilon}")]
    GaugeTooWeak { epsilon: f64, limit: u64 },

    #[error("metadata error: {0}")]
    Metadata(String),

    #[error("hypothesis not satisfied: {0}")]
    Hypothesis(String),

    #[error("density is not normalized: mean {mean} (expected 1)")]
    Normalization { mean: f64 },

    #[error("{flagged} of {total} paths left the box")]
    PathsLeftDomain { flagged: usize, total: usize },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
