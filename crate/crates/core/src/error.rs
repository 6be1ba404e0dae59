use thiserror::Error;

/// Errors raised by the numerical and policy layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForgeError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("bounds must be grid nodes (got {0})")]
    BoundsNotNodes(f64),

    #[error("reversed bounds: {from} > {to}")]
    ReversedBounds { from: f64, to: f64 },

    #[error("grid too coarse: need at least 3 nodes, got {0}")]
    GridTooCoarse(usize),

    #[error("non-finite evaluation near {at}")]
    NonFinite { at: f64 },

    #[error("history shorter than kernel memory: have {have}, need {need}")]
    HistoryTooShort { have: f64, need: f64 },

    #[error("policy evaluation non-finite at t′ = {t}")]
    PolicyNonFinite { t: f64 },

    #[error("non-finite partial derivative for parameter {param} at node {node} (t′ = {t})")]
    ResidualNonFinite { param: usize, node: usize, t: f64 },

    #[error(
        "generating function violates ∂L/∂q(T) = 0 for parameter {param}: |∂L/∂q| = {value:e}"
    )]
    BoundaryViolation { param: usize, value: f64 },

    #[error("extension requires single parameter (policy has {0})")]
    MultiParameter(usize),

    #[error("retiree share saturated: p̂ = {0}")]
    RetireeShareSaturated(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, ForgeError>;
