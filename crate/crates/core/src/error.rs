use thiserror::Error;

/// Errors raised by the solver. The CLI maps a few of these onto fixed exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum KvnError {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dynamical time is undefined at the phase-space origin")]
    OriginSingular,

    #[error("dynamical time of a free particle is undefined at zero momentum")]
    ZeroMomentum,

    #[error("negative energy {0} is outside the oscillator's (tau, H) chart")]
    NegativeEnergy(f64),

    #[error("point lies outside the model domain: {0}")]
    OutOfDomain(String),

    #[error("grid of {n1}x{n2} nodes is below the 8x8 minimum")]
    GridTooSmall { n1: usize, n2: usize },

    #[error("gauge function is not real-valued: {0}")]
    NonRealGauge(String),

    #[error("need at least 3 time slices, got {0}")]
    InsufficientSlices(usize),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("divergent integral: {0}")]
    DivergentIntegral(String),

    #[error("unbounded dynamical time: the model has no finite tau range")]
    UnboundedTau,

    #[error("under-resolved: {0}")]
    UnderResolved(String),

    #[error("specification out of range: {0}")]
    SpecOutOfRange(String),

    #[error("degenerate state: {0}")]
    DegenerateState(String),

    #[error("basis profiles are not orthonormal: {0}")]
    NonOrthonormalFamily(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, KvnError>;
