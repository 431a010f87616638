use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Inputs that do not satisfy an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("field has nonzero mean {mean:e} (tolerance {tol:e}); operator is only defined on mean-zero fields")]
    MeanViolation { mean: f64, tol: f64 },

    #[error("singular operator: symbol value {value:e} at mode {mode:?} is not strictly positive")]
    SingularSymbol { mode: Vec<i64>, value: f64 },

    /// A shift constant (b or c0) is too small to keep a square root well defined.
    #[error("{quantity} = {value:e} is not positive; increase {remedy}")]
    ShiftTooSmall {
        quantity: &'static str,
        value: f64,
        remedy: &'static str,
    },

    /// The exponential auxiliary variable would overflow or is badly scaled.
    #[error("exponential scaling failure: {0}; increase the damping constant C")]
    Scaling(String),

    #[error("linear system not solvable: rank-one denominator {0:e} <= 0")]
    Solvability(f64),

    /// The quantity a scheme guarantees to be nonincreasing went up.
    #[error("energy increased at step {step}: {before:e} -> {after:e}")]
    EnergyIncrease {
        step: usize,
        before: f64,
        after: f64,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
