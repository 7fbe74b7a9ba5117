use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An input (or dual) tensor does not have the shape an operation expects.
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    /// A network layer sequence that does not compose.
    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    /// Input outside an operation's supported class (activation kind or
    /// domain kind).
    #[error("unsupported input: {0}")]
    Unsupported(&'static str),

    /// Pre-activation bounds required by an operation are missing.
    #[error("missing pre-activation bounds for layer {0}")]
    MissingBounds(usize),

    /// Scalar argument outside its admissible interval.
    #[error("value {value} outside [{lo}, {hi}]")]
    OutOfDomain { value: f64, lo: f64, hi: f64 },

    /// Explicit LP would exceed the configured variable cap.
    #[error("LP too large: {vars} variables exceeds cap {cap}")]
    LpTooLarge { vars: usize, cap: usize },

    /// More ambiguous neurons than the enumeration oracle can handle.
    #[error("too many ambiguous neurons: {count} exceeds cap {cap}")]
    TooManyAmbiguous { count: usize, cap: usize },

    /// The LP handed to the simplex solver is infeasible.
    #[error("LP is infeasible")]
    LpInfeasible,

    /// The LP handed to the simplex solver is unbounded below.
    #[error("LP is unbounded")]
    LpUnbounded,

    /// The simplex solver hit its iteration cap.
    #[error("LP solver failed to converge: {0}")]
    LpNumerical(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
