use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("utility is undefined for negative power {0} kW")]
    NegativePower(f64),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("unknown {kind} strategy `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("missing required key: {0}")]
    MissingKey(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("scenario violates invariants: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("instance exceeds oracle cap: {0}")]
    OracleCap(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
