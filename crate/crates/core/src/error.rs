use thiserror::Error;

/// Errors produced by the numerical machinery.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on arguments or problem data was violated.
    #[error("domain error: {0}")]
    Domain(String),

    /// The potential expression could not be parsed.
    #[error("parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },

    /// Evaluating an expression or a quadrature produced a non-finite value.
    #[error("non-finite value encountered in {context} at x = {x}")]
    NonFinite { context: &'static str, x: f64 },

    /// An iterative scheme failed to reach its tolerance.
    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// The particular solution came too close to zero to be usable.
    #[error("particular solution vanishes: min |f| = {min_abs:.3e}")]
    VanishingSolution { min_abs: f64 },

    /// A least-squares or dense solve ran out of numerical rank.
    #[error("ill-conditioned system: condition estimate {condition:.3e}")]
    IllConditioned { condition: f64 },

    /// Two grid functions were combined over different grids.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Malformed input data (CSV, JSON).
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
