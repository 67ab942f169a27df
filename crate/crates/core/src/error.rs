use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A time or space argument fell outside the open domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative method ran out of iterations. `last_iterate` carries the
    /// nodal values it stopped at so the caller can inspect them.
    #[error(
        "{method} did not converge after {iterations} iterations (last residual {residual:.3e})"
    )]
    Convergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("construction failed at x = {x}: {message}")]
    Construction { x: f64, message: String },

    #[error("internal error: {0}")]
    Internal(String),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
