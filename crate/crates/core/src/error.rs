use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// Parameters or states outside the admissible region of the model.
    #[error("domain error: {0}")]
    Domain(String),

    /// A linear solve or determinant fell below its singularity threshold.
    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    /// An operation was called with arguments it is not defined for.
    #[error("usage error: {0}")]
    Usage(String),

    /// The adaptive integrator could not keep the step size above its floor.
    #[error("step size underflow at t = {t:e} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64, state: Vec<f64> },

    #[error("integrator exceeded {max_steps} steps before t = {t_final:e} (reached t = {t:e})")]
    TooManySteps { t: f64, t_final: f64, max_steps: usize },

    /// Adaptive quadrature did not reach the requested tolerance.
    #[error("quadrature refinement failed on [{a:e}, {b:e}]: error estimate {estimate:e}")]
    Quadrature { a: f64, b: f64, estimate: f64 },

    /// A quantity that must stay finite became NaN or infinite.
    #[error("non-finite value: {what}")]
    NonFinite { what: String, state: Vec<f64> },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }
}
