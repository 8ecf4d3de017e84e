use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite input to {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("kernel thinning needs N to be a power of 4 (got N = {n}); choose N in {{..., 256, 1024, 4096}}")]
    NotPowerOfFour { n: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite drift for particle {particle} at iteration {iteration}")]
    NonFiniteDrift { particle: usize, iteration: u64 },

    #[error("divergence: particle {particle} left the box |x| <= 1e12 at iteration {iteration}")]
    Diverged { particle: usize, iteration: u64 },

    #[error("ODE solve failed for parameters ({a}, {b}): {reason}")]
    Ode { a: f64, b: f64, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
