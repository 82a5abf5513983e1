use thiserror::Error;

/// Errors raised by the simulator, the oracles and the experiment driver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parameters violate alpha < d < 2 alpha (alpha = {alpha}, d = {dim})")]
    OutsideIntermediateRegime { alpha: f64, dim: usize },

    #[error("quadrature did not converge: estimate {estimate:e}, error {error:e} after {evals} evaluations")]
    QuadratureNotConverged {
        estimate: f64,
        error: f64,
        evals: usize,
    },

    #[error("replica aborted after {events} branch events (cap {cap}) with {particles} live particles at t = {clock}")]
    Explosion {
        events: u64,
        cap: u64,
        particles: usize,
        clock: f64,
    },

    #[error("time grid error: {0}")]
    Grid(String),

    #[error("covariance matrix is not positive definite after jitter escalation ({0} attempts)")]
    NotPositiveDefinite(usize),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
