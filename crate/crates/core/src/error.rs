use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("grid spacing {spacing} exceeds the smallest one-step deviation {min_step}")]
    Resolution { spacing: f64, min_step: f64 },

    #[error("desk-scale cap exceeded: {what} = {value} > {cap}")]
    Capacity {
        what: &'static str,
        value: usize,
        cap: usize,
    },

    #[error("control {sigma2:?} at step {step} lies outside the volatility box")]
    ControlOutsideBox { step: usize, sigma2: Vec<f64> },

    #[error("non-finite value in {what} at step {step}, node {node}")]
    NonFinite {
        what: &'static str,
        step: usize,
        node: usize,
    },

    #[error("driver returned a non-finite value at t = {t}: y = {y:?}, z = {z:?}, eta = {eta:?}")]
    Driver {
        t: f64,
        y: Vec<f64>,
        z: Vec<f64>,
        eta: Vec<f64>,
    },

    #[error("exponential weight overflows: beta * T = {0} > 700")]
    Overflow(f64),

    #[error("degenerate denominator: D_n = {0}")]
    DegenerateDenominator(f64),

    #[error("matrix is singular or ill-conditioned (condition number {0:e})")]
    IllConditioned(f64),

    #[error("Picard iteration did not converge in {iterations} steps; distances {distances:?}")]
    Convergence {
        iterations: usize,
        distances: Vec<f64>,
    },

    #[error("misuse: {0}")]
    Misuse(String),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
