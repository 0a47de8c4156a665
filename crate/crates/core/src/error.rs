use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("time {t} is not a multiple of the step {dt}")]
    OffLattice { t: f64, dt: f64 },

    #[error("strong positivity violated: mass {value:e} at cell {cell}")]
    NonPositiveMass { cell: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("root bracket failure: {0}")]
    Bracket(String),

    #[error("no convergence after {iterations} iterations (last increment {increment:e})")]
    NotConverged { iterations: usize, increment: f64 },

    #[error("capacity not diverged: Cauchy increment {increment:e} at horizon {horizon}")]
    NotCauchy { increment: f64, horizon: f64 },

    #[error("inadmissible subdivision: {0}")]
    Inadmissible(String),

    #[error("measure has zero mass")]
    ZeroMass,

    #[error("population explosion: more than {0} particles")]
    Explosion(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
