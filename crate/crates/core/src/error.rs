use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The kernel takes a negative value somewhere on its validation grid.
    #[error("kernel is negative ({value:e}) at age {age}")]
    NonPositiveKernel { age: f64, value: f64 },

    #[error("decay rate {0} appears more than once")]
    DuplicateRate(f64),

    #[error("matrix exponential overflowed")]
    Overflow,

    /// A thinning candidate had intensity above the majorant it was drawn from.
    #[error("majorant {bound} below intensity {intensity} at t = {time}")]
    MajorantViolation {
        time: f64,
        intensity: f64,
        bound: f64,
    },

    #[error("more than {cap} events before t = {time}")]
    ExplosionGuard { cap: usize, time: f64 },

    #[error("ODE solution left the finite region near t = {time}")]
    BlowUp { time: f64 },

    #[error("mark integral failed at t = {time}: {reason}")]
    QuadratureFailure { time: f64, reason: String },

    #[error("exponential mark moment diverges: {0}")]
    MomentCondition(String),

    #[error("all {n_paths} paths produced the same value")]
    ZeroVariance { n_paths: usize },

    #[error("{what}: direct value {direct} disagrees with propagated value {propagated}")]
    StateMismatch {
        what: String,
        direct: f64,
        propagated: f64,
    },

    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Csv(err.to_string())
    }
}
