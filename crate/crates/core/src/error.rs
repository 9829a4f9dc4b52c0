use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("derivative order {0} is not supported (max 4)")]
    UnsupportedOrder(usize),
    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("singular Jacobian (condition estimate {condition:.3e})")]
    SingularJacobian { condition: f64 },
    #[error("continuation failed at step {step}: {source}")]
    Continuation {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("eigen-solver failure: {0}")]
    Eigen(String),
    #[error("ambiguous eigenvalue tracking at xi = {xi:.4e} (overlap {overlap:.3})")]
    AmbiguousTracking { xi: f64, overlap: f64 },
    #[error("spectral assumptions not satisfied: {0}")]
    AssumptionsFailed(String),
    #[error("blow-up at t = {time:.4}")]
    BlowUp { time: f64 },
    #[error("phase tracking jumped by more than half a period at t = {time:.4}")]
    Tracking { time: f64 },
    #[error("Picard iteration for gamma does not contract (ratio {ratio:.3})")]
    PicardNoContraction { ratio: f64 },
    #[error("singular modulation denominator: max gamma_x = {0:.4}")]
    SingularDenominator(f64),
    #[error("insufficient data for fit: {0}")]
    InsufficientData(String),
    #[error("structural failure: {0}")]
    Structural(String),
    #[error("stage {stage} failed (artifacts in {artifacts}): {source}")]
    Stage {
        stage: String,
        artifacts: String,
        #[source]
        source: Box<Error>,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
