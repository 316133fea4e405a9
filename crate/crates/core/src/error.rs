use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("invalid parameter box: {}", .0.join("; "))]
    InvalidBox(Vec<String>),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown parameter name `{0}`")]
    UnknownParameter(String),
    #[error("negative volatility base {base} at x = {x}")]
    NegativeVolatilityBase { x: f64, base: f64 },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("batch size must be at least 1")]
    EmptyBatch,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PayoffError {
    #[error("empty path")]
    EmptyPath,
    #[error("Asian payoff needs {needed} observations after the initial state, path has {available}")]
    LengthMismatch { needed: usize, available: usize },
    #[error("invalid payoff specification: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HedgeError {
    #[error("input has dimension {got}, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid network or training configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at iteration {iteration} (seed {seed}, stream {stream})")]
    NonFiniteLoss { iteration: usize, seed: u64, stream: u64 },
    #[error("hedge price {price} is below the floor {floor}; relative errors are undefined")]
    PriceTooSmall { price: f64, floor: f64 },
    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Payoff(#[from] PayoffError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PdeError {
    #[error("payoff is path-dependent and has no terminal function")]
    PathDependentPayoff,
    #[error("time step {dt} violates the stability bound {bound}")]
    CflViolation { dt: f64, bound: f64 },
    #[error("invalid grid configuration: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationError {
    #[error("window of length {0} has no transitions")]
    WindowTooShort(usize),
    #[error("series `{ticker}` has {len} observations, fewer than the window length {window}")]
    SeriesTooShort { ticker: String, len: usize, window: usize },
    #[error("invalid price series: {0}")]
    InvalidSeries(String),
    #[error("invalid estimation configuration: {0}")]
    InvalidConfig(String),
    #[error("every optimizer start was infeasible")]
    AllStartsInfeasible,
    #[error("cannot freeze {param} at {value}: outside {interval}")]
    FrozenOutsideInterval { param: &'static str, value: f64, interval: String },
    #[error("malformed price data: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numerical,
    Data,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Payoff(#[from] PayoffError),
    #[error(transparent)]
    Hedge(#[from] HedgeError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Json(_) => ErrorKind::Config,
            Error::Model(ModelError::InvalidBox(_))
            | Error::Model(ModelError::InvalidInterval { .. })
            | Error::Model(ModelError::InvalidGrid(_))
            | Error::Model(ModelError::InvalidParameter(_))
            | Error::Model(ModelError::UnknownParameter(_))
            | Error::Model(ModelError::EmptyBatch)
            | Error::Payoff(PayoffError::InvalidSpec(_))
            | Error::Hedge(HedgeError::InvalidConfig(_))
            | Error::Hedge(HedgeError::CheckpointVersion(_))
            | Error::Pde(PdeError::InvalidGrid(_))
            | Error::Pde(PdeError::PathDependentPayoff)
            | Error::Estimation(EstimationError::InvalidConfig(_))
            | Error::Estimation(EstimationError::FrozenOutsideInterval { .. }) => ErrorKind::Config,
            Error::Data(_)
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Estimation(EstimationError::InvalidSeries(_))
            | Error::Estimation(EstimationError::SeriesTooShort { .. })
            | Error::Estimation(EstimationError::Data(_)) => ErrorKind::Data,
            _ => ErrorKind::Numerical,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
