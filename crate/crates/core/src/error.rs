use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("feedback matrix is not stable: {0}")]
    Stability(String),

    #[error("invalid inducing grid: {0}")]
    Grid(String),

    #[error("input {x} lies outside segment {segment} = [{lo}, {hi}]")]
    Segment {
        segment: usize,
        x: f64,
        lo: f64,
        hi: f64,
    },

    #[error("data input {x} is not covered by the inducing grid [{lo}, {hi}]")]
    Coverage { x: f64, lo: f64, hi: f64 },

    #[error("filter diverged at step {step}: {reason}")]
    FilterDivergence { step: usize, reason: String },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("observation {y} is invalid for the {likelihood} likelihood")]
    LikelihoodDomain { likelihood: &'static str, y: f64 },

    #[error("cubature over {0} latent dimensions is not supported (max 3)")]
    UnsupportedDimension(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("training aborted at iteration {iteration}: {source}")]
    Training {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error at line {line}: {reason}")]
    Data { line: usize, reason: String },

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable tag used in structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ParameterDomain(_) => "parameter_domain",
            Error::Stability(_) => "stability",
            Error::Grid(_) => "grid",
            Error::Segment { .. } => "segment",
            Error::Coverage { .. } => "coverage",
            Error::FilterDivergence { .. } => "filter_divergence",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::LikelihoodDomain { .. } => "likelihood_domain",
            Error::UnsupportedDimension(_) => "unsupported_dimension",
            Error::Dimension(_) => "dimension",
            Error::Contract(_) => "contract",
            Error::Training { .. } => "training",
            Error::Config(_) => "config",
            Error::Data { .. } => "data",
            Error::UnknownTask(_) => "unknown_task",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
