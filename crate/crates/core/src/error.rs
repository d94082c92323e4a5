use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("non-finite state encountered at step {step} (path {path})")]
    NonFiniteState { step: usize, path: usize },

    #[error("inadmissible impulse {impulse} on coordinate {coord}: {reason}")]
    InadmissibleImpulse {
        coord: usize,
        impulse: f64,
        reason: &'static str,
    },

    #[error("degenerate design domain on coordinate {0}")]
    DomainDegenerate(usize),

    #[error("too few design sites: {got} (need at least {need})")]
    TooFewSites { got: usize, need: usize },

    #[error("Cholesky factorisation failed after nugget escalation to {nugget:e}")]
    CholeskyFailure { nugget: f64 },

    #[error("degenerate design: duplicate site {0} carries conflicting responses")]
    DegenerateDesign(usize),

    #[error("singular spline system: {0}")]
    SingularSystem(String),

    #[error("no sign change of the target gradient on [{lo}, {hi}]")]
    BracketFailure { lo: f64, hi: f64 },

    #[error("empty action set at state {0:?}")]
    EmptyActionSet(Vec<f64>),

    #[error("solver aborted at step {step}: {source}")]
    AbortAtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("unsupported dimension {0} (only 1-D is supported here)")]
    UnsupportedDimension(usize),

    #[error("no impulse events recorded")]
    NoEvents,

    #[error("stack file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("malformed stack file: {0}")]
    BadFormat(String),

    #[error("config error in `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}
