use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("zone {zone}: expected {expected} rows of data, found {found}")]
    CountMismatch {
        zone: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: non-numeric token `{token}`")]
    NonNumericToken { line: usize, token: String },

    #[error("length mismatch: {what} has {found} values, expected {expected}")]
    LengthMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("degenerate grid: no row has two distinct coordinates along the {0} axis")]
    DegenerateGrid(&'static str),

    #[error("unstable step: non-finite value at time step {step}")]
    UnstableStep { step: usize },

    #[error("rank-deficient fit: {0}")]
    RankDeficient(String),

    #[error("no gradient signal: all |dU/dx| are below tolerance")]
    NoGradientSignal,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("stale cache: {0}")]
    StaleCache(String),

    #[error("no stochastic layers: every dropout rate is zero")]
    NoStochasticLayers,

    #[error("too few condition groups to split: {0}")]
    TooFewGroups(usize),

    #[error("training diverged at epoch {epoch}: validation loss is not finite")]
    DivergedTraining { epoch: usize },

    #[error("zero reference norm")]
    ZeroReference,

    #[error("zero value range")]
    ZeroRange,

    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot parse {}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
