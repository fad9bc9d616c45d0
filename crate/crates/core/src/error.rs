use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate group: {present} present opinion(s), at least 2 required")]
    DegenerateGroup { present: usize },

    #[error("expected {expected} influenceabilities, got {got}")]
    AlphaCountMismatch { expected: usize, got: usize },

    #[error("invalid population spec: {0}")]
    InvalidSpec(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("schema error at line {line}: {message}")]
    Schema { line: u64, message: String },

    #[error("dataset mixes task kinds {first} and {second} (line {line})")]
    MixedTask {
        first: String,
        second: String,
        line: u64,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate correlation: {0}")]
    DegenerateCorrelation(String),

    #[error("median absolute deviation is zero")]
    DegenerateMad,

    #[error("too few couples for {k} components: {n} given, at least {min} required")]
    TooFewCouples { n: usize, k: usize, min: usize },

    #[error("no training data supplied to choose among {k} candidates")]
    NoTrainingData { k: usize },

    #[error("missing model: {0}")]
    MissingModel(String),

    #[error("participant {participant} has {available} usable games, {required} required")]
    InsufficientGames {
        participant: String,
        available: usize,
        required: usize,
    },

    #[error("base game {game} is incomplete: {reason}")]
    IncompleteBaseGame { game: String, reason: String },

    #[error("infeasible control schedule: {0}")]
    InfeasibleSchedule(String),

    #[error("singular control variables")]
    SingularControls,

    #[error("no data: {0}")]
    NoData(String),

    #[error("unknown participant {0}")]
    UnknownParticipant(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateGroup { .. } => "DegenerateGroup",
            Error::AlphaCountMismatch { .. } => "AlphaCountMismatch",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::Parse { .. } => "ParseError",
            Error::Schema { .. } => "SchemaError",
            Error::MixedTask { .. } => "MixedTaskError",
            Error::InsufficientData(_) => "InsufficientData",
            Error::DegenerateCorrelation(_) => "DegenerateCorrelation",
            Error::DegenerateMad => "DegenerateMAD",
            Error::TooFewCouples { .. } => "TooFewCouples",
            Error::NoTrainingData { .. } => "NoTrainingData",
            Error::MissingModel(_) => "MissingModel",
            Error::InsufficientGames { .. } => "InsufficientGames",
            Error::IncompleteBaseGame { .. } => "IncompleteBaseGame",
            Error::InfeasibleSchedule(_) => "InfeasibleSchedule",
            Error::SingularControls => "SingularControls",
            Error::NoData(_) => "NoData",
            Error::UnknownParticipant(_) => "UnknownParticipant",
            Error::Io { .. } => "IoError",
            Error::Json(_) => "JsonError",
            Error::Csv(_) => "CsvError",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
