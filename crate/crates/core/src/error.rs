use thiserror::Error;

/// Errors produced anywhere in the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid command index {0}")]
    InvalidCommand(usize),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("infeasible task: {0}")]
    Infeasible(String),

    #[error("episode already finished")]
    EpisodeDone,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown player `{0}`")]
    UnknownPlayer(String),

    #[error("malformed data: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible(_) => 4,
            Error::InvalidParams(_) | Error::InvalidCommand(_) | Error::UnknownPlayer(_) => 2,
            _ => 3,
        }
    }

    /// Short machine-readable kind tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParams(_) => "invalid_params",
            Error::InvalidCommand(_) => "invalid_command",
            Error::NonFinite(_) => "non_finite",
            Error::Infeasible(_) => "infeasible",
            Error::EpisodeDone => "episode_done",
            Error::Empty(_) => "empty",
            Error::UnknownPlayer(_) => "unknown_player",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
