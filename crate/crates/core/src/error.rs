use crate::data::{AvatarId, PlayerId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("player {player}: {message}")]
    Invariant { player: PlayerId, message: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("no visual embedding for avatar {0}")]
    MissingEmbedding(AvatarId),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("unknown player {0}")]
    UnknownPlayer(PlayerId),

    #[error("empty candidate list")]
    EmptyCandidates,

    #[error("invalid ratio: {0}")]
    InvalidRatio(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training data: {0}")]
    Training(String),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invariant(player: PlayerId, message: impl Into<String>) -> Self {
        Error::Invariant {
            player,
            message: message.into(),
        }
    }

    pub(crate) fn schema(line: usize, message: impl Into<String>) -> Self {
        Error::Schema {
            line,
            message: message.into(),
        }
    }
}
