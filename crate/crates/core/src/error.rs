use alloc::string::String;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Pipeline stage, used to locate numerical failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Fusion,
    Head,
    Decode,
    Loss,
    Backward,
    Warp,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Fusion => "fusion",
            Stage::Head => "inference head",
            Stage::Decode => "decode",
            Stage::Loss => "loss",
            Stage::Backward => "backward",
            Stage::Warp => "warp",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Shapes or counts that cannot be combined.
    #[error("structural error: {0}")]
    Structural(String),
    /// A value outside its documented domain.
    #[error("validation error: {0}")]
    Validation(String),
    /// A NaN or infinity appeared inside a computation.
    #[error("non-finite value produced in {stage}")]
    Numerical { stage: Stage },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn structural(msg: impl Into<String>) -> Error {
    Error::Structural(msg.into())
}

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
