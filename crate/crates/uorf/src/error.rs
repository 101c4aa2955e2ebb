//! Error type shared by the fallible surfaces of the crate (I/O, config,
//! dataset validation, checkpoints). Hot-path tensor ops treat shape
//! mismatches as programmer errors and panic with both shapes in the message
//! instead of threading `Result` through every arithmetic call.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum UorfError {
    /// Bad or inconsistent configuration (unknown keys, out-of-range values).
    #[error("config: {0}")]
    Config(String),

    /// Dataset missing files, malformed metadata, or failing validation.
    #[error("data: {0}")]
    Data(String),

    /// Checkpoint magic/version/digest/CRC problems.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// PNG encode/decode failures.
    #[error("image: {0}")]
    Image(String),

    /// Anything that went wrong mid-computation (non-finite state, edit plan
    /// referring to a slot that does not exist, ...).
    #[error("runtime: {0}")]
    Runtime(String),
}

impl UorfError {
    /// Process exit code for the CLI: validation failures (2) are separated
    /// from runtime failures (3); usage errors (1) never reach this type.
    pub fn exit_code(&self) -> i32 {
        match self {
            UorfError::Config(_)
            | UorfError::Data(_)
            | UorfError::Checkpoint(_)
            | UorfError::Image(_) => 2,
            UorfError::Io(_) | UorfError::Runtime(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, UorfError>;
