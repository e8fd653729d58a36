// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use crate::messaging::{Phase, PartyId};

pub type Result<T, E = VflError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum VflError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("crypto error: {0}")]
    Crypto(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("wire decode error: {0}")]
    Decode(String),

    #[error("model document error: {0}")]
    Model(String),

    #[error("unknown party {0}")]
    UnknownParty(PartyId),

    #[error("handler for {to} failed on envelope #{sequence} ({phase} from {from}): {source}")]
    Handler {
        sequence: u64,
        phase: Phase,
        from: PartyId,
        to: PartyId,
        #[source]
        source: Box<VflError>,
    },
}

impl VflError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VflError::Io {
            path: path.into(),
            source,
        }
    }
}
