//! Error type shared by every module of the crate.

use std::io;
use std::time::Duration;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// No process grid satisfies the requested axis constraints.
    #[error("no factorization of {nprocs} ranks satisfies the constraints: {reason}")]
    Constraint { nprocs: usize, reason: String },

    #[error("index out of bounds: {0}")]
    Bounds(String),

    /// Local size incompatible with the configured overlap.
    #[error("invalid size: {0}")]
    Size(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Lifecycle misuse: double init, use after finalize and so on.
    #[error("invalid state: {0}")]
    State(String),

    /// Field size outside the admissible staggering window on some axis.
    #[error("invalid staggering on axis {axis}: field size {size}, local size {n}, overlap {overlap}")]
    Staggering {
        axis: usize,
        size: usize,
        n: usize,
        overlap: usize,
    },

    #[error("buffer pool: {0}")]
    Pool(String),

    /// Boundary widths do not cover the exchanged layers.
    #[error("boundary width {width} on axis {axis} is smaller than field overlap {overlap}")]
    Width {
        axis: usize,
        width: usize,
        overlap: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Peers disagree on a collective call or sent malformed data.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Byte stream ended in the middle of a frame.
    #[error("framing error: {0}")]
    Framing(String),

    #[error("transport error with rank {peer}: {message}")]
    Transport { peer: usize, message: String },

    #[error("timed out after {elapsed:?}: {what}")]
    Timeout { what: String, elapsed: Duration },

    #[error("rendezvous failed: {0}")]
    Rendezvous(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Name of the library layer an error originates from, for diagnostics.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Constraint { .. } => "topology",
            Error::Bounds(_) | Error::Size(_) | Error::Config(_) | Error::State(_) => "grid",
            Error::Staggering { .. } | Error::Pool(_) | Error::Shape(_) => "halo",
            Error::Width { .. } => "overlap",
            Error::Parameter(_) => "heat3d",
            Error::Protocol(_)
            | Error::Framing(_)
            | Error::Transport { .. }
            | Error::Timeout { .. }
            | Error::Rendezvous(_) => "transport",
            Error::Io(_) => "io",
        }
    }

    /// Attaches the calling rank to an error message, for diagnostics emitted
    /// by launchers that host many ranks.
    pub fn on_rank(self, rank: usize) -> RankError {
        RankError { rank, source: self }
    }
}

#[derive(Debug, Error)]
#[error("rank {rank}: {source}")]
pub struct RankError {
    pub rank: usize,
    #[source]
    pub source: Error,
}
