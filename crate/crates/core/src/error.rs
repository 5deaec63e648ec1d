use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("polygon is degenerate, its partitioning-lines domain is empty")]
    EmptyPld,

    #[error(
        "line (theta {theta_index}, rho {rho_index}) is not a candidate split for this region"
    )]
    InvalidSplit { theta_index: u32, rho_index: i64 },

    #[error("cannot fit a plane to an empty region")]
    EmptyRegion,

    #[error("pixel ({x}, {y}) is outside the {width}x{height} image")]
    OutOfBounds {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },

    #[error("non-finite plane coefficient")]
    NonFinite,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("encoder out of sync with candidate list: {0}")]
    Sync(String),

    #[error("corrupt stream: {0}")]
    Corrupt(String),

    /// `tile` is a zero-based row-major index; the message counts from 1.
    #[error("corrupt stream in tile {}: {reason}", .tile + 1)]
    CorruptTile { tile: usize, reason: String },

    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),

    #[error("unsupported image: {0}")]
    UnsupportedImage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
