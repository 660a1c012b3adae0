use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("latitude {lat} outside the UTM band [-80, 84]")]
    OutOfBand { lat: f64 },

    #[error("UTM coordinate outside valid range: {0}")]
    Domain(String),

    #[error("point at longitude {lon} is {offset:.3} degrees from the central meridian of zone {zone}; pinned-zone distortion too large")]
    Distortion { lon: f64, zone: u8, offset: f64 },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("expected a scalar, got shape {0:?}")]
    Rank(Vec<usize>),

    #[error("tensor does not belong to this gradient tape")]
    Tape,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("incomplete sample at row {row}: {what}")]
    IncompleteSample { row: usize, what: &'static str },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{path}: row {row}: {msg}")]
    Parse {
        path: PathBuf,
        row: usize,
        msg: String,
    },

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("track length mismatch: {predicted} predicted vs {truth} truth points")]
    Alignment { predicted: usize, truth: usize },

    #[error("parameter key error: {0}")]
    Key(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("image error: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
