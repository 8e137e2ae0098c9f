use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no decodable slice images in {0}")]
    EmptyScan(PathBuf),

    #[error("failed to decode {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: slice is {got_h}x{got_w}, expected {want_h}x{want_w}")]
    DimensionMismatch {
        path: PathBuf,
        want_h: usize,
        want_w: usize,
        got_h: usize,
        got_w: usize,
    },

    #[error("invalid dimensions {height}x{width}")]
    InvalidDimensions { height: usize, width: usize },

    #[error("pixel buffer has {got} values, expected {want}")]
    PixelCount { want: usize, got: usize },

    #[error("mask has no set pixels")]
    EmptyMask,

    #[error("crop rect {rect:?} does not fit a {height}x{width} image")]
    CropOutOfBounds {
        rect: crate::spatial::CropRect,
        height: usize,
        width: usize,
    },

    #[error("scan has zero total lung area")]
    DegenerateScan,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{0} is empty")]
    EmptyInput(&'static str),

    #[error("prediction/label mismatch: {0}")]
    IdMismatch(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
