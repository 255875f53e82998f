use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("point lies behind the camera")]
    BehindCamera,
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("invalid calibration file: {0}")]
    Calibration(String),
}

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("schema error in field `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("missing asset: {}", path.display())]
    MissingAsset { path: PathBuf },
    #[error("timestamp order violated in {stream} at index {index}")]
    TimestampOrder { stream: &'static str, index: usize },
    #[error("t = {t} outside session span [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
    #[error("frame {index} is {actual_w}x{actual_h}, camera expects {expected_w}x{expected_h}")]
    FrameSize { index: usize, expected_w: u32, expected_h: u32, actual_w: u32, actual_h: u32 },
    #[error("scene cannot be rendered: {0}")]
    Unrenderable(String),
    #[error("no frame with id {0}")]
    UnknownFrame(usize),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {}: {message}", path.display())]
    Image { path: PathBuf, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FoveationError {
    #[error("crop center ({u}, {v}) lies outside the {width}x{height} frame")]
    CenterOutsideFrame { u: f64, v: f64, width: u32, height: u32 },
    #[error("invalid crop spec: {0}")]
    InvalidSpec(String),
    #[error("frame is {actual_w}x{actual_h}, camera expects {expected_w}x{expected_h}")]
    FrameSize { expected_w: u32, expected_h: u32, actual_w: u32, actual_h: u32 },
    #[error("invalid budget input: {0}")]
    Domain(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
}
