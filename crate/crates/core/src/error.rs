use std::path::PathBuf;

use hsr_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HsrError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("pixel ({x}, {y}) outside {width}x{height} image")]
    PixelOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("plane normal has zero length")]
    DegeneratePlane,
    #[error("degenerate ray interval: near {near} >= far {far}")]
    DegenerateRay { near: f64, far: f64 },

    #[error("{what} count mismatch: {left} vs {right}")]
    CountMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(
        "non-finite loss at step {step}: color {color}, eikonal {eikonal}, plane normal {normal}"
    )]
    NonFiniteLoss {
        step: u64,
        color: f64,
        eikonal: f64,
        normal: f64,
    },

    #[error("cameras file not found: {0}")]
    CamerasNotFound(PathBuf),
    #[error("malformed cameras file {path}: {reason}")]
    MalformedCameras { path: PathBuf, reason: String },
    #[error("image not found: {0}")]
    MissingImage(PathBuf),
    #[error("cannot decode image {path}: {reason}")]
    ImageDecode { path: PathBuf, reason: String },
    #[error("resolution mismatch: expected {expected:?}, found {found:?}")]
    ResolutionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("point set is empty")]
    EmptyPointSet,
    #[error("cannot parse mesh {path} line {line}: {reason}")]
    MeshParse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = HsrError> = std::result::Result<T, E>;
