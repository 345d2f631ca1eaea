//! Neural implicit surface reconstruction for scenes seen through a
//! reflective pane: an SDF object path plus a learned per-ray auxiliary
//! plane path, fused into one rendered colour.

pub mod dataset;
pub mod error;
pub mod fields;
mod fsutil;
pub mod geometry;
pub mod mesh;
pub mod metrics;
pub mod raster;
pub mod renderer;
pub mod trainer;

pub use error::{HsrError, Result};
pub use fsutil::write_atomic;
