//! Patch-based contour detection: multi-scale patch datasets, a small
//! convolutional classifier, sliding-window voting, gradient-guided
//! refinement and a boundary benchmark.

pub mod bench;
pub mod convnet;
pub mod dataset;
pub mod error;
pub mod inference;
pub mod io;
pub mod raster;
pub mod refine;
pub mod synth;

pub use error::{Error, Result};
pub use raster::{RasterImage, ScaleIndex};
