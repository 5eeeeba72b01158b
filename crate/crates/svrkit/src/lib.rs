//! Slice-to-volume registration toolkit.
//!
//! Generates labeled 2D-slice datasets from canonical 3D volumes, trains a
//! small convolutional regressor that predicts each slice's rigid pose in
//! the atlas coordinate system, and reconstructs a motion-compensated
//! volume via PSF splatting plus iterative intensity-based slice-to-volume
//! refinement. A DRR renderer covers the projective (X-ray/CT) use case.
//!
//! Start with the runnable programs under `examples/`; the `svrkit` binary
//! wires the same library calls into a reproducible command-line pipeline.

pub mod error;
pub mod geometry;
pub mod losses;
pub mod reconstruction;
pub mod regressor;
pub mod sampling;
pub mod volume;

pub use error::{Result, SvrError};
