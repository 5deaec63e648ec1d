//! Binary space partitioning (BSP) tree image codec.
//!
//! Each tile of an 8-bit grayscale image is recursively bisected by
//! straight lines drawn from a quantized `(θ, ρ)` grid, choosing at every
//! step the line whose two least-squares planes fit best. Leaves carry
//! quantized plane coefficients. Line choices are coded as indices into a
//! candidate list the decoder rebuilds from region geometry alone.

pub mod codec;
pub mod error;
pub mod fitting;
pub mod geometry;
pub mod harness;
pub mod raster;
pub mod tree;

pub use error::{Error, Result};
pub use raster::GrayImage;
