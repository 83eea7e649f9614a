//! Unmixing-based fusion of a low-resolution hyperspectral cube with an
//! unregistered high-resolution RGB reference.

pub mod cfda;
mod error;
pub mod harness;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod raster;
pub mod scaca;
pub mod scene_sim;
pub mod scmf;
pub mod spectral_codec;
pub mod warp_and_encode;

pub use error::{Error, Result};
pub use raster::{HsiCube, Raster, RgbImage};
