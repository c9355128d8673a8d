//! Onboard super-resolution for satellite imagery: a residual dense
//! non-local attention network with overlap-tiled reconstruction, masked
//! PSNR training, and an analytic resource model for selective downlink.

pub mod cli;
pub mod dataio;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod tensor;
pub mod tiling;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig, Upsampler};
pub use tensor::{Scalar, Tensor};
