//! A small reverse-mode layer stack: dense, valid 2D convolution and its
//! transpose, ReLU, zero-padding and cropping, plus Adam.
//!
//! Tensors are `(H, W, C)` per sample behind a leading batch axis. Models
//! in the literature sometimes carry an extra unit axis on images; it adds
//! nothing here and is left out.

mod adam;
mod error;
pub mod layers;
mod network;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::{Error, Result};
pub use layers::LayerSpec;
pub use network::{Network, Tape};
pub use params::{Param, ParamId, ParamInfo, ParamStore};
pub use tensor::Tensor;
