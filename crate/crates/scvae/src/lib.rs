//! Semi-conditional variational autoencoder for sparse flow reconstruction.
//!
//! The encoder sees only the full snapshot; the decoder sees a latent draw
//! and the sensor measurements. At prediction time the encoder is dropped
//! and latent draws come from the prior, which turns the decoder into a
//! sampler of `p(x | m)` for the [`flowrecon_core::uq`] summaries.

pub mod adaptive;
pub mod arch;
pub mod elbo;
mod error;
pub mod model;
pub mod predict;
pub mod train;

pub use adaptive::{adaptive_weights, AdaptiveRule, TermMagnitudes};
pub use arch::ScvaeArchitecture;
pub use elbo::{elbo, elbo_gradient, kl_closed_form, reparameterize, LatentGaussian, LossBreakdown, Weights};
pub use error::{Error, Result};
pub use model::ScvaeModel;
pub use predict::{Conditioned, Predictor};
pub use train::{train, validation_objective, BetaMode, LambdaMode, LogRow, TrainConfig, TrainOutcome};
