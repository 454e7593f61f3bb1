//! Uncertainty quantification for posterior predictive samples.

pub mod chi2;
pub mod posterior;

pub use chi2::{chi2_cdf, chi2_quantile};
pub use posterior::{
    draw_samples, latent_draw, measurement_misfit, montage, predictive_mean, sample_fields, summarize, Channel,
    PosteriorSummary, PredictiveSampler,
};
