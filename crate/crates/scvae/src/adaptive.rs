//! Per-epoch reweighting of the objective terms.
//!
//! Each term's share of the summed magnitudes is inverted and normalized
//! to the reconstruction term, so a term contributing a small share gets a
//! large weight: `beta = |recon| / |kl|`, `lambda = |recon| / |div|`, both
//! clamped. With all magnitudes equal both weights are 1. The clamp keeps
//! `beta >= beta_min > 0` so the KL term never drops out entirely.
//!
//! The default `beta` cap is 1, the weight of the KL term in the plain
//! objective. The `lambda` bounds are far lower, `[1e-6, 1e-3]`: early in
//! training the reconstruction term is large and the decoder output has
//! little divergence, so the uncapped ratio is in the thousands and the
//! decoder collapses to the zero field. Even a cap of 1 does that. On
//! trained desk-scale models the ratio settles near `1e-3`, so the cap
//! binds only while reconstruction is still poor.

use serde::{Deserialize, Serialize};

/// Epoch-mean magnitudes of the three terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermMagnitudes {
    pub recon: f64,
    pub kl: f64,
    pub div: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveRule {
    pub beta_min: f64,
    pub beta_max: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for AdaptiveRule {
    fn default() -> Self {
        Self { beta_min: 1e-4, beta_max: 1.0, lambda_min: 1e-6, lambda_max: 1e-3 }
    }
}

fn ratio(num: f64, den: f64, lo: f64, hi: f64) -> f64 {
    let r = if den > 0.0 { num / den } else { hi };
    if r.is_nan() {
        hi
    } else {
        r.clamp(lo, hi)
    }
}

/// `(beta, lambda)` from the most recent epoch of `history`; `None` for an
/// empty history.
pub fn adaptive_weights(history: &[TermMagnitudes], rule: &AdaptiveRule) -> Option<(f64, f64)> {
    let last = history.last()?;
    let (r, k, d) = (last.recon.abs(), last.kl.abs(), last.div.abs());
    Some((ratio(r, k, rule.beta_min, rule.beta_max), ratio(r, d, rule.lambda_min, rule.lambda_max)))
}
