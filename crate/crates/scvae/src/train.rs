//! Minibatch training with early stopping on a validation objective.

use std::str::FromStr;

use flowrecon_core::uq::latent_draw;
use flowrecon_core::{compute_scaling, FlowSeries, SensorLayout};
use flowrecon_nn::{adam_step, AdamConfig, AdamState};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adaptive::{adaptive_weights, AdaptiveRule, TermMagnitudes};
use crate::arch::ScvaeArchitecture;
use crate::elbo::{elbo_gradient, Weights};
use crate::error::{Error, Result};
use crate::model::ScvaeModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    Off,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    Fixed,
    Adaptive,
}

impl FromStr for LambdaMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Self::Off),
            "adaptive" => Ok(Self::Adaptive),
            _ => Err(Error::Config(format!("lambda mode must be off or adaptive, got {s:?}"))),
        }
    }
}

impl FromStr for BetaMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "adaptive" => Ok(Self::Adaptive),
            _ => Err(Error::Config(format!("beta mode must be fixed or adaptive, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Latent draws per datapoint and step.
    pub mc_samples: usize,
    pub lambda_mode: LambdaMode,
    pub beta_mode: BetaMode,
    /// Fixed beta, or the first epoch's beta in adaptive mode.
    pub beta: f64,
    /// First epoch's lambda in adaptive mode.
    pub lambda: f64,
    pub adaptive: AdaptiveRule,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 1000,
            patience: 50,
            mc_samples: 1,
            lambda_mode: LambdaMode::Off,
            beta_mode: BetaMode::Adaptive,
            beta: 1e-3,
            lambda: 1e-4,
            adaptive: AdaptiveRule::default(),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 || self.mc_samples == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size, patience, mc_samples and max_epochs must be positive".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite() && self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("beta must be >= 0 and lambda > 0".into()));
        }
        let r = &self.adaptive;
        if !(0.0 < r.beta_min && r.beta_min <= r.beta_max && 0.0 < r.lambda_min && r.lambda_min <= r.lambda_max) {
            return Err(Error::Config("adaptive bounds must satisfy 0 < min <= max".into()));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    fn initial_weights(&self) -> Weights {
        Weights { beta: self.beta, lambda: if self.lambda_mode == LambdaMode::Off { 0.0 } else { self.lambda } }
    }
}

/// One epoch of the training log. Terms are epoch means of the
/// maximization-form objective; `val_objective` is minimized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub div: f64,
    pub beta: f64,
    pub lambda: f64,
    pub val_objective: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation objective.
    pub model: ScvaeModel,
    pub log: Vec<LogRow>,
    pub best_epoch: usize,
    pub epochs_trained: usize,
}

/// Seed offset for the fixed validation latent draws.
const VALIDATION_STREAM: u64 = 0x7661_6c69_6461_7465;

/// Scaled states and measurements of a series.
fn prepare(model: &ScvaeModel, series: &FlowSeries) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut states = Vec::with_capacity(series.len());
    let mut meas = Vec::with_capacity(series.len());
    for s in series.iter() {
        let mut x = s.to_state();
        model.scaling().scale_state(&mut x);
        meas.push(model.measure_scaled(&x)?);
        states.push(x);
    }
    Ok((states, meas))
}

/// Validation objective: the negative predictive log-likelihood (up to
/// constants) of each validation state with `z` drawn from the prior, as
/// at prediction time, plus `lambda` times the divergence term (the
/// epoch's training weight; 0 when divergence is off). Draws are fixed
/// across epochs.
pub fn validation_objective(
    model: &ScvaeModel,
    states: &[Vec<f64>],
    meas: &[Vec<f64>],
    lambda: f64,
    seed: u64,
) -> Result<f64> {
    let n_state = model.grid().state_len() as f64;
    let n_points = model.grid().n_points() as f64;
    let mut acc = 0.0;
    for (k, (x, m)) in states.iter().zip(meas).enumerate() {
        let z = latent_draw(seed ^ VALIDATION_STREAM, k as u64, model.latent_dim());
        let xhat = model.decode(&z, m)?;
        let se: f64 = xhat.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        acc += se / (2.0 * n_state);
        if lambda != 0.0 {
            acc += lambda * model.divergence_scaled().squared_norm(&xhat)? / n_points;
        }
    }
    Ok(acc / states.len() as f64)
}

/// Trains a fresh model on `train`, selecting the epoch by `validation`.
/// Scaling parameters come from `train` alone.
pub fn train(
    train: &FlowSeries,
    validation: &FlowSeries,
    layout: &SensorLayout,
    arch: &ScvaeArchitecture,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Config("training and validation sets must be nonempty".into()));
    }
    if train.grid() != validation.grid() {
        return Err(Error::Config("training and validation grids differ".into()));
    }
    let scaling = compute_scaling(train)?;
    let mut model = ScvaeModel::new(arch.clone(), train.grid(), layout.clone(), scaling, cfg.seed)?;
    let (xs, ms) = prepare(&model, train)?;
    let (vxs, vms) = prepare(&model, validation)?;
    let with_div = cfg.lambda_mode == LambdaMode::Adaptive;
    let ld = model.latent_dim();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(cfg.adam, model.params());
    let mut weights = cfg.initial_weights();
    let mut history = Vec::new();
    let mut log = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.params().flat_values());
    let mut order: Vec<usize> = (0..xs.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut recon, mut kl, mut div) = (0.0, 0.0, 0.0);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let bx: Vec<&[f64]> = chunk.iter().map(|&k| xs[k].as_slice()).collect();
            let bm: Vec<&[f64]> = chunk.iter().map(|&k| ms[k].as_slice()).collect();
            let eps: Vec<f64> =
                (0..chunk.len() * cfg.mc_samples * ld).map(|_| StandardNormal.sample(&mut rng)).collect();
            let lb = elbo_gradient(&mut model, &bx, &bm, cfg.mc_samples, &eps, weights)?;
            if !lb.total.is_finite() || model.params().params().iter().any(|p| p.grad.iter().any(|g| !g.is_finite())) {
                return Err(Error::Diverged(format!(
                    "epoch {epoch}, batch {bi}: recon {}, kl {}, div {}",
                    lb.reconstruction_term, lb.kl_term, lb.divergence_term
                )));
            }
            let w = chunk.len() as f64 / xs.len() as f64;
            recon += w * lb.reconstruction_term;
            kl += w * lb.kl_term;
            div += w * lb.divergence_term;
            adam_step(&mut adam, model.params_mut());
        }
        let val = validation_objective(&model, &vxs, &vms, weights.lambda, cfg.seed)?;
        if !val.is_finite() {
            return Err(Error::Diverged(format!("epoch {epoch}: non-finite validation objective")));
        }
        log.push(LogRow { epoch, recon, kl, div, beta: weights.beta, lambda: weights.lambda, val_objective: val });
        log::debug!("epoch {epoch}: recon {recon:.3e} kl {kl:.3e} div {div:.3e} val {val:.4e}");
        if val < best.0 {
            best = (val, epoch, model.params().flat_values());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
        history.push(TermMagnitudes { recon, kl, div });
        if let Some((b, l)) = adaptive_weights(&history, &cfg.adaptive) {
            if cfg.beta_mode == BetaMode::Adaptive {
                weights.beta = b;
            }
            if with_div {
                weights.lambda = l;
            }
        }
    }
    let infos = model.params().infos();
    model.params_mut().load_flat(&infos, &best.2)?;
    let epochs_trained = log.len();
    Ok(TrainOutcome { model, log, best_epoch: best.1, epochs_trained })
}
