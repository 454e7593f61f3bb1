//! The variational objective of the semi-conditional VAE, in maximization
//! form:
//!
//! ```text
//! total = recon + lambda * div - beta * kl
//! recon = -||x - xhat||^2 / (2 * 2N)     (unit-variance Gaussian likelihood)
//! div   = -||L_div xhat||^2 / N          (likelihood of zero divergence)
//! kl    = KL(q(z|x) || N(0, I))
//! ```
//!
//! `recon` and `div` are averaged over the latent draws; everything is
//! averaged over the batch. Constants of the log-likelihoods are dropped.

use flowrecon_nn::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{image_to_state, state_to_image, ScvaeModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGaussian {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

impl LatentGaussian {
    pub fn new(mean: Vec<f64>, log_variance: Vec<f64>) -> Result<Self> {
        if mean.len() != log_variance.len() || mean.is_empty() {
            return Err(Error::Config("mean and log-variance need the same nonzero length".into()));
        }
        if mean.iter().chain(&log_variance).any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite latent parameters".into()));
        }
        Ok(Self { mean, log_variance })
    }

    pub(crate) fn from_head(head: &[f64], dim: usize) -> Self {
        Self { mean: head[..dim].to_vec(), log_variance: head[dim..2 * dim].to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_variance.iter().map(|l| l.exp()).collect()
    }
}

/// `z = mean + exp(log_variance / 2) * eps`.
pub fn reparameterize(g: &LatentGaussian, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != g.dim() {
        return Err(Error::Config(format!("noise has length {}, latent has {}", eps.len(), g.dim())));
    }
    Ok(g.mean.iter().zip(&g.log_variance).zip(eps).map(|((m, l), e)| m + (0.5 * l).exp() * e).collect())
}

/// `0.5 * sum(mean^2 + var - log var - 1)`.
pub fn kl_closed_form(g: &LatentGaussian) -> f64 {
    0.5 * g.mean.iter().zip(&g.log_variance).map(|(m, l)| m * m + l.exp() - l - 1.0).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction_term: f64,
    pub divergence_term: f64,
    pub kl_term: f64,
    pub beta: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn new(recon: f64, div: f64, kl: f64, w: Weights) -> Self {
        Self {
            reconstruction_term: recon,
            divergence_term: div,
            kl_term: kl,
            beta: w.beta,
            lambda: w.lambda,
            total: recon + w.lambda * div - w.beta * kl,
        }
    }
}

/// Term weights. `lambda == 0` is the unregularized objective; the
/// divergence term is then still reported but never differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub beta: f64,
    pub lambda: f64,
}

/// Objective of one datapoint (scaled state and measurements) averaged over
/// the given latent noise draws.
pub fn elbo(model: &ScvaeModel, x: &[f64], m: &[f64], eps: &[Vec<f64>], weights: Weights) -> Result<LossBreakdown> {
    objective(model, Store::Read(&model.store), &[x], &[m], eps.len(), &eps.concat(), weights)
}

/// Batch objective; leaves the gradient of `-total` (the quantity a descent
/// optimizer minimizes) accumulated in the model's parameter store.
///
/// `eps` holds `draws` noise vectors per datapoint, datapoint-major.
pub fn elbo_gradient(
    model: &mut ScvaeModel,
    xs: &[&[f64]],
    ms: &[&[f64]],
    draws: usize,
    eps: &[f64],
    weights: Weights,
) -> Result<LossBreakdown> {
    let mut store = std::mem::take(&mut model.store);
    let out = objective(model, Store::Write(&mut store), xs, ms, draws, eps, weights);
    model.store = store;
    out
}

/// Parameters the objective reads, and optionally accumulates gradients into.
pub(crate) enum Store<'a> {
    Read(&'a ParamStore),
    Write(&'a mut ParamStore),
}

impl Store<'_> {
    fn get(&self) -> &ParamStore {
        match self {
            Store::Read(s) => s,
            Store::Write(s) => s,
        }
    }
}

pub(crate) fn objective(
    model: &ScvaeModel,
    mut store: Store<'_>,
    xs: &[&[f64]],
    ms: &[&[f64]],
    draws: usize,
    eps: &[f64],
    weights: Weights,
) -> Result<LossBreakdown> {
    let grad = matches!(store, Store::Write(_));
    let b = xs.len();
    let ld = model.latent_dim();
    if b == 0 || ms.len() != b {
        return Err(Error::Config(format!("{b} states with {} measurement vectors", ms.len())));
    }
    if draws == 0 || eps.len() != b * draws * ld {
        return Err(Error::Config(format!("expected {} noise values, got {}", b * draws * ld, eps.len())));
    }
    for m in ms {
        model.check_measurements(m)?;
    }
    let grid = model.grid();
    let n_state = grid.state_len();
    let n_points = grid.n_points() as f64;
    let images = model.images(xs)?;
    let meas = Tensor::new(vec![b, model.n_measurements()], ms.concat())?;

    let (head, enc_tape) = model.encoder.forward(store.get(), &[&images])?;
    let latents: Vec<_> = (0..b).map(|k| LatentGaussian::from_head(head.sample(k), ld)).collect();
    let kl = latents.iter().map(kl_closed_form).sum::<f64>() / b as f64;

    let scale = 1.0 / (b * draws) as f64;
    let mut dhead = vec![0.0; b * 2 * ld];
    let (mut recon, mut div) = (0.0, 0.0);
    let mut state = vec![0.0; n_state];
    for l in 0..draws {
        let noise = |k: usize| &eps[(k * draws + l) * ld..(k * draws + l + 1) * ld];
        let mut z = Vec::with_capacity(b * ld);
        for (k, g) in latents.iter().enumerate() {
            z.extend(reparameterize(g, noise(k))?);
        }
        let zt = Tensor::new(vec![b, ld], z)?;
        let (xhat, dec_tape) = model.decoder.forward(store.get(), &[&zt, &meas])?;
        let mut dxhat = vec![0.0; xhat.len()];
        for k in 0..b {
            let xh = xhat.sample(k);
            let x = images.sample(k);
            let d = &mut dxhat[k * n_state..(k + 1) * n_state];
            let mut se = 0.0;
            for ((g, a), t) in d.iter_mut().zip(xh).zip(x) {
                se += (a - t) * (a - t);
                *g = scale * (a - t) / n_state as f64;
            }
            recon -= se / (2.0 * n_state as f64);
            image_to_state(&grid, xh, &mut state);
            let dv = model.divergence_scaled().apply(&state)?;
            div -= dv.iter().map(|v| v * v).sum::<f64>() / n_points;
            if grad && weights.lambda != 0.0 {
                let back = model.divergence_scaled().apply_transpose(&dv)?;
                let mut img = vec![0.0; n_state];
                state_to_image(&grid, &back, &mut img);
                let c = scale * weights.lambda * 2.0 / n_points;
                for (g, v) in d.iter_mut().zip(&img) {
                    *g += c * v;
                }
            }
        }
        if grad {
            let dout = Tensor::new(xhat.shape().to_vec(), dxhat)
                .map_err(|_| Error::Diverged("non-finite reconstruction gradient".into()))?;
            let Store::Write(st) = &mut store else { unreachable!() };
            let dz = model.decoder.backward(st, &dec_tape, &dout)?.swap_remove(0);
            for (k, g) in latents.iter().enumerate() {
                let e = noise(k);
                for d in 0..ld {
                    let gz = dz.data()[k * ld + d];
                    dhead[k * 2 * ld + d] += gz;
                    dhead[k * 2 * ld + ld + d] += gz * 0.5 * (0.5 * g.log_variance[d]).exp() * e[d];
                }
            }
        }
    }
    recon /= (b * draws) as f64;
    div /= (b * draws) as f64;

    if grad {
        let wb = weights.beta / b as f64;
        for (k, g) in latents.iter().enumerate() {
            for d in 0..ld {
                dhead[k * 2 * ld + d] += wb * g.mean[d];
                dhead[k * 2 * ld + ld + d] += wb * 0.5 * (g.log_variance[d].exp() - 1.0);
            }
        }
        let dout = Tensor::new(head.shape().to_vec(), dhead)
            .map_err(|_| Error::Diverged("non-finite latent gradient".into()))?;
        let Store::Write(st) = &mut store else { unreachable!() };
        model.encoder.backward_params(st, &enc_tape, &dout)?;
    }
    Ok(LossBreakdown::new(recon, div, kl, weights))
}
