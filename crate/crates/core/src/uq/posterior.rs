//! Monte-Carlo summaries of a posterior predictive distribution.
//!
//! The predictive is assumed to be approximately Gaussian. Its covariance is
//! never formed: the thin SVD of the centered, `1/sqrt(N_MC - 1)`-scaled
//! sample matrix `Y` gives `Sigma = Y Y^T = U S U^T` with `S` the squared
//! singular values of `Y`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::chi2::chi2_quantile;
use crate::error::{Error, Result};
use crate::grid::{FlowSnapshot, Grid};
use crate::linalg::left_singular;
use crate::sensors::SamplingOperator;

/// Anything that turns a latent draw into an (unscaled) state.
pub trait PredictiveSampler {
    fn grid(&self) -> Grid;
    fn latent_dim(&self) -> usize;
    fn draw(&self, eps: &[f64]) -> Result<Vec<f64>>;
}

/// Latent draw `index` under `seed`: each draw has its own ChaCha stream so
/// draws can be generated in any order or in parallel.
pub fn latent_draw(seed: u64, index: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub fn draw_samples<S: PredictiveSampler + ?Sized>(dist: &S, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    (0..count as u64).map(|i| dist.draw(&latent_draw(seed, i, dist.latent_dim()))).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    /// `2N x q` left singular vectors of the covariance; eigenpairs that are
    /// zero to roundoff may be omitted.
    #[serde(skip)]
    pub u: DMatrix<f64>,
    /// Covariance eigenvalues, nonincreasing and nonnegative.
    pub s: Vec<f64>,
    pub n_samples: usize,
    /// Degrees of freedom used for the chi-squared radius, `min(N_MC, 2N)`.
    pub dof: usize,
}

/// Relative cut below which a covariance eigenvalue is treated as zero by
/// the pseudo-inverse.
const PINV_TOL: f64 = 1e-12;

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("probability must lie in (0, 1), got {p}")))
    }
}

impl PosteriorSummary {
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        let n_mc = samples.len();
        if n_mc < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 samples, got {n_mc}")));
        }
        let dim = samples[0].len();
        if dim == 0 || samples.iter().any(|s| s.len() != dim) {
            return Err(Error::Shape("samples must share one nonzero length".into()));
        }
        // Shifted by the first draw: exact when all draws coincide.
        let origin = &samples[0];
        let mut shift = vec![0.0; dim];
        for s in samples {
            for ((m, v), o) in shift.iter_mut().zip(s).zip(origin) {
                *m += v - o;
            }
        }
        let mean: Vec<f64> = origin.iter().zip(&shift).map(|(o, m)| o + m / n_mc as f64).collect();
        let scale = 1.0 / ((n_mc - 1) as f64).sqrt();
        let y = DMatrix::from_fn(dim, n_mc, |i, j| (samples[j][i] - mean[i]) * scale);
        let (s, u) = left_singular(&y, dim.min(n_mc), PINV_TOL);
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite posterior mean".into()));
        }
        Ok(Self { mean, u, s, n_samples: n_mc, dof: n_mc.min(dim) })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Marginal standard deviation of coordinate `n`, `||u_n^T S^{1/2}||`.
    pub fn std(&self, n: usize) -> f64 {
        self.s.iter().enumerate().map(|(i, s)| self.u[(n, i)].powi(2) * s).sum::<f64>().sqrt()
    }

    /// Chi-squared radius squared for probability `p` at `dof` degrees.
    pub fn radius2(&self, p: f64) -> Result<f64> {
        check_p(p)?;
        chi2_quantile(self.dof, p)
    }

    /// `(low, high)` around the mean with half-width
    /// `sqrt(chi2_k(p)) * ||u_n^T S^{1/2}||`.
    pub fn interval(&self, n: usize, p: f64) -> Result<(f64, f64)> {
        if n >= self.dim() {
            return Err(Error::InvalidArgument(format!("coordinate {n} out of range {}", self.dim())));
        }
        let half = self.radius2(p)?.sqrt() * self.std(n);
        Ok((self.mean[n] - half, self.mean[n] + half))
    }

    /// All intervals at once; avoids repeating the quantile inversion.
    pub fn intervals(&self, p: f64) -> Result<Vec<(f64, f64)>> {
        let r = self.radius2(p)?.sqrt();
        Ok((0..self.dim())
            .map(|n| {
                let half = r * self.std(n);
                (self.mean[n] - half, self.mean[n] + half)
            })
            .collect())
    }

    /// `(x - mean)^T Sigma^+ (x - mean)`; components outside the span of
    /// the retained singular vectors are ignored by the pseudo-inverse.
    pub fn mahalanobis2(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!("state length {}, summary has {}", x.len(), self.dim())));
        }
        let d = DVector::from_iterator(x.len(), x.iter().zip(&self.mean).map(|(a, b)| a - b));
        let top = self.s.first().copied().unwrap_or(0.0);
        let mut acc = 0.0;
        for (i, &s) in self.s.iter().enumerate() {
            if s > PINV_TOL * top && s > 0.0 {
                acc += self.u.column(i).dot(&d).powi(2) / s;
            }
        }
        Ok(acc)
    }

    /// Membership in the region `d^2 <= chi2_k(p)`. The boundary counts as
    /// inside, with a relative slack of a few ulps for roundoff.
    pub fn region_membership(&self, x: &[f64], p: f64) -> Result<bool> {
        let q = self.radius2(p)?;
        Ok(self.mahalanobis2(x)? <= q * (1.0 + 1e-12))
    }
}

pub fn summarize<S: PredictiveSampler + ?Sized>(dist: &S, n_mc: usize, seed: u64) -> Result<PosteriorSummary> {
    if n_mc < 2 {
        return Err(Error::InvalidArgument(format!("N_MC must be at least 2, got {n_mc}")));
    }
    PosteriorSummary::from_samples(&draw_samples(dist, n_mc, seed)?)
}

/// Plain MC mean, without the covariance.
pub fn predictive_mean<S: PredictiveSampler + ?Sized>(dist: &S, n_mc: usize, seed: u64) -> Result<Vec<f64>> {
    if n_mc == 0 {
        return Err(Error::InvalidArgument("N_MC must be positive".into()));
    }
    let mut mean = vec![0.0; dist.grid().state_len()];
    for i in 0..n_mc as u64 {
        let x = dist.draw(&latent_draw(seed, i, dist.latent_dim()))?;
        for (m, v) in mean.iter_mut().zip(&x) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n_mc as f64;
    }
    Ok(mean)
}

pub fn sample_fields<S: PredictiveSampler + ?Sized>(dist: &S, count: usize, seed: u64) -> Result<Vec<FlowSnapshot>> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    let grid = dist.grid();
    draw_samples(dist, count, seed)?.iter().enumerate().map(|(k, x)| FlowSnapshot::from_state(grid, x, k)).collect()
}

/// Mean of `||C x_s - m|| / ||m||` over samples: how well draws honor the
/// measurements they were conditioned on.
pub fn measurement_misfit(samples: &[FlowSnapshot], op: &SamplingOperator, m: &[f64]) -> Result<f64> {
    let mn = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    if mn == 0.0 || samples.is_empty() {
        return Err(Error::InvalidArgument("need samples and a nonzero measurement vector".into()));
    }
    let mut acc = 0.0;
    for s in samples {
        let cx = op.apply(&s.to_state())?;
        acc += cx.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / mn;
    }
    Ok(acc / samples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    U,
    V,
}

/// Tiles one channel of the samples into a `rows x cols` montage, row `i`
/// of tile `(a, b)` holding grid row `j = i` of sample `a * cols + b`.
pub fn montage(samples: &[FlowSnapshot], rows: usize, cols: usize, channel: Channel) -> Result<Vec<Vec<f64>>> {
    if samples.len() != rows * cols || samples.is_empty() {
        return Err(Error::InvalidArgument(format!("{} samples for a {rows}x{cols} montage", samples.len())));
    }
    let g = samples[0].grid;
    let mut out = vec![vec![0.0; cols * g.nx]; rows * g.ny];
    for (k, s) in samples.iter().enumerate() {
        let (a, b) = (k / cols, k % cols);
        let data = match channel {
            Channel::U => &s.u,
            Channel::V => &s.v,
        };
        for j in 0..g.ny {
            for i in 0..g.nx {
                out[a * g.ny + j][b * g.nx + i] = data[g.index(i, j)];
            }
        }
    }
    Ok(out)
}
