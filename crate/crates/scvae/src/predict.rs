//! Prediction uses the decoder alone: `p(x | m)` is sampled by decoding
//! standard-normal latent draws against fixed measurements.

use flowrecon_core::uq::PredictiveSampler;
use flowrecon_core::Grid;

use crate::error::Result;
use crate::model::ScvaeModel;

/// Posterior predictive handle for one (unscaled) measurement vector.
#[derive(Debug, Clone, Copy)]
pub struct Predictor<'a> {
    model: &'a ScvaeModel,
    m_scaled: &'a [f64],
}

/// Owns the scaled measurements a [`Predictor`] borrows.
#[derive(Debug, Clone)]
pub struct Conditioned<'a> {
    model: &'a ScvaeModel,
    m_scaled: Vec<f64>,
}

impl<'a> Conditioned<'a> {
    pub fn predictor(&self) -> Predictor<'_> {
        Predictor { model: self.model, m_scaled: &self.m_scaled }
    }
}

impl ScvaeModel {
    /// Conditions on raw measurements (same units and ordering as the
    /// sampling operator of the training layout).
    pub fn condition(&self, m_raw: &[f64]) -> Result<Conditioned<'_>> {
        self.check_measurements(m_raw)?;
        let mut m = m_raw.to_vec();
        self.scaling().scale_measurements(&mut m);
        Ok(Conditioned { model: self, m_scaled: m })
    }

    /// Raw measurements of a raw state under the training layout.
    pub fn measure(&self, x_raw: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x_raw)?;
        Ok(self.sampling().apply(x_raw)?)
    }
}

impl PredictiveSampler for Predictor<'_> {
    fn grid(&self) -> Grid {
        self.model.grid()
    }

    fn latent_dim(&self) -> usize {
        self.model.latent_dim()
    }

    fn draw(&self, eps: &[f64]) -> flowrecon_core::Result<Vec<f64>> {
        let mut x =
            self.model.decode(eps, self.m_scaled).map_err(|e| flowrecon_core::Error::InvalidArgument(e.to_string()))?;
        self.model.scaling().unscale_state(&mut x);
        Ok(x)
    }
}
