//! The trained object: both networks, their parameters, and the data
//! conventions (grid, sensor layout, scaling) they were trained under.

use std::path::Path;

use flowrecon_core::io::{read_header_blob, write_header_blob};
use flowrecon_core::{DivergenceOperator, Grid, SamplingOperator, ScalingParams, SensorLayout};
use flowrecon_nn::{Network, ParamInfo, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::arch::ScvaeArchitecture;
use crate::elbo::LatentGaussian;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "frcmodel-1";

/// State vector (u block then v block, `j * nx + i`) to an `(nx, ny, 2)`
/// image.
pub fn state_to_image(grid: &Grid, state: &[f64], out: &mut [f64]) {
    let (nx, ny) = (grid.nx, grid.ny);
    let n = nx * ny;
    for j in 0..ny {
        for i in 0..nx {
            let t = (i * ny + j) * 2;
            out[t] = state[j * nx + i];
            out[t + 1] = state[n + j * nx + i];
        }
    }
}

pub fn image_to_state(grid: &Grid, image: &[f64], out: &mut [f64]) {
    let (nx, ny) = (grid.nx, grid.ny);
    let n = nx * ny;
    for j in 0..ny {
        for i in 0..nx {
            let t = (i * ny + j) * 2;
            out[j * nx + i] = image[t];
            out[n + j * nx + i] = image[t + 1];
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScvaeModel {
    arch: ScvaeArchitecture,
    grid: Grid,
    sampling: SamplingOperator,
    scaling: ScalingParams,
    /// Physical divergence of a scaled state.
    div_scaled: DivergenceOperator,
    seed: u64,
    pub(crate) store: ParamStore,
    pub(crate) encoder: Network,
    pub(crate) decoder: Network,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    fmt: String,
    arch: ScvaeArchitecture,
    grid: Grid,
    sensors: SensorLayout,
    scaling: ScalingParams,
    seed: u64,
    params: Vec<ParamInfo>,
}

impl ScvaeModel {
    /// Freshly initialized model; weights depend only on `seed`.
    pub fn new(
        arch: ScvaeArchitecture,
        grid: Grid,
        layout: SensorLayout,
        scaling: ScalingParams,
        seed: u64,
    ) -> Result<Self> {
        let sampling = SamplingOperator::new(layout, &grid)?;
        let n_meas = sampling.n_measurements();
        arch.validate(&grid, n_meas)?;
        let div_scaled = scaling.divergence_for_scaled(&DivergenceOperator::new(grid)?)?;
        let mut store = ParamStore::new();
        let encoder = Network::new(&arch.encoder, &[arch.input_shape()], &mut store, "encoder", seed)?;
        let decoder = Network::new(
            &arch.decoder,
            &[vec![arch.latent_dim], vec![n_meas]],
            &mut store,
            "decoder",
            seed ^ 0x9e37_79b9_7f4a_7c15,
        )?;
        Ok(Self { arch, grid, sampling, scaling, div_scaled, seed, store, encoder, decoder })
    }

    pub fn architecture(&self) -> &ScvaeArchitecture {
        &self.arch
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn layout(&self) -> &SensorLayout {
        self.sampling.layout()
    }

    pub fn sampling(&self) -> &SamplingOperator {
        &self.sampling
    }

    pub fn n_measurements(&self) -> usize {
        self.sampling.n_measurements()
    }

    pub fn scaling(&self) -> &ScalingParams {
        &self.scaling
    }

    pub fn divergence_scaled(&self) -> &DivergenceOperator {
        &self.div_scaled
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub(crate) fn image_len(&self) -> usize {
        self.grid.state_len()
    }

    pub(crate) fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.grid.state_len() {
            return Err(Error::Config(format!(
                "state has length {}, model expects {}",
                x.len(),
                self.grid.state_len()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_measurements(&self, m: &[f64]) -> Result<()> {
        if m.len() != self.n_measurements() {
            return Err(Error::Config(format!(
                "measurement vector has length {}, model was trained with {}",
                m.len(),
                self.n_measurements()
            )));
        }
        Ok(())
    }

    /// Batched images of scaled states.
    pub(crate) fn images(&self, states: &[&[f64]]) -> Result<Tensor> {
        let n = self.image_len();
        let mut data = vec![0.0; states.len() * n];
        for (k, s) in states.iter().enumerate() {
            self.check_state(s)?;
            state_to_image(&self.grid, s, &mut data[k * n..(k + 1) * n]);
        }
        let mut shape = vec![states.len()];
        shape.extend(self.arch.input_shape());
        Ok(Tensor::new(shape, data)?)
    }

    /// `q(z | x)` for a scaled state. No measurement argument: the encoder
    /// never sees the sensors.
    pub fn encode(&self, x: &[f64]) -> Result<LatentGaussian> {
        Ok(self.encode_batch(&[x])?.remove(0))
    }

    pub fn encode_batch(&self, xs: &[&[f64]]) -> Result<Vec<LatentGaussian>> {
        let out = self.encoder.predict(&self.store, &[&self.images(xs)?])?;
        Ok((0..xs.len()).map(|b| LatentGaussian::from_head(out.sample(b), self.latent_dim())).collect())
    }

    /// Scaled state reconstructed from a latent value and scaled measurements.
    pub fn decode(&self, z: &[f64], m: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim() {
            return Err(Error::Config(format!("latent has length {}, model uses {}", z.len(), self.latent_dim())));
        }
        self.check_measurements(m)?;
        let zt = Tensor::new(vec![1, z.len()], z.to_vec())?;
        let mt = Tensor::new(vec![1, m.len()], m.to_vec())?;
        let img = self.decoder.predict(&self.store, &[&zt, &mt])?;
        let mut state = vec![0.0; self.image_len()];
        image_to_state(&self.grid, img.data(), &mut state);
        Ok(state)
    }

    /// `d<decode(z, m), w>/dz` for a weight state `w`.
    pub fn decode_gradient(&self, z: &[f64], m: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.check_state(w)?;
        self.check_measurements(m)?;
        let zt = Tensor::new(vec![1, z.len()], z.to_vec())?;
        let mt = Tensor::new(vec![1, m.len()], m.to_vec())?;
        let mut store = self.store.clone();
        let (img, tape) = self.decoder.forward(&store, &[&zt, &mt])?;
        let mut wimg = vec![0.0; w.len()];
        state_to_image(&self.grid, w, &mut wimg);
        let dout = Tensor::new(img.shape().to_vec(), wimg)?;
        Ok(self.decoder.backward(&mut store, &tape, &dout)?.swap_remove(0).into_data())
    }

    /// Accumulates `d<encoder head(x), w>/dtheta` into the parameter
    /// gradients, `w` holding the mean weights then the log-variance ones.
    pub fn encoder_vjp(&mut self, x: &[f64], w: &[f64]) -> Result<()> {
        if w.len() != 2 * self.latent_dim() {
            return Err(Error::Config(format!("head weight has length {}", w.len())));
        }
        let img = self.images(&[x])?;
        let (_, tape) = self.encoder.forward(&self.store, &[&img])?;
        let dout = Tensor::new(vec![1, w.len()], w.to_vec())?;
        self.encoder.backward_params(&mut self.store, &tape, &dout)?;
        Ok(())
    }

    /// Scaled measurements of a scaled state.
    pub fn measure_scaled(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.sampling.apply(x)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = ModelHeader {
            fmt: MODEL_FORMAT.into(),
            arch: self.arch.clone(),
            grid: self.grid,
            sensors: self.layout().clone(),
            scaling: self.scaling,
            seed: self.seed,
            params: self.store.infos(),
        };
        write_header_blob(path, &header, &self.store.flat_values())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, flat): (ModelHeader, Vec<f64>) = read_header_blob(path)?;
        if h.fmt != MODEL_FORMAT {
            return Err(Error::Config(format!("{}: format {:?}, expected {MODEL_FORMAT}", path.display(), h.fmt)));
        }
        let mut model = Self::new(h.arch, h.grid, h.sensors, h.scaling, h.seed)?;
        model.store.load_flat(&h.params, &flat)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ScvaeModel {
        let grid = Grid::new(8, 8, 0.5, 0.5).unwrap();
        let layout = SensorLayout::new(vec![(1, 2), (6, 5)]).unwrap();
        ScvaeModel::new(ScvaeArchitecture::tiny(2), grid, layout, ScalingParams::IDENTITY, 3).unwrap()
    }

    #[test]
    fn image_permutation_roundtrip() {
        let g = Grid::new(5, 3, 1.0, 1.0).unwrap();
        let state: Vec<f64> = (0..30).map(|v| v as f64).collect();
        let mut img = vec![0.0; 30];
        state_to_image(&g, &state, &mut img);
        // Pixel (i=1, j=2): u = state[2*5+1], v = state[15 + 11].
        assert_eq!(img[(1 * 3 + 2) * 2], 11.0);
        assert_eq!(img[(1 * 3 + 2) * 2 + 1], 26.0);
        let mut back = vec![0.0; 30];
        image_to_state(&g, &img, &mut back);
        assert_eq!(back, state);
    }

    #[test]
    fn encode_and_decode_are_deterministic() {
        let m = tiny();
        let x: Vec<f64> = (0..128).map(|v| (v as f64 * 0.37).sin()).collect();
        let a = m.encode(&x).unwrap();
        assert_eq!(a, m.encode(&x).unwrap());
        assert_eq!(a.mean.len(), 2);
        assert_eq!(a.log_variance.len(), 2);
        let meas = m.measure_scaled(&x).unwrap();
        let d = m.decode(&[0.3, -0.1], &meas).unwrap();
        assert_eq!(d.len(), 128);
        assert_eq!(d, m.decode(&[0.3, -0.1], &meas).unwrap());
        assert!(m.decode(&[0.3, -0.1], &meas[..3]).is_err());
        assert!(m.decode(&[0.3], &meas).is_err());
        assert!(m.encode(&x[..10]).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let m = tiny();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.frcmodel");
        m.save(&p).unwrap();
        let back = ScvaeModel::load(&p).unwrap();
        assert_eq!(back.params().flat_values(), m.params().flat_values());
        assert_eq!(back.layout(), m.layout());
        let x: Vec<f64> = (0..128).map(|v| (v as f64 * 0.11).cos()).collect();
        assert_eq!(back.encode(&x).unwrap(), m.encode(&x).unwrap());
    }
}
