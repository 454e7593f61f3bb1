//! Named parameter tensors with gradient accumulators.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Name and shape of a stored parameter, for serialization headers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    /// Bumped whenever values change; tapes record it to detect staleness.
    version: u64,
}

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Result<ParamId> {
        let name = name.into();
        if shape.iter().product::<usize>() != value.len() {
            return Err(Error::Params(format!("{name}: shape {shape:?} does not match {} values", value.len())));
        }
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Params(format!("duplicate parameter name {name}")));
        }
        let grad = vec![0.0; value.len()];
        self.params.push(Param { name, shape, value, grad });
        self.version += 1;
        Ok(ParamId(self.params.len() - 1))
    }

    /// Glorot-uniform weights: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        let value = (0..n).map(|_| rng.random_range(-a..a)).collect();
        self.add(name, shape, value)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub(crate) fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].grad
    }

    /// Value (read) and gradient (write) of one parameter at once.
    pub(crate) fn value_and_grad(&mut self, id: ParamId) -> (&[f64], &mut [f64]) {
        let p = &mut self.params[id.0];
        (&p.value, &mut p.grad)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    /// Mutable access to values; bumps the version.
    pub fn values_mut(&mut self) -> impl Iterator<Item = (&mut Vec<f64>, &mut Vec<f64>)> {
        self.version += 1;
        self.params.iter_mut().map(|p| (&mut p.value, &mut p.grad))
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.version += 1;
        &mut self.params[id.0].value
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn n_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn infos(&self) -> Vec<ParamInfo> {
        self.params.iter().map(|p| ParamInfo { name: p.name.clone(), shape: p.shape.clone() }).collect()
    }

    /// All values concatenated in insertion order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.grad.iter().copied()).collect()
    }

    /// Overwrites values from a flat vector laid out like [`flat_values`],
    /// after checking names and shapes against `infos`.
    ///
    /// [`flat_values`]: ParamStore::flat_values
    pub fn load_flat(&mut self, infos: &[ParamInfo], flat: &[f64]) -> Result<()> {
        if infos != self.infos().as_slice() {
            return Err(Error::Params("stored parameter names or shapes differ from this model".into()));
        }
        if flat.len() != self.n_values() {
            return Err(Error::Params(format!("{} values for {} parameters", flat.len(), self.n_values())));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Params("non-finite stored parameter".into()));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        self.version += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_roundtrip_and_validation() {
        let mut s = ParamStore::new();
        s.add("a", vec![2], vec![1.0, 2.0]).unwrap();
        s.add("b", vec![1, 3], vec![3.0, 4.0, 5.0]).unwrap();
        assert!(s.add("a", vec![1], vec![0.0]).is_err());
        assert!(s.add("c", vec![2], vec![0.0]).is_err());
        let flat = s.flat_values();
        let infos = s.infos();
        let mut t = s.clone();
        t.load_flat(&infos, &vec![0.0; 5]).unwrap();
        assert_eq!(t.flat_values(), vec![0.0; 5]);
        t.load_flat(&infos, &flat).unwrap();
        assert_eq!(t.flat_values(), flat);
        assert!(t.load_flat(&infos, &flat[..4]).is_err());
        assert!(t.load_flat(&infos[..1], &flat[..2]).is_err());
        assert!(t.load_flat(&infos, &[f64::NAN, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn glorot_bounds_and_seeding() {
        let mut s = ParamStore::new();
        let id = s.add_glorot("w", vec![10, 20], 20, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let a = (6.0f64 / 30.0).sqrt();
        assert!(s.value(id).iter().all(|v| v.abs() < a));
        let mut t = ParamStore::new();
        t.add_glorot("w", vec![10, 20], 20, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(s.value(id), t.value(id));
    }

    #[test]
    fn version_tracks_mutation() {
        let mut s = ParamStore::new();
        let id = s.add("a", vec![1], vec![1.0]).unwrap();
        let v = s.version();
        s.zero_grad();
        assert_eq!(s.version(), v);
        s.value_mut(id)[0] = 2.0;
        assert!(s.version() > v);
    }
}
