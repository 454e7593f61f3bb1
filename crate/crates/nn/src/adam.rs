//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.params().iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn first_moment(&self, param: usize) -> &[f64] {
        &self.m[param]
    }

    pub fn second_moment(&self, param: usize) -> &[f64] {
        &self.v[param]
    }
}

/// One update of every parameter from its accumulated gradient; gradients
/// are zeroed afterwards. Parameters move against the gradient (descent).
pub fn adam_step(state: &mut AdamState, store: &mut ParamStore) {
    state.step += 1;
    let AdamConfig { learning_rate: lr, beta1: b1, beta2: b2, epsilon: eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((value, grad), (m, v)) in store.values_mut().zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for k in 0..value.len() {
            let g = grad[k];
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            value[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            grad[k] = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.add("w", vec![1], vec![0.5]).unwrap();
        store.grad_mut(id)[0] = 1.0;
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        adam_step(&mut adam, &mut store);
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        let want = 0.5 - 1e-3 / (1.0 + 1e-8);
        assert!((store.value(id)[0] - want).abs() < 1e-15);
        assert_eq!(store.grad(id)[0], 0.0);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut store = ParamStore::new();
        let id = store.add("w", vec![2], vec![0.25, -4.0]).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        for _ in 0..5 {
            adam_step(&mut adam, &mut store);
        }
        assert_eq!(store.value(id), &[0.25, -4.0]);
    }

    #[test]
    fn parameters_update_independently() {
        let mut store = ParamStore::new();
        let a = store.add("a", vec![1], vec![0.0]).unwrap();
        let b = store.add("b", vec![1], vec![0.0]).unwrap();
        store.grad_mut(a)[0] = 2.0;
        store.grad_mut(b)[0] = -0.5;
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        adam_step(&mut adam, &mut store);
        assert!((store.value(a)[0] + 1e-3).abs() < 1e-10);
        assert!((store.value(b)[0] - 1e-3).abs() < 1e-10);

        // Only `a` keeps receiving gradient; `b` continues on momentum alone.
        let mut solo = store.clone();
        let mut solo_adam = adam.clone();
        solo.grad_mut(a)[0] = 1.0;
        adam_step(&mut solo_adam, &mut solo);
        store.grad_mut(a)[0] = 1.0;
        adam_step(&mut adam, &mut store);
        assert_eq!(solo.value(b), store.value(b));
    }

    #[test]
    fn step_against_hand_computed_recurrence() {
        let mut store = ParamStore::new();
        let id = store.add("w", vec![1], vec![1.0]).unwrap();
        let cfg = AdamConfig { learning_rate: 0.1, ..AdamConfig::default() };
        let mut adam = AdamState::new(cfg, &store);
        let grads = [0.3, -0.2, 0.7];
        let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 1.0f64);
        for (t, g) in grads.iter().enumerate() {
            store.grad_mut(id)[0] = *g;
            adam_step(&mut adam, &mut store);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let tt = (t + 1) as i32;
            w -= 0.1 * (m / (1.0 - 0.9f64.powi(tt))) / ((v / (1.0 - 0.999f64.powi(tt))).sqrt() + 1e-8);
        }
        assert!((store.value(id)[0] - w).abs() < 1e-14);
    }
}
