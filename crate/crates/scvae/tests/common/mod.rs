#![allow(dead_code)]

use flowrecon_core::{Grid, ScalingParams, SensorLayout};
use flowrecon_scvae::{ScvaeArchitecture, ScvaeModel};

pub fn tiny_grid() -> Grid {
    Grid::new(8, 8, 0.25, 0.5).unwrap()
}

pub fn tiny_model(seed: u64) -> ScvaeModel {
    let layout = SensorLayout::new(vec![(1, 1), (5, 6)]).unwrap();
    let scaling = ScalingParams::from_extremes(-2.0, 2.0, -1.0, 3.0).unwrap();
    ScvaeModel::new(ScvaeArchitecture::tiny(2), tiny_grid(), layout, scaling, seed).unwrap()
}

pub fn wavy_state(phase: f64) -> Vec<f64> {
    (0..128).map(|k| (k as f64 * 0.21 + phase).sin() * 0.8 + 0.1 * (k as f64 * 0.05).cos()).collect()
}

pub fn rel(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    diff / b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-14)
}
