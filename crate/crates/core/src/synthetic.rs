//! Analytic divergence-free velocity fields.
//!
//! Every recipe is defined through a stream function `psi(x, y, t)` with
//! `u = dpsi/dy` and `v = -dpsi/dx`, evaluated in closed form, so the
//! continuous divergence vanishes identically and the discrete divergence is
//! pure truncation error.

use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FlowSeries, FlowSnapshot, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    /// `psi = -(A/ky) cos(kx x) cos(ky y) cos(w t)`, wavenumbers in radians
    /// per unit length. `w` is the phase speed.
    TaylorGreen,
    /// Two staggered rows of counter-rotating Stuart vortices advected in
    /// `x` at the phase speed; `kx` vortex pairs fit across the domain and
    /// `ky` sets the core sharpness relative to the domain height.
    TravelingVortices,
    /// Random stream function built from Fourier modes up to `(kx, ky)`
    /// domain harmonics, each oscillating at an integer multiple of the
    /// phase speed.
    RandomFourierSolenoidal,
}

impl FromStr for FlowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "taylor_green" => Ok(Self::TaylorGreen),
            "traveling_vortices" => Ok(Self::TravelingVortices),
            "random_fourier_solenoidal" => Ok(Self::RandomFourierSolenoidal),
            other => Err(Error::InvalidArgument(format!("unknown flow recipe '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowRecipe {
    pub kind: FlowKind,
    pub amplitude: f64,
    pub wavenumbers: (u32, u32),
    pub phase_speed: f64,
    pub seed: u64,
}

/// Stuart-vortex concentration; closer to 1 gives tighter cores.
const STUART_RHO: f64 = 0.75;

impl FlowRecipe {
    pub fn taylor_green(amplitude: f64, kx: u32, ky: u32) -> Self {
        Self { kind: FlowKind::TaylorGreen, amplitude, wavenumbers: (kx, ky), phase_speed: 0.0, seed: 0 }
    }

    pub fn traveling_vortices(amplitude: f64, kx: u32, ky: u32, phase_speed: f64) -> Self {
        Self { kind: FlowKind::TravelingVortices, amplitude, wavenumbers: (kx, ky), phase_speed, seed: 0 }
    }

    pub fn random_fourier(amplitude: f64, kx: u32, ky: u32, phase_speed: f64, seed: u64) -> Self {
        Self { kind: FlowKind::RandomFourierSolenoidal, amplitude, wavenumbers: (kx, ky), phase_speed, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude > 0.0) {
            return Err(Error::InvalidArgument(format!("amplitude must be positive, got {}", self.amplitude)));
        }
        if self.wavenumbers.0 < 1 || self.wavenumbers.1 < 1 {
            return Err(Error::InvalidArgument(format!("wavenumbers must be >= 1, got {:?}", self.wavenumbers)));
        }
        if !self.phase_speed.is_finite() {
            return Err(Error::InvalidArgument("phase speed must be finite".into()));
        }
        Ok(())
    }

    /// Time period of the generated series on `grid`, if it is periodic and
    /// not steady.
    pub fn period(&self, grid: &Grid) -> Option<f64> {
        if self.phase_speed == 0.0 {
            return None;
        }
        let c = self.phase_speed.abs();
        Some(match self.kind {
            FlowKind::TaylorGreen | FlowKind::RandomFourierSolenoidal => TAU / c,
            FlowKind::TravelingVortices => grid.lx() / (self.wavenumbers.0 as f64 * c),
        })
    }
}

type Field = Box<dyn Fn(f64, f64, f64) -> (f64, f64)>;

fn taylor_green(r: &FlowRecipe) -> Field {
    let (a, w) = (r.amplitude, r.phase_speed);
    let kx = r.wavenumbers.0 as f64;
    let ky = r.wavenumbers.1 as f64;
    Box::new(move |x, y, t| {
        let s = a * (w * t).cos();
        let u = s * (kx * x).cos() * (ky * y).sin();
        let v = -s * (kx / ky) * (kx * x).sin() * (ky * y).cos();
        (u, v)
    })
}

fn traveling_vortices(r: &FlowRecipe, grid: &Grid) -> Field {
    let (a, c) = (r.amplitude, r.phase_speed);
    let kappa = TAU * r.wavenumbers.0 as f64 / grid.lx();
    let gamma = TAU * r.wavenumbers.1 as f64 / grid.ly();
    let ly = grid.ly();
    let (y1, y2) = (ly * (0.5 - 1.0 / 6.0), ly * (0.5 + 1.0 / 6.0));
    let rho = STUART_RHO;
    Box::new(move |x, y, t| {
        // psi = (a/kappa) [ln(cosh(g e1) - rho cos(k s1)) - ln(cosh(g e2) - rho cos(k s2))]
        let s1 = kappa * (x - c * t);
        let s2 = s1 - PI;
        let (e1, e2) = (gamma * (y - y1), gamma * (y - y2));
        let d1 = e1.cosh() - rho * s1.cos();
        let d2 = e2.cosh() - rho * s2.cos();
        let u = (a / kappa) * gamma * (e1.sinh() / d1 - e2.sinh() / d2);
        let v = -a * rho * (s1.sin() / d1 - s2.sin() / d2);
        (u, v)
    })
}

struct Mode {
    amp: f64,
    kx: f64,
    ky: f64,
    phase: f64,
    omega: f64,
}

fn random_fourier(r: &FlowRecipe, grid: &Grid) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(r.seed);
    let (px, qy) = (r.wavenumbers.0 as i64, r.wavenumbers.1 as i64);
    let mut modes = Vec::new();
    for p in 0..=px {
        for q in -qy..=qy {
            if p == 0 && q <= 0 {
                continue;
            }
            let g: f64 = rng.sample(StandardNormal);
            let phase = rng.random_range(0.0..TAU);
            let mult = rng.random_range(1..=3) as f64;
            modes.push(Mode {
                amp: r.amplitude * g / (1.0 + (p * p + q * q) as f64),
                kx: TAU * p as f64 / grid.lx(),
                ky: TAU * q as f64 / grid.ly(),
                phase,
                omega: mult * r.phase_speed,
            });
        }
    }
    Box::new(move |x, y, t| {
        // psi = sum amp cos(kx x + ky y + phase - omega t)
        let (mut u, mut v) = (0.0, 0.0);
        for m in &modes {
            let s = m.amp * (m.kx * x + m.ky * y + m.phase - m.omega * t).sin();
            u -= s * m.ky;
            v += s * m.kx;
        }
        (u, v)
    })
}

fn field(recipe: &FlowRecipe, grid: &Grid) -> Field {
    match recipe.kind {
        FlowKind::TaylorGreen => taylor_green(recipe),
        FlowKind::TravelingVortices => traveling_vortices(recipe, grid),
        FlowKind::RandomFourierSolenoidal => random_fourier(recipe, grid),
    }
}

pub fn snapshot_at(recipe: &FlowRecipe, grid: Grid, t: f64, time_index: usize) -> Result<FlowSnapshot> {
    recipe.validate()?;
    let f = field(recipe, &grid);
    snapshot_with(&f, grid, t, time_index)
}

fn snapshot_with(f: &Field, grid: Grid, t: f64, time_index: usize) -> Result<FlowSnapshot> {
    let n = grid.n_points();
    let (mut u, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (a, b) = f(grid.x(i), grid.y(j), t);
            u.push(a);
            v.push(b);
        }
    }
    FlowSnapshot::new(grid, u, v, time_index)
}

/// One snapshot per entry of `times`, with time indices `0..times.len()`.
pub fn generate(recipe: &FlowRecipe, grid: Grid, times: &[f64]) -> Result<FlowSeries> {
    recipe.validate()?;
    if times.is_empty() {
        return Err(Error::InvalidArgument("at least one time is required".into()));
    }
    let f = field(recipe, &grid);
    let snaps = times.iter().enumerate().map(|(k, &t)| snapshot_with(&f, grid, t, k)).collect::<Result<Vec<_>>>()?;
    FlowSeries::new(grid, snaps)
}

/// `count` times `0, dt, 2 dt, ...`.
pub fn uniform_times(count: usize, dt: f64) -> Vec<f64> {
    (0..count).map(|k| k as f64 * dt).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::DivergenceOperator;

    fn max_div(s: &FlowSeries) -> f64 {
        let div = DivergenceOperator::new(s.grid()).unwrap();
        s.iter().flat_map(|snap| div.apply(&snap.to_state()).unwrap()).fold(0.0f64, |m, d| m.max(d.abs()))
    }

    #[test]
    fn taylor_green_matches_closed_form_at_t0() {
        let g = Grid::spanning(16, 16, TAU, TAU).unwrap();
        let s = generate(&FlowRecipe::taylor_green(1.0, 1, 1), g, &[0.0]).unwrap();
        let snap = &s.snapshots()[0];
        for j in 0..g.ny {
            for i in 0..g.nx {
                let (x, y) = (g.x(i), g.y(j));
                let k = g.index(i, j);
                assert!((snap.u[k] - x.cos() * y.sin()).abs() < 1e-15);
                assert!((snap.v[k] + x.sin() * y.cos()).abs() < 1e-15);
            }
        }
    }

    fn recipes() -> Vec<FlowRecipe> {
        vec![
            FlowRecipe::taylor_green(1.0, 1, 2),
            FlowRecipe::traveling_vortices(1.0, 2, 1, 0.5),
            FlowRecipe::random_fourier(1.0, 2, 2, 0.7, 9),
        ]
    }

    #[test]
    fn discrete_divergence_is_second_order_for_every_recipe() {
        for r in recipes() {
            let times = [0.0, 0.37, 1.1];
            let coarse = generate(&r, Grid::spanning(64, 64, 4.0, 3.0).unwrap(), &times).unwrap();
            let fine = generate(&r, Grid::spanning(128, 128, 4.0, 3.0).unwrap(), &times).unwrap();
            let ratio = max_div(&coarse) / max_div(&fine);
            assert!(ratio >= 3.5, "{:?}: refinement ratio {ratio}", r.kind);
        }
    }

    #[test]
    fn stream_function_fields_match_numerical_derivatives() {
        let g = Grid::spanning(8, 8, 4.0, 3.0).unwrap();
        for r in recipes() {
            let f = field(&r, &g);
            let h = 1e-5;
            for &(x, y, t) in &[(0.3, 0.9, 0.0), (2.1, 1.7, 0.8), (3.7, 0.2, 2.5)] {
                // Divergence of the analytic field by central differences.
                let dudx = (f(x + h, y, t).0 - f(x - h, y, t).0) / (2.0 * h);
                let dvdy = (f(x, y + h, t).1 - f(x, y - h, t).1) / (2.0 * h);
                assert!((dudx + dvdy).abs() < 1e-6, "{:?}", r.kind);
            }
        }
    }

    #[test]
    fn periodic_recipes_repeat_after_one_period() {
        let g = Grid::spanning(24, 12, 4.0, 2.0).unwrap();
        for r in recipes().into_iter().skip(1) {
            let p = r.period(&g).unwrap();
            let s = generate(&r, g, &[0.4, 0.4 + p]).unwrap();
            let (a, b) = (s.snapshots()[0].to_state(), s.snapshots()[1].to_state());
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-10, "{:?}", r.kind);
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_seed_dependent() {
        let g = Grid::spanning(10, 6, 2.0, 1.0).unwrap();
        let times = uniform_times(4, 0.3);
        let r = FlowRecipe::random_fourier(1.0, 3, 2, 1.0, 42);
        assert_eq!(generate(&r, g, &times).unwrap(), generate(&r, g, &times).unwrap());
        let other = FlowRecipe { seed: 43, ..r };
        assert_ne!(generate(&r, g, &times).unwrap(), generate(&other, g, &times).unwrap());
    }

    #[test]
    fn invalid_recipes_are_rejected() {
        let g = Grid::spanning(4, 4, 1.0, 1.0).unwrap();
        assert!(generate(&FlowRecipe::taylor_green(0.0, 1, 1), g, &[0.0]).is_err());
        assert!(generate(&FlowRecipe::taylor_green(1.0, 0, 1), g, &[0.0]).is_err());
        assert!(generate(&FlowRecipe::taylor_green(1.0, 1, 1), g, &[]).is_err());
        assert!("vortex_sheet".parse::<FlowKind>().is_err());
        assert_eq!("traveling_vortices".parse::<FlowKind>().unwrap(), FlowKind::TravelingVortices);
    }
}
