//! Per-channel min-max scaling to `[-1, 1]` from training extremes.

use serde::{Deserialize, Serialize};

use crate::divergence::DivergenceOperator;
use crate::error::{Error, Result};
use crate::grid::{FlowSeries, FlowSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub u_center: f64,
    pub v_center: f64,
    pub u_halfwidth: f64,
    pub v_halfwidth: f64,
}

fn center_halfwidth(min: f64, max: f64) -> (f64, f64) {
    let center = 0.5 * (max + min);
    let half = 0.5 * (max - min);
    // A constant channel keeps its value as the center and is left unscaled.
    if half > 0.0 {
        (center, half)
    } else {
        (center, 1.0)
    }
}

impl ScalingParams {
    pub const IDENTITY: ScalingParams =
        ScalingParams { u_center: 0.0, v_center: 0.0, u_halfwidth: 1.0, v_halfwidth: 1.0 };

    pub fn from_extremes(u_min: f64, u_max: f64, v_min: f64, v_max: f64) -> Result<Self> {
        if !(u_min <= u_max && v_min <= v_max) {
            return Err(Error::InvalidArgument("min must not exceed max".into()));
        }
        let (u_center, u_halfwidth) = center_halfwidth(u_min, u_max);
        let (v_center, v_halfwidth) = center_halfwidth(v_min, v_max);
        Ok(Self { u_center, v_center, u_halfwidth, v_halfwidth })
    }

    #[inline]
    fn channel(&self, upper: bool) -> (f64, f64) {
        if upper {
            (self.v_center, self.v_halfwidth)
        } else {
            (self.u_center, self.u_halfwidth)
        }
    }

    /// Scales a state vector in place (`u` block then `v` block).
    pub fn scale_state(&self, x: &mut [f64]) {
        let n = x.len() / 2;
        for (k, val) in x.iter_mut().enumerate() {
            let (c, d) = self.channel(k >= n);
            *val = (*val - c) / d;
        }
    }

    pub fn unscale_state(&self, x: &mut [f64]) {
        let n = x.len() / 2;
        for (k, val) in x.iter_mut().enumerate() {
            let (c, d) = self.channel(k >= n);
            *val = d * *val + c;
        }
    }

    /// Scales a measurement vector: the first `M` entries are `u` readings,
    /// the remaining `M` are `v` readings.
    pub fn scale_measurements(&self, m: &mut [f64]) {
        self.scale_state(m)
    }

    pub fn unscale_measurements(&self, m: &mut [f64]) {
        self.unscale_state(m)
    }

    pub fn scale(&self, s: &FlowSnapshot) -> FlowSnapshot {
        let u = s.u.iter().map(|u| (u - self.u_center) / self.u_halfwidth).collect();
        let v = s.v.iter().map(|v| (v - self.v_center) / self.v_halfwidth).collect();
        FlowSnapshot { grid: s.grid, u, v, time_index: s.time_index }
    }

    pub fn unscale(&self, s: &FlowSnapshot) -> FlowSnapshot {
        let u = s.u.iter().map(|u| self.u_halfwidth * u + self.u_center).collect();
        let v = s.v.iter().map(|v| self.v_halfwidth * v + self.v_center).collect();
        FlowSnapshot { grid: s.grid, u, v, time_index: s.time_index }
    }

    pub fn scale_series(&self, series: &FlowSeries) -> Result<FlowSeries> {
        FlowSeries::new(series.grid(), series.iter().map(|s| self.scale(s)).collect())
    }

    pub fn unscale_series(&self, series: &FlowSeries) -> Result<FlowSeries> {
        FlowSeries::new(series.grid(), series.iter().map(|s| self.unscale(s)).collect())
    }

    /// Divergence operator acting on scaled states that reports the
    /// divergence of the unscaled field.
    pub fn divergence_for_scaled(&self, div: &DivergenceOperator) -> Result<DivergenceOperator> {
        let (su, sv) = div.channel_scale();
        DivergenceOperator::for_scaled(div.grid(), su * self.u_halfwidth, sv * self.v_halfwidth)
    }
}

/// Centers and half-widths from the per-channel extremes over all training
/// snapshots and points.
pub fn compute_scaling(train: &FlowSeries) -> Result<ScalingParams> {
    let mut u_min = f64::INFINITY;
    let mut u_max = f64::NEG_INFINITY;
    let mut v_min = f64::INFINITY;
    let mut v_max = f64::NEG_INFINITY;
    for s in train.iter() {
        for &u in &s.u {
            u_min = u_min.min(u);
            u_max = u_max.max(u);
        }
        for &v in &s.v {
            v_min = v_min.min(v);
            v_max = v_max.max(v);
        }
    }
    ScalingParams::from_extremes(u_min, u_max, v_min, v_max)
}
