//! Sensor layouts and the block selection operator that turns a state into
//! measurements.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Ordered, duplicate-free grid coordinates `(i, j)` with `i` horizontal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorLayout {
    locations: Vec<(usize, usize)>,
}

impl SensorLayout {
    pub fn new(locations: Vec<(usize, usize)>) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::InvalidLayout("at least one sensor is required".into()));
        }
        for (k, loc) in locations.iter().enumerate() {
            if locations[..k].contains(loc) {
                return Err(Error::InvalidLayout(format!("duplicate sensor at {loc:?}")));
            }
        }
        Ok(Self { locations })
    }

    pub fn locations(&self) -> &[(usize, usize)] {
        &self.locations
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// The first `m` sensors; nested layouts are prefixes of one draw.
    pub fn prefix(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.len() {
            return Err(Error::InvalidLayout(format!("prefix of size {m} from a layout of {}", self.len())));
        }
        Self::new(self.locations[..m].to_vec())
    }

    /// Every grid point, in block order.
    pub fn full(grid: &Grid) -> Self {
        let mut locations = Vec::with_capacity(grid.n_points());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                locations.push((i, j));
            }
        }
        Self { locations }
    }

    /// `m` distinct points drawn uniformly without replacement.
    pub fn random(grid: &Grid, m: usize, seed: u64) -> Result<Self> {
        if m == 0 || m > grid.n_points() {
            return Err(Error::InvalidLayout(format!("cannot draw {m} sensors from {} points", grid.n_points())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks = sample(&mut rng, grid.n_points(), m);
        let locations = picks.iter().map(|p| (p % grid.nx, p / grid.nx)).collect();
        Self::new(locations)
    }
}

/// The `2M x 2N` two-block 0/1 selection matrix, stored as point indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingOperator {
    layout: SensorLayout,
    points: Vec<usize>,
    n_state: usize,
}

impl SamplingOperator {
    pub fn new(layout: SensorLayout, grid: &Grid) -> Result<Self> {
        let mut points = Vec::with_capacity(layout.len());
        for &(i, j) in layout.locations() {
            if !grid.contains(i, j) {
                return Err(Error::InvalidLayout(format!("sensor ({i}, {j}) outside {}x{} grid", grid.nx, grid.ny)));
            }
            points.push(grid.index(i, j));
        }
        Ok(Self { layout, points, n_state: grid.state_len() })
    }

    pub fn layout(&self) -> &SensorLayout {
        &self.layout
    }

    /// Number of sensors `M`.
    pub fn n_sensors(&self) -> usize {
        self.points.len()
    }

    pub fn n_measurements(&self) -> usize {
        2 * self.points.len()
    }

    pub fn n_state(&self) -> usize {
        self.n_state
    }

    /// Point index (within one block) of each sensor.
    pub fn points(&self) -> &[usize] {
        &self.points
    }

    /// State index selected by measurement row `k`.
    #[inline]
    pub fn row_index(&self, k: usize) -> usize {
        let m = self.points.len();
        if k < m {
            self.points[k]
        } else {
            self.n_state / 2 + self.points[k - m]
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_state {
            return Err(Error::Shape(format!(
                "state has length {}, sampling operator expects {}",
                x.len(),
                self.n_state
            )));
        }
        Ok((0..self.n_measurements()).map(|k| x[self.row_index(k)]).collect())
    }

    /// `C^T m`: scatters measurements back into an otherwise zero state.
    pub fn apply_transpose(&self, m: &[f64]) -> Result<Vec<f64>> {
        if m.len() != self.n_measurements() {
            return Err(Error::Shape(format!("expected {} measurements, got {}", self.n_measurements(), m.len())));
        }
        let mut x = vec![0.0; self.n_state];
        for (k, &mk) in m.iter().enumerate() {
            x[self.row_index(k)] += mk;
        }
        Ok(x)
    }
}

pub fn apply_sampling(op: &SamplingOperator, x: &[f64]) -> Result<Vec<f64>> {
    op.apply(x)
}
