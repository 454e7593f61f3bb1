//! Rectangular grids, velocity snapshots and the state-vector convention.
//!
//! A state vector has length `2N`: the `u` block followed by the `v` block,
//! each block row-major over grid rows, so point `(i, j)` (with `i` the
//! horizontal index) sits at offset `j * nx + i` within its block.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

impl Grid {
    /// Builds a grid with `nx * ny` points and spacings `dx`, `dy`.
    ///
    /// Any positive point count is accepted here; operators that need a
    /// stencil width (the divergence operator) enforce their own minimum.
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidGrid(format!("{nx}x{ny} has no points")));
        }
        if !(dx.is_finite() && dx > 0.0 && dy.is_finite() && dy > 0.0) {
            return Err(Error::InvalidGrid(format!("spacings must be positive and finite, got dx={dx}, dy={dy}")));
        }
        Ok(Self { nx, ny, dx, dy })
    }

    /// Grid covering `[0, lx) x [0, ly)` with `nx * ny` cell-origin points.
    pub fn spanning(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        Self::new(nx, ny, lx / nx as f64, ly / ny as f64)
    }

    pub fn n_points(&self) -> usize {
        self.nx * self.ny
    }

    pub fn state_len(&self) -> usize {
        2 * self.n_points()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i < self.nx && j < self.ny
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.dy
    }

    pub fn lx(&self) -> f64 {
        self.nx as f64 * self.dx
    }

    pub fn ly(&self) -> f64 {
        self.ny as f64 * self.dy
    }

    /// Evaluates `f(x, y)` at every point in block order.
    pub fn sample(&self, mut f: impl FnMut(f64, f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_points());
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.push(f(self.x(i), self.y(j)));
            }
        }
        out
    }
}

/// One time slice of `(u, v)` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSnapshot {
    pub grid: Grid,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub time_index: usize,
}

impl FlowSnapshot {
    pub fn new(grid: Grid, u: Vec<f64>, v: Vec<f64>, time_index: usize) -> Result<Self> {
        let n = grid.n_points();
        if u.len() != n || v.len() != n {
            return Err(Error::Shape(format!(
                "snapshot channels have lengths ({}, {}), grid needs {n}",
                u.len(),
                v.len()
            )));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("snapshot contains non-finite values".into()));
        }
        Ok(Self { grid, u, v, time_index })
    }

    pub fn zeros(grid: Grid, time_index: usize) -> Self {
        let n = grid.n_points();
        Self { grid, u: vec![0.0; n], v: vec![0.0; n], time_index }
    }

    /// Inverse of [`flatten_state`].
    pub fn from_state(grid: Grid, state: &[f64], time_index: usize) -> Result<Self> {
        let n = grid.n_points();
        if state.len() != 2 * n {
            return Err(Error::Shape(format!("state has length {}, grid needs {}", state.len(), 2 * n)));
        }
        Self::new(grid, state[..n].to_vec(), state[n..].to_vec(), time_index)
    }

    pub fn to_state(&self) -> Vec<f64> {
        flatten_state(self)
    }
}

/// Concatenates the `u` and `v` blocks into the length-`2N` state vector.
pub fn flatten_state(s: &FlowSnapshot) -> Vec<f64> {
    let mut x = Vec::with_capacity(s.u.len() + s.v.len());
    x.extend_from_slice(&s.u);
    x.extend_from_slice(&s.v);
    x
}

pub fn unflatten_state(grid: Grid, x: &[f64], time_index: usize) -> Result<FlowSnapshot> {
    FlowSnapshot::from_state(grid, x, time_index)
}

/// An ordered collection of snapshots on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSeries {
    grid: Grid,
    snapshots: Vec<FlowSnapshot>,
}

impl FlowSeries {
    pub fn new(grid: Grid, snapshots: Vec<FlowSnapshot>) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(Error::EmptySubset("a flow series needs at least one snapshot".into()));
        }
        for (k, s) in snapshots.iter().enumerate() {
            if s.grid != grid {
                return Err(Error::Shape(format!("snapshot {k} lives on a different grid")));
            }
            if k > 0 && s.time_index <= snapshots[k - 1].time_index {
                return Err(Error::InvalidArgument(format!(
                    "time indices must increase strictly (position {k}: {} after {})",
                    s.time_index,
                    snapshots[k - 1].time_index
                )));
            }
        }
        Ok(Self { grid, snapshots })
    }

    /// Builds a series from flattened states with time indices `0..K`.
    pub fn from_states(grid: Grid, states: &[Vec<f64>]) -> Result<Self> {
        let snaps =
            states.iter().enumerate().map(|(k, x)| FlowSnapshot::from_state(grid, x, k)).collect::<Result<Vec<_>>>()?;
        Self::new(grid, snaps)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn snapshots(&self) -> &[FlowSnapshot] {
        &self.snapshots
    }

    pub fn iter(&self) -> std::slice::Iter<'_, FlowSnapshot> {
        self.snapshots.iter()
    }

    pub fn states(&self) -> Vec<Vec<f64>> {
        self.snapshots.iter().map(flatten_state).collect()
    }

    pub fn into_snapshots(self) -> Vec<FlowSnapshot> {
        self.snapshots
    }

    /// Snapshots at the given positions, re-sorted into time order.
    pub fn select(&self, positions: &[usize]) -> Result<Self> {
        let mut pos = positions.to_vec();
        pos.sort_unstable();
        let snaps = pos
            .iter()
            .map(|&p| {
                self.snapshots
                    .get(p)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("position {p} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.grid, snaps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flatten_concatenates_blocks() {
        let g = Grid::new(2, 2, 1.0, 1.0).unwrap();
        let s = FlowSnapshot::new(g, vec![1., 2., 3., 4.], vec![5., 6., 7., 8.], 0).unwrap();
        assert_eq!(flatten_state(&s), vec![1., 2., 3., 4., 5., 6., 7., 8.]);
    }

    #[test]
    fn zero_field_flattens_to_zero_vector() {
        let g = Grid::new(4, 3, 0.5, 0.5).unwrap();
        let x = flatten_state(&FlowSnapshot::zeros(g, 0));
        assert_eq!(x.len(), 24);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unflatten_inverts_flatten_on_random_snapshots() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for t in 0..50 {
            let nx = rng.random_range(1..9);
            let ny = rng.random_range(1..9);
            let g = Grid::new(nx, ny, 0.1, 0.2).unwrap();
            let n = g.n_points();
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let s = FlowSnapshot::new(g, u, v, t).unwrap();
            let back = unflatten_state(g, &flatten_state(&s), t).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn row_major_point_order() {
        let g = Grid::new(3, 2, 1.0, 1.0).unwrap();
        assert_eq!(g.index(2, 0), 2);
        assert_eq!(g.index(0, 1), 3);
        let xs = g.sample(|x, _| x);
        assert_eq!(xs, vec![0., 1., 2., 0., 1., 2.]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Grid::new(0, 3, 1.0, 1.0).is_err());
        assert!(Grid::new(3, 3, -1.0, 1.0).is_err());
        let g = Grid::new(3, 3, 1.0, 1.0).unwrap();
        assert!(FlowSnapshot::new(g, vec![0.0; 8], vec![0.0; 9], 0).is_err());
        let mut u = vec![0.0; 9];
        u[4] = f64::NAN;
        assert!(FlowSnapshot::new(g, u, vec![0.0; 9], 0).is_err());
        let a = FlowSnapshot::zeros(g, 3);
        let b = FlowSnapshot::zeros(g, 3);
        assert!(FlowSeries::new(g, vec![a, b]).is_err());
        assert!(FlowSeries::new(g, vec![]).is_err());
    }
}
