//! Discrete divergence `du/dx + dv/dy` on a collocated grid.
//!
//! Interior points use second-order central differences, boundary points the
//! second-order one-sided three-point formulas. Both are exact on fields that
//! are quadratic in the coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Weights of the three-point first-derivative formulas, in units of `1/h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stencil {
    /// Applied to `(f[i-1], f[i], f[i+1])`.
    pub interior: [f64; 3],
    /// Applied to `(f[0], f[1], f[2])` at the low edge; mirrored and negated
    /// at the high edge.
    pub boundary: [f64; 3],
}

impl Stencil {
    pub const SECOND_ORDER: Stencil = Stencil { interior: [-0.5, 0.0, 0.5], boundary: [-1.5, 2.0, -0.5] };

    /// `(start, weights)` such that `f'(i) ~ sum_k w[k] f[start + k] / h`.
    #[inline]
    fn taps(&self, i: usize, n: usize) -> (usize, [f64; 3]) {
        if i == 0 {
            (0, self.boundary)
        } else if i == n - 1 {
            let [a, b, c] = self.boundary;
            (n - 3, [-c, -b, -a])
        } else {
            (i - 1, self.interior)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceOperator {
    grid: Grid,
    stencil: Stencil,
    /// Multipliers applied to the `u` and `v` blocks before differencing, so
    /// the operator can act on min-max scaled states and still return the
    /// divergence of the physical field.
    channel_scale: (f64, f64),
}

impl DivergenceOperator {
    pub fn new(grid: Grid) -> Result<Self> {
        if grid.nx < 3 || grid.ny < 3 {
            return Err(Error::InvalidGrid(format!(
                "divergence stencil needs at least 3x3 points, got {}x{}",
                grid.nx, grid.ny
            )));
        }
        Ok(Self { grid, stencil: Stencil::SECOND_ORDER, channel_scale: (1.0, 1.0) })
    }

    /// Operator on scaled states `x~` with `u = du * u~ + uc`: returns the
    /// divergence of the unscaled field (the centers drop out).
    pub fn for_scaled(grid: Grid, du: f64, dv: f64) -> Result<Self> {
        let mut op = Self::new(grid)?;
        op.channel_scale = (du, dv);
        Ok(op)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn stencil(&self) -> Stencil {
        self.stencil
    }

    pub fn channel_scale(&self) -> (f64, f64) {
        self.channel_scale
    }

    fn check_len(&self, len: usize, want: usize, what: &str) -> Result<()> {
        if len != want {
            return Err(Error::Shape(format!("{what} has length {len}, expected {want}")));
        }
        Ok(())
    }

    /// Length-`N` divergence of a length-`2N` state.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.grid.n_points()];
        self.apply_into(x, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let g = self.grid;
        let n = g.n_points();
        self.check_len(x.len(), 2 * n, "state")?;
        self.check_len(out.len(), n, "output")?;
        let (u, v) = x.split_at(n);
        let (su, sv) = self.channel_scale;
        let cx = su / g.dx;
        let cy = sv / g.dy;
        for j in 0..g.ny {
            let (sj, wj) = self.stencil.taps(j, g.ny);
            for i in 0..g.nx {
                let (si, wi) = self.stencil.taps(i, g.nx);
                let row = j * g.nx;
                let dudx = wi[0] * u[row + si] + wi[1] * u[row + si + 1] + wi[2] * u[row + si + 2];
                let dvdy = wj[0] * v[sj * g.nx + i] + wj[1] * v[(sj + 1) * g.nx + i] + wj[2] * v[(sj + 2) * g.nx + i];
                out[row + i] = cx * dudx + cy * dvdy;
            }
        }
        Ok(())
    }

    /// Adjoint map from a length-`N` field back to a length-`2N` state.
    pub fn apply_transpose(&self, d: &[f64]) -> Result<Vec<f64>> {
        let g = self.grid;
        let n = g.n_points();
        self.check_len(d.len(), n, "divergence field")?;
        let mut x = vec![0.0; 2 * n];
        let (u, v) = x.split_at_mut(n);
        let (su, sv) = self.channel_scale;
        let cx = su / g.dx;
        let cy = sv / g.dy;
        for j in 0..g.ny {
            let (sj, wj) = self.stencil.taps(j, g.ny);
            for i in 0..g.nx {
                let (si, wi) = self.stencil.taps(i, g.nx);
                let row = j * g.nx;
                let dk = d[row + i];
                for k in 0..3 {
                    u[row + si + k] += cx * wi[k] * dk;
                    v[(sj + k) * g.nx + i] += cy * wj[k] * dk;
                }
            }
        }
        Ok(x)
    }

    /// `||L x||^2`.
    pub fn squared_norm(&self, x: &[f64]) -> Result<f64> {
        Ok(self.apply(x)?.iter().map(|d| d * d).sum())
    }
}

pub fn apply_divergence(op: &DivergenceOperator, x: &[f64]) -> Result<Vec<f64>> {
    op.apply(x)
}
