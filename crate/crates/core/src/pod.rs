//! Proper orthogonal decomposition and divergence-regularized Gappy-POD.
//!
//! With snapshot matrix `X_h` (columns are scaled training states) the basis
//! `Phi` holds its leading left singular vectors; the training coefficients
//! would be `A_h = Phi^+ X_h = Phi^T X_h`, which the reconstruction path never
//! needs. Given measurements `m`, Gappy-POD picks
//!
//! ```text
//! a* = argmin ||C Phi a - m||^2 + lambda ||L_div Phi a||^2
//! ```
//!
//! through the `r x r` normal equations, falling back to the least-norm
//! solution when they are singular.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::divergence::DivergenceOperator;
use crate::error::{Error, Result};
use crate::grid::FlowSeries;
use crate::io::{read_header_blob, write_header_blob};
use crate::linalg::{orthonormalize, sorted_eigen};
use crate::metrics::relative_error;
use crate::scaling::ScalingParams;
use crate::sensors::SamplingOperator;

#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    phi: DMatrix<f64>,
    singular_values: Vec<f64>,
    mean: Option<DVector<f64>>,
}

/// Relative cut below which a singular value counts as zero.
const RANK_TOL: f64 = 1e-12;

fn snapshot_matrix(series: &FlowSeries) -> DMatrix<f64> {
    let n = series.grid().state_len();
    let mut x = DMatrix::zeros(n, series.len());
    for (k, s) in series.iter().enumerate() {
        let mut col = x.column_mut(k);
        for (p, &u) in s.u.iter().enumerate() {
            col[p] = u;
        }
        for (p, &v) in s.v.iter().enumerate() {
            col[n / 2 + p] = v;
        }
    }
    x
}

impl PodBasis {
    /// Basis of given orthonormal columns; used by tests and deserialization.
    pub fn from_parts(phi: DMatrix<f64>, singular_values: Vec<f64>, mean: Option<Vec<f64>>) -> Result<Self> {
        if phi.ncols() != singular_values.len() || phi.ncols() == 0 {
            return Err(Error::Shape(format!(
                "{} basis columns but {} singular values",
                phi.ncols(),
                singular_values.len()
            )));
        }
        if let Some(m) = &mean {
            if m.len() != phi.nrows() {
                return Err(Error::Shape("mean length differs from state length".into()));
            }
        }
        Ok(Self { phi, singular_values, mean: mean.map(DVector::from_vec) })
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn r(&self) -> usize {
        self.phi.ncols()
    }

    pub fn n_state(&self) -> usize {
        self.phi.nrows()
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn mean_removed(&self) -> bool {
        self.mean.is_some()
    }

    pub fn mean(&self) -> Option<&DVector<f64>> {
        self.mean.as_ref()
    }

    /// The leading `r` components; POD bases are nested.
    pub fn truncate(&self, r: usize) -> Result<Self> {
        if r == 0 || r > self.r() {
            return Err(Error::InvalidArgument(format!("cannot truncate a rank-{} basis to {r}", self.r())));
        }
        Ok(Self {
            phi: self.phi.columns(0, r).into_owned(),
            singular_values: self.singular_values[..r].to_vec(),
            mean: self.mean.clone(),
        })
    }

    pub fn coefficients(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut d = self.check_state(x)?;
        if let Some(m) = &self.mean {
            d -= m;
        }
        Ok(self.phi.tr_mul(&d).as_slice().to_vec())
    }

    pub fn reconstruct(&self, a: &[f64]) -> Result<Vec<f64>> {
        if a.len() != self.r() {
            return Err(Error::Shape(format!("{} coefficients for a rank-{} basis", a.len(), self.r())));
        }
        let mut x = &self.phi * DVector::from_column_slice(a);
        if let Some(m) = &self.mean {
            x += m;
        }
        Ok(x.as_slice().to_vec())
    }

    /// Orthogonal projection of `x` onto the affine span of the basis.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.reconstruct(&self.coefficients(x)?)
    }

    fn check_state(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.n_state() {
            return Err(Error::Shape(format!("state has length {}, basis expects {}", x.len(), self.n_state())));
        }
        Ok(DVector::from_column_slice(x))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = PodHeader {
            fmt: POD_FORMAT.into(),
            n_state: self.n_state(),
            r: self.r(),
            singular_values: self.singular_values.clone(),
            mean_removed: self.mean_removed(),
        };
        let mut payload = self.phi.as_slice().to_vec();
        if let Some(m) = &self.mean {
            payload.extend_from_slice(m.as_slice());
        }
        write_header_blob(path, &header, &payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, payload): (PodHeader, Vec<f64>) = read_header_blob(path)?;
        if h.fmt != POD_FORMAT {
            return Err(Error::format(path, format!("unsupported format '{}'", h.fmt)));
        }
        let body = h.n_state * h.r;
        let want = body + if h.mean_removed { h.n_state } else { 0 };
        if payload.len() != want || h.singular_values.len() != h.r {
            return Err(Error::format(path, "payload does not match header"));
        }
        let phi = DMatrix::from_column_slice(h.n_state, h.r, &payload[..body]);
        let mean = h.mean_removed.then(|| payload[body..].to_vec());
        Self::from_parts(phi, h.singular_values, mean)
    }
}

const POD_FORMAT: &str = "frcpod-1";

#[derive(Serialize, Deserialize)]
struct PodHeader {
    fmt: String,
    n_state: usize,
    r: usize,
    singular_values: Vec<f64>,
    mean_removed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PodOptions {
    pub remove_mean: bool,
}

pub fn compute_pod(train: &FlowSeries, r: usize) -> Result<PodBasis> {
    compute_pod_with(train, r, PodOptions::default())
}

/// Leading `r` left singular vectors of the snapshot matrix. Works on the
/// smaller of the two Gram matrices, then re-orthonormalizes the columns.
pub fn compute_pod_with(train: &FlowSeries, r: usize, opts: PodOptions) -> Result<PodBasis> {
    let mut x = snapshot_matrix(train);
    let (n, k) = x.shape();
    if r == 0 || r > n.min(k) {
        return Err(Error::InvalidArgument(format!("r = {r} must lie in 1..={} (2N = {n}, K = {k})", n.min(k))));
    }
    let mean = if opts.remove_mean {
        let m = x.column_mean();
        for mut c in x.column_iter_mut() {
            c -= &m;
        }
        Some(m)
    } else {
        None
    };
    let (eigs, mut phi) = if k <= n {
        let (vals, v) = sorted_eigen(x.tr_mul(&x));
        let v = v.columns(0, r).into_owned();
        (vals, &x * v)
    } else {
        let (vals, u) = sorted_eigen(&x * x.transpose());
        (vals, u.columns(0, r).into_owned())
    };
    let s: Vec<f64> = eigs.iter().take(r).map(|e| e.max(0.0).sqrt()).collect();
    let s_max = s[0];
    if !(s_max > 0.0) || s[r - 1] <= RANK_TOL.sqrt() * s_max {
        return Err(Error::Numerical(format!(
            "snapshot matrix has numerical rank below r = {r} (sigma_r / sigma_1 = {:.3e})",
            s[r - 1] / s_max
        )));
    }
    orthonormalize(&mut phi);
    // Fix the sign so the largest-magnitude entry of each mode is positive.
    for mut c in phi.column_iter_mut() {
        let imax = c.iamax();
        if c[imax] < 0.0 {
            c.neg_mut();
        }
    }
    Ok(PodBasis { phi, singular_values: s, mean })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpodConfig {
    pub r: usize,
    pub lambda: f64,
}

impl GpodConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(Error::InvalidArgument("GPOD needs r >= 1".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpodSolution {
    pub coefficients: Vec<f64>,
    pub reconstruction: Vec<f64>,
    /// True when the normal equations were singular and the least-norm
    /// solution was returned.
    pub rank_deficient: bool,
}

/// Precomputed Gram blocks for repeated solves with one basis, layout and
/// divergence operator.
#[derive(Debug, Clone)]
pub struct GpodSolver {
    basis: PodBasis,
    rows: Vec<usize>,
    /// `(C Phi)^T (C Phi)`.
    gram_c: DMatrix<f64>,
    /// `(L Phi)^T (L Phi)`.
    gram_l: DMatrix<f64>,
    /// `(L Phi)^T L xbar` for a mean-removed basis, else zero.
    mean_div: DVector<f64>,
    /// `C xbar`, or zero.
    mean_meas: Vec<f64>,
}

impl GpodSolver {
    pub fn new(basis: &PodBasis, op: &SamplingOperator, div: &DivergenceOperator) -> Result<Self> {
        let n = basis.n_state();
        if op.n_state() != n || div.grid().state_len() != n {
            return Err(Error::Shape(format!(
                "basis state length {n}, sampling operator {}, divergence grid {}",
                op.n_state(),
                div.grid().state_len()
            )));
        }
        let r = basis.r();
        let rows: Vec<usize> = (0..op.n_measurements()).map(|k| op.row_index(k)).collect();
        let c_phi = basis.phi.select_rows(&rows);
        let gram_c = c_phi.tr_mul(&c_phi);
        let mut l_phi = DMatrix::zeros(div.grid().n_points(), r);
        for j in 0..r {
            let d = div.apply(basis.phi.column(j).as_slice())?;
            l_phi.column_mut(j).copy_from_slice(&d);
        }
        let gram_l = l_phi.tr_mul(&l_phi);
        let (mean_div, mean_meas) = match &basis.mean {
            Some(m) => {
                let lm = DVector::from_vec(div.apply(m.as_slice())?);
                (l_phi.tr_mul(&lm), rows.iter().map(|&i| m[i]).collect())
            }
            None => (DVector::zeros(r), vec![0.0; rows.len()]),
        };
        Ok(Self { basis: basis.clone(), rows, gram_c, gram_l, mean_div, mean_meas })
    }

    pub fn basis(&self) -> &PodBasis {
        &self.basis
    }

    pub fn solve(&self, m: &[f64], cfg: &GpodConfig) -> Result<GpodSolution> {
        cfg.validate()?;
        if cfg.r > self.basis.r() {
            return Err(Error::InvalidArgument(format!("r = {} exceeds basis rank {}", cfg.r, self.basis.r())));
        }
        if m.len() != self.rows.len() {
            return Err(Error::Shape(format!("{} measurements, layout expects {}", m.len(), self.rows.len())));
        }
        let r = cfg.r;
        let a_mat = self.gram_c.view((0, 0), (r, r)) + cfg.lambda * self.gram_l.view((0, 0), (r, r));
        let mut b = DVector::zeros(r);
        for (k, &row) in self.rows.iter().enumerate() {
            let mk = m[k] - self.mean_meas[k];
            for j in 0..r {
                b[j] += self.basis.phi[(row, j)] * mk;
            }
        }
        b -= cfg.lambda * self.mean_div.rows(0, r);

        let (vals, vecs) = sorted_eigen(a_mat);
        let top = vals[0].max(0.0);
        let cut = RANK_TOL * top;
        let keep = vals.iter().take_while(|&&v| v > cut).count();
        let rank_deficient = keep < r;
        if rank_deficient {
            log::warn!(
                "GPOD normal equations are rank deficient ({keep} of {r}, lambda = {}, 2M = {}); returning the least-norm solution",
                cfg.lambda,
                self.rows.len()
            );
        }
        let mut a = DVector::zeros(r);
        for i in 0..keep {
            let vi = vecs.column(i);
            a.axpy(vi.dot(&b) / vals[i], &vi, 1.0);
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("GPOD solve produced non-finite coefficients".into()));
        }
        let coefficients = a.as_slice().to_vec();
        let mut x = self.basis.phi.columns(0, r) * &a;
        if let Some(mean) = &self.basis.mean {
            x += mean;
        }
        Ok(GpodSolution { coefficients, reconstruction: x.as_slice().to_vec(), rank_deficient })
    }
}

pub fn gpod_reconstruct(
    basis: &PodBasis,
    op: &SamplingOperator,
    div: &DivergenceOperator,
    m: &[f64],
    cfg: &GpodConfig,
) -> Result<GpodSolution> {
    GpodSolver::new(basis, op, div)?.solve(m, cfg)
}

/// Everything GPOD needs to turn raw (unscaled) measurements into unscaled
/// reconstructions.
#[derive(Debug, Clone)]
pub struct GpodPipeline {
    pub solver: GpodSolver,
    pub scaling: ScalingParams,
}

impl GpodPipeline {
    /// `div` acts on physical states; the regularizer is applied to the
    /// physical divergence of the scaled reconstruction.
    pub fn new(
        basis: &PodBasis,
        op: &SamplingOperator,
        div: &DivergenceOperator,
        scaling: ScalingParams,
    ) -> Result<Self> {
        let scaled_div = scaling.divergence_for_scaled(div)?;
        Ok(Self { solver: GpodSolver::new(basis, op, &scaled_div)?, scaling })
    }

    pub fn reconstruct(&self, raw_measurements: &[f64], cfg: &GpodConfig) -> Result<Vec<f64>> {
        let mut m = raw_measurements.to_vec();
        self.scaling.scale_measurements(&mut m);
        let mut x = self.solver.solve(&m, cfg)?.reconstruction;
        self.scaling.unscale_state(&mut x);
        Ok(x)
    }

    pub fn reconstruct_series(
        &self,
        op: &SamplingOperator,
        truths: &FlowSeries,
        cfg: &GpodConfig,
    ) -> Result<Vec<Vec<f64>>> {
        truths.iter().map(|s| self.reconstruct(&op.apply(&s.to_state())?, cfg)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub config: GpodConfig,
    pub validation_error: f64,
    /// Every evaluated `(r, lambda, error)` in search order.
    pub table: Vec<(usize, f64, f64)>,
}

/// Candidates whose error differs by less than this relative amount are ties.
const TIE_TOL: f64 = 1e-9;

/// Grid search over `(r, lambda)` minimizing the mean relative error on the
/// (unscaled) validation series. Ties go to smaller `r`, then smaller
/// `lambda`. With `lambda = 0` only `r <= 2M` is considered.
pub fn select_gpod_hyperparams(
    pipeline: &GpodPipeline,
    op: &SamplingOperator,
    validation: &FlowSeries,
    r_grid: &[usize],
    lambda_grid: &[f64],
) -> Result<SelectionResult> {
    if r_grid.is_empty() || lambda_grid.is_empty() {
        return Err(Error::InvalidArgument("hyperparameter grids must be nonempty".into()));
    }
    let mut rs = r_grid.to_vec();
    rs.sort_unstable();
    rs.dedup();
    let mut lambdas = lambda_grid.to_vec();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    let truths = validation.states();
    let measurements = truths.iter().map(|x| op.apply(x)).collect::<Result<Vec<_>>>()?;
    let mut best: Option<(GpodConfig, f64)> = None;
    let mut table = Vec::new();
    for &r in &rs {
        for &lambda in &lambdas {
            let cfg = GpodConfig { r, lambda };
            if lambda == 0.0 && r > op.n_measurements() && (rs.len() > 1 || lambdas.len() > 1) {
                continue;
            }
            let preds = measurements.iter().map(|m| pipeline.reconstruct(m, &cfg)).collect::<Result<Vec<_>>>()?;
            let err = relative_error(&preds, &truths)?;
            table.push((r, lambda, err));
            let better = match best {
                None => true,
                Some((_, b)) => err < b - TIE_TOL * b.max(1e-300) - 1e-14,
            };
            if better {
                best = Some((cfg, err));
            }
        }
    }
    let (config, validation_error) = best.ok_or_else(|| {
        Error::InvalidArgument(format!("no admissible (r, lambda): lambda = 0 needs r <= 2M = {}", op.n_measurements()))
    })?;
    Ok(SelectionResult { config, validation_error, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::sensors::SensorLayout;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_series(g: Grid, k: usize, seed: u64) -> FlowSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states: Vec<Vec<f64>> =
            (0..k).map(|_| (0..g.state_len()).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        FlowSeries::from_states(g, &states).unwrap()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn rank_one_series_is_reproduced() {
        let g = Grid::new(4, 3, 1.0, 1.0).unwrap();
        let x: Vec<f64> = (0..24).map(|k| (k as f64 * 0.37).sin() + 0.1).collect();
        let s = FlowSeries::from_states(g, &vec![x.clone(); 6]).unwrap();
        let b = compute_pod(&s, 1).unwrap();
        assert!(max_abs_diff(&b.project(&x).unwrap(), &x) <= 1e-10);
        assert!(compute_pod(&s, 2).unwrap_err().is_numerical());
    }

    #[test]
    fn basis_is_orthonormal_with_sorted_spectrum() {
        for (k, seed) in [(12, 1), (40, 2)] {
            let g = Grid::new(4, 4, 1.0, 1.0).unwrap(); // 2N = 32, both branches
            let b = compute_pod(&random_series(g, k, seed), 5).unwrap();
            let gram = b.phi().tr_mul(b.phi());
            assert!((gram - DMatrix::identity(5, 5)).amax() <= 1e-10);
            assert!(b.singular_values().windows(2).all(|w| w[0] >= w[1] && w[1] > 0.0));
        }
    }

    #[test]
    fn singular_values_match_svd() {
        let g = Grid::new(3, 3, 1.0, 1.0).unwrap();
        let s = random_series(g, 7, 3);
        let svd = snapshot_matrix(&s).svd(false, false);
        let mut want: Vec<f64> = svd.singular_values.iter().copied().collect();
        want.sort_by(|a, b| b.total_cmp(a));
        let b = compute_pod(&s, 4).unwrap();
        for (a, w) in b.singular_values().iter().zip(&want) {
            assert!((a - w).abs() <= 1e-10 * want[0]);
        }
    }

    #[test]
    fn projection_error_is_nonincreasing_in_r() {
        let g = Grid::new(4, 3, 1.0, 1.0).unwrap();
        let s = random_series(g, 15, 4);
        let full = compute_pod(&s, 12).unwrap();
        let mut prev = f64::INFINITY;
        for r in 1..=12 {
            let b = full.truncate(r).unwrap();
            let e: f64 = s
                .iter()
                .map(|snap| {
                    let x = snap.to_state();
                    let p = b.project(&x).unwrap();
                    x.iter().zip(&p).map(|(a, c)| (a - c).powi(2)).sum::<f64>()
                })
                .sum();
            assert!(e <= prev + 1e-10);
            prev = e;
        }
    }

    #[test]
    fn r_out_of_range_is_rejected() {
        let g = Grid::new(3, 3, 1.0, 1.0).unwrap();
        let s = random_series(g, 4, 5);
        assert!(compute_pod(&s, 5).is_err());
        assert!(compute_pod(&s, 0).is_err());
    }

    #[test]
    fn mean_removed_basis_reproduces_affine_data() {
        let g = Grid::new(3, 3, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let base: Vec<f64> = (0..18).map(|_| rng.random_range(2.0..3.0)).collect();
        let dir: Vec<f64> = (0..18).map(|_| rng.random_range(-1.0..1.0)).collect();
        let states: Vec<Vec<f64>> =
            (0..5).map(|t| base.iter().zip(&dir).map(|(b, d)| b + t as f64 * d).collect()).collect();
        let s = FlowSeries::from_states(g, &states).unwrap();
        let b = compute_pod_with(&s, 1, PodOptions { remove_mean: true }).unwrap();
        assert!(b.mean_removed());
        for x in &states {
            assert!(max_abs_diff(&b.project(x).unwrap(), x) <= 1e-10);
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let g = Grid::new(3, 3, 1.0, 1.0).unwrap();
        let b = compute_pod_with(&random_series(g, 6, 9), 3, PodOptions { remove_mean: true }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pod.bin");
        b.save(&p).unwrap();
        assert_eq!(PodBasis::load(&p).unwrap(), b);
    }

    #[test]
    fn full_observation_recovers_in_span_state() {
        let g = Grid::new(4, 4, 0.5, 0.5).unwrap();
        let b = compute_pod(&random_series(g, 10, 10), 6).unwrap();
        let x = b.reconstruct(&[0.3, -1.2, 0.5, 2.0, -0.7, 0.1]).unwrap();
        let op = SamplingOperator::new(SensorLayout::full(&g), &g).unwrap();
        let div = DivergenceOperator::new(g).unwrap();
        let sol = gpod_reconstruct(&b, &op, &div, &op.apply(&x).unwrap(), &GpodConfig { r: 6, lambda: 0.0 }).unwrap();
        assert!(max_abs_diff(&sol.reconstruction, &x) <= 1e-8);
    }

    #[test]
    fn least_norm_fallback_when_underdetermined() {
        let g = Grid::new(4, 4, 0.5, 0.5).unwrap();
        let b = compute_pod(&random_series(g, 10, 11), 6).unwrap();
        let op = SamplingOperator::new(SensorLayout::new(vec![(1, 1)]).unwrap(), &g).unwrap();
        let div = DivergenceOperator::new(g).unwrap();
        let m = [0.4, -0.2];
        let sol = gpod_reconstruct(&b, &op, &div, &m, &GpodConfig { r: 6, lambda: 0.0 }).unwrap();
        assert!(sol.rank_deficient);
        // Least-norm solution of C Phi a = m.
        let c_phi = b.phi().select_rows(&[op.row_index(0), op.row_index(1)]);
        let want = c_phi.clone().pseudo_inverse(1e-12).unwrap() * DVector::from_column_slice(&m);
        assert!(max_abs_diff(&sol.coefficients, want.as_slice()) <= 1e-8);
        assert!(max_abs_diff((c_phi * DVector::from_vec(sol.coefficients)).as_slice(), &m) <= 1e-8);
    }
}
