//! Train / validation / test partitioning of a snapshot series.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::FlowSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Sequential,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub test_fraction: f64,
    /// Fraction of the snapshots left after removing the test set.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { mode: SplitMode::Sequential, test_fraction: 0.15, validation_fraction: 0.30, seed: 0 }
    }
}

/// Subset sizes `(train, validation, test)` for a series of length `k`.
///
/// The test count is floored and the validation count rounded to nearest
/// (half up); the remainder goes to training.
pub fn split_sizes(k: usize, spec: &SplitSpec) -> Result<(usize, usize, usize)> {
    let valid = |f: f64| f.is_finite() && f > 0.0 && f < 1.0;
    if !valid(spec.test_fraction) || !valid(spec.validation_fraction) {
        return Err(Error::InvalidArgument(format!(
            "split fractions must lie in (0, 1), got test={} validation={}",
            spec.test_fraction, spec.validation_fraction
        )));
    }
    // Guards against 0.15 * 20 landing a hair below 3.
    const NUDGE: f64 = 1e-9;
    let n_test = ((k as f64) * spec.test_fraction + NUDGE).floor() as usize;
    let rest = k - n_test.min(k);
    let n_val = (((rest as f64) * spec.validation_fraction) + 0.5 + NUDGE).floor() as usize;
    let n_val = n_val.min(rest);
    let n_train = rest - n_val;
    for (name, n) in [("train", n_train), ("validation", n_val), ("test", n_test)] {
        if n == 0 {
            return Err(Error::EmptySubset(format!(
                "{name} subset would be empty for K={k} (test={}, validation={})",
                spec.test_fraction, spec.validation_fraction
            )));
        }
    }
    Ok((n_train, n_val, n_test))
}

/// Positions (into the series) assigned to each subset, each sorted.
pub fn split_positions(k: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let (n_train, n_val, _) = split_sizes(k, spec)?;
    let order: Vec<usize> = match spec.mode {
        SplitMode::Sequential => (0..k).collect(),
        SplitMode::Random => {
            let mut idx: Vec<usize> = (0..k).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
            idx
        }
    };
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok((train, val, test))
}

#[derive(Debug, Clone)]
pub struct SplitSeries {
    pub train: FlowSeries,
    pub validation: FlowSeries,
    pub test: FlowSeries,
}

pub fn split(series: &FlowSeries, spec: &SplitSpec) -> Result<SplitSeries> {
    let (tr, va, te) = split_positions(series.len(), spec)?;
    Ok(SplitSeries { train: series.select(&tr)?, validation: series.select(&va)?, test: series.select(&te)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{FlowSnapshot, Grid};
    use std::collections::BTreeSet;

    fn seq(t: f64, v: f64) -> SplitSpec {
        SplitSpec { mode: SplitMode::Sequential, test_fraction: t, validation_fraction: v, seed: 0 }
    }

    #[test]
    fn documented_sizes() {
        assert_eq!(split_sizes(1001, &seq(0.15, 0.30)).unwrap(), (596, 255, 150));
        assert_eq!(split_sizes(10, &seq(0.15, 0.30)).unwrap(), (6, 3, 1));
        assert_eq!(split_sizes(2000, &seq(0.15, 0.30)).unwrap(), (1190, 510, 300));
        assert_eq!(split_sizes(20, &seq(0.15, 0.30)).unwrap().2, 3);
    }

    #[test]
    fn empty_subsets_are_errors() {
        assert!(matches!(split_sizes(3, &seq(0.15, 0.30)), Err(Error::EmptySubset(_))));
        assert!(split_sizes(100, &seq(0.0, 0.3)).is_err());
        assert!(split_sizes(100, &seq(0.2, 1.0)).is_err());
    }

    #[test]
    fn sequential_keeps_time_order() {
        let (tr, va, te) = split_positions(10, &seq(0.15, 0.30)).unwrap();
        assert_eq!(tr, (0..6).collect::<Vec<_>>());
        assert_eq!(va, vec![6, 7, 8]);
        assert_eq!(te, vec![9]);
    }

    #[test]
    fn random_split_partitions_and_is_reproducible() {
        for seed in 0..10 {
            let spec = SplitSpec { mode: SplitMode::Random, seed, ..SplitSpec::default() };
            let (tr, va, te) = split_positions(137, &spec).unwrap();
            let (n_tr, n_va, n_te) = split_sizes(137, &spec).unwrap();
            assert_eq!((tr.len(), va.len(), te.len()), (n_tr, n_va, n_te));
            let all: BTreeSet<usize> = tr.iter().chain(&va).chain(&te).copied().collect();
            assert_eq!(all.len(), 137);
            assert_eq!(all, (0..137).collect());
            assert_eq!(split_positions(137, &spec).unwrap(), (tr, va, te));
        }
        let a = split_positions(137, &SplitSpec { mode: SplitMode::Random, seed: 1, ..SplitSpec::default() });
        let b = split_positions(137, &SplitSpec { mode: SplitMode::Random, seed: 2, ..SplitSpec::default() });
        assert_ne!(a.unwrap(), b.unwrap());
    }

    #[test]
    fn split_series_preserves_snapshots() {
        let g = Grid::new(2, 2, 1.0, 1.0).unwrap();
        let snaps = (0..20).map(|t| FlowSnapshot::new(g, vec![t as f64; 4], vec![0.0; 4], t * 3).unwrap()).collect();
        let s = FlowSeries::new(g, snaps).unwrap();
        let parts = split(&s, &SplitSpec::default()).unwrap();
        assert_eq!(parts.test.snapshots()[0].time_index, 17 * 3);
        assert_eq!(parts.train.len() + parts.validation.len() + parts.test.len(), 20);
    }
}
