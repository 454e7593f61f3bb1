//! Reconstruction metrics, always evaluated on unscaled states.

use crate::divergence::DivergenceOperator;
use crate::error::{Error, Result};

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Per-pair `||xhat - x|| / ||x||`.
pub fn relative_errors(predictions: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<Vec<f64>> {
    if predictions.len() != truths.len() || predictions.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions for {} truths (need equal, nonzero counts)",
            predictions.len(),
            truths.len()
        )));
    }
    predictions
        .iter()
        .zip(truths)
        .enumerate()
        .map(|(i, (p, t))| {
            if p.len() != t.len() {
                return Err(Error::Shape(format!("pair {i}: lengths {} and {}", p.len(), t.len())));
            }
            let tn = norm(t);
            if tn == 0.0 {
                return Err(Error::InvalidArgument(format!("truth {i} has zero norm")));
            }
            let diff = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            Ok(diff / tn)
        })
        .collect()
}

/// Mean relative error over all pairs.
pub fn relative_error(predictions: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<f64> {
    let e = relative_errors(predictions, truths)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

pub fn divergence_norms(predictions: &[Vec<f64>], div: &DivergenceOperator) -> Result<Vec<f64>> {
    predictions.iter().map(|p| Ok(norm(&div.apply(p)?))).collect()
}

/// Mean of `||L_div xhat||_2` over the predictions.
pub fn divergence_error(predictions: &[Vec<f64>], div: &DivergenceOperator) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("no predictions".into()));
    }
    let d = divergence_norms(predictions, div)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::synthetic::{generate, FlowRecipe};

    #[test]
    fn relative_error_arithmetic() {
        let x = vec![vec![3.0, 4.0, 0.0, 0.0]];
        assert_eq!(relative_error(&x, &x).unwrap(), 0.0);
        let p = vec![vec![0.0, 4.0, 0.0, 0.0]];
        assert!((relative_error(&p, &x).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn relative_error_averages_pairs() {
        let t = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
        let p = vec![vec![1.0, 1.0], vec![0.0, 2.0]];
        assert!((relative_error(&p, &t).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn relative_error_rejects_bad_inputs() {
        assert!(relative_error(&[vec![1.0]], &[vec![0.0]]).is_err());
        assert!(relative_error(&[], &[]).is_err());
        assert!(relative_error(&[vec![1.0]], &[vec![1.0], vec![2.0]]).is_err());
    }

    #[test]
    fn divergence_error_of_affine_fields() {
        let g = Grid::new(5, 4, 0.5, 0.25).unwrap();
        let div = DivergenceOperator::new(g).unwrap();
        let mut shear = g.sample(|_, y| 2.0 * y);
        shear.extend(g.sample(|x, _| -x));
        assert!(divergence_error(&[shear], &div).unwrap() <= 1e-12);
        let mut stretch = g.sample(|x, _| x);
        stretch.extend(vec![0.0; g.n_points()]);
        let want = (g.n_points() as f64).sqrt();
        assert!((divergence_error(&[stretch], &div).unwrap() - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn taylor_green_divergence_error_converges() {
        let e = |n: usize| {
            let g = Grid::spanning(n, n, std::f64::consts::TAU, std::f64::consts::TAU).unwrap();
            let s = generate(&FlowRecipe::taylor_green(1.0, 1, 1), g, &[0.0]).unwrap();
            divergence_error(&s.states(), &DivergenceOperator::new(g).unwrap()).unwrap()
        };
        // The L2 norm sums over 4x the points, so the per-point h^2 decay
        // shows up as a factor 2 less; compare the RMS instead.
        let ratio = (e(64) / 64.0) / (e(128) / 128.0);
        assert!(ratio >= 3.5, "ratio {ratio}");
    }
}
