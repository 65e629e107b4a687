use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean of a seeded uniform sample without replacement of
/// `max(1, ceil(fraction · n))` labels.
pub fn subset_estimate(labels: &[f64], fraction: f64, seed: u64) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Input("subset estimate needs labels".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Input(format!("fraction {fraction} outside (0,1]")));
    }
    let k = ((labels.len() as f64 * fraction).ceil() as usize).clamp(1, labels.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = sample(&mut rng, labels.len(), k);
    Ok(picked.iter().map(|i| labels[i]).sum::<f64>() / k as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetComparison {
    pub task: String,
    pub fraction: f64,
    pub seed: u64,
    pub full_mean: f64,
    pub probe_estimate: f64,
    pub probe_abs_err: f64,
    pub subset_estimate: f64,
    pub subset_abs_err: f64,
}

/// Absolute errors of the probe's mean prediction and of a subset mean,
/// both against the full-set mean label.
pub fn compare_probe_vs_subset(task: &str, preds: &[f64], labels: &[f64], fraction: f64, seed: u64) -> Result<SubsetComparison> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::Input("predictions and labels must align".into()));
    }
    let full_mean = labels.iter().sum::<f64>() / labels.len() as f64;
    let probe_estimate = preds.iter().sum::<f64>() / preds.len() as f64;
    let subset = subset_estimate(labels, fraction, seed)?;
    Ok(SubsetComparison {
        task: task.to_owned(),
        fraction,
        seed,
        full_mean,
        probe_estimate,
        probe_abs_err: (probe_estimate - full_mean).abs(),
        subset_estimate: subset,
        subset_abs_err: (subset - full_mean).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_and_constant() {
        let labels = [0.125, 0.5, 1.0, 0.0, 0.875];
        let full = labels.iter().sum::<f64>() / 5.0;
        assert!((subset_estimate(&labels, 1.0, 3).unwrap() - full).abs() < 1e-15);
        for f in [0.01, 0.3, 0.99] {
            assert_eq!(subset_estimate(&[0.25; 40], f, 9).unwrap(), 0.25);
        }
        let c = compare_probe_vs_subset("t", &[0.5; 5], &labels, 1.0, 0).unwrap();
        assert!(c.subset_abs_err < 1e-15);
        assert!((c.probe_abs_err - (0.5 - full).abs()).abs() < 1e-15);
        assert!(subset_estimate(&labels, 0.0, 0).is_err());
    }
}
