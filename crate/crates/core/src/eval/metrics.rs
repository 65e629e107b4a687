use crate::error::{Error, Result};

/// Binarization threshold: `v̂ ≥ 0.5` is a positive.
pub const POSITIVE_THRESHOLD: f64 = 0.5;

pub fn binarize(v_hat: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&v_hat) {
        return Err(Error::Input(format!("label {v_hat} outside [0,1]")));
    }
    Ok(u8::from(v_hat >= POSITIVE_THRESHOLD))
}

/// Mann-Whitney AUROC from the rank sum of positives, with mid-ranks for ties.
pub fn auroc(preds: &[f64], labels: &[u8]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Input(format!(
            "auroc needs equal lengths, got {} and {}",
            preds.len(),
            labels.len()
        )));
    }
    if preds.iter().any(|p| p.is_nan()) {
        return Err(Error::Input("auroc predictions contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUROC needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[a].total_cmp(&preds[b]));
    // Doubled ranks keep every mid-rank an integer.
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && preds[order[j + 1]] == preds[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u64;
        rank_sum2 += mid2 * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        i = j + 1;
    }
    let (p, n) = (n_pos as u64, n_neg as u64);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

pub fn mse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::Input(format!(
            "mse needs equal non-empty lengths, got {} and {}",
            preds.len(),
            targets.len()
        )));
    }
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / preds.len() as f64)
}
