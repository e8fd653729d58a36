// SPDX-License-Identifier: Apache-2.0

//! Utility metrics.

use crate::error::{Result, VflError};

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(VflError::Config(format!("{a} predictions for {b} targets")));
    }
    if a == 0 {
        return Err(VflError::Empty("no predictions".into()));
    }
    Ok(())
}

pub fn mse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    same_len(preds.len(), targets.len())?;
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / preds.len() as f64)
}

/// Fraction of samples whose thresholded score matches the label. A score
/// strictly above `threshold` predicts class 1.
pub fn accuracy(preds: &[f64], labels: &[f64], threshold: f64) -> Result<f64> {
    same_len(preds.len(), labels.len())?;
    let hits = preds
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| ((p > threshold) as u8 as f64) == y)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Area under the ROC curve via the Mann-Whitney statistic, tied scores
/// counting one half.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    same_len(scores.len(), labels.len())?;
    if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(VflError::Config(format!("auc needs 0/1 labels, got {bad}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(VflError::Numeric("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&y| y == 1.0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(VflError::Config("auc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tie groups, 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1.0 {
                rank_sum_pos += avg;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
