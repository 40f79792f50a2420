//! AUROC, average precision and MSE.

use std::cmp::Ordering;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("both classes are required")]
    SingleClass,
    #[error("no positive labels")]
    NoPositives,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite score")]
    NonFinite,
}

fn check(scores: &[f64], n: usize) -> Result<(), MetricError> {
    if scores.len() != n {
        return Err(MetricError::LengthMismatch(scores.len(), n));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricError::NonFinite);
    }
    Ok(())
}

fn order_ascending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    idx
}

/// Mann-Whitney AUROC with ties counted one half, via midranks. The
/// statistic is accumulated in integers (doubled ranks), so the result is a
/// single rounding of the exact fraction.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check(scores, labels.len())?;
    let p = labels.iter().filter(|&&l| l).count() as u64;
    let n = labels.len() as u64 - p;
    if p == 0 || n == 0 {
        return Err(MetricError::SingleClass);
    }
    let idx = order_ascending(scores);
    // Sum over positives of doubled midranks (1-based ranks i..=j → i + j).
    let mut rank2_sum: u64 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let pos_in_group = idx[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        rank2_sum += pos_in_group * ((i + 1) as u64 + (j + 1) as u64);
        i = j + 1;
    }
    let u2 = rank2_sum - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Average precision with tied scores treated as one threshold:
/// `Σ precision(t) · Δtp(t) / P` over distinct thresholds, descending.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check(scores, labels.len())?;
    let p = labels.iter().filter(|&&l| l).count();
    if p == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut idx = order_ascending(scores);
    idx.reverse();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let dtp = idx[i..=j].iter().filter(|&&k| labels[k]).count();
        tp += dtp;
        fp += (j + 1 - i) - dtp;
        if dtp > 0 {
            ap += (tp as f64 / (tp + fp) as f64) * (dtp as f64 / p as f64);
        }
        i = j + 1;
    }
    Ok(ap)
}

pub fn mse(preds: &[f64], targets: &[f64]) -> Result<f64, MetricError> {
    if preds.len() != targets.len() {
        return Err(MetricError::LengthMismatch(preds.len(), targets.len()));
    }
    let s: f64 = preds.iter().zip(targets).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / preds.len() as f64)
}

pub fn to_bool(labels: &[f64]) -> Vec<bool> {
    labels.iter().map(|&y| y > 0.5).collect()
}
