//! Stratified fold plans, validation splits and train-fold standardization.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::types::{derive_seed, rng_from};

pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("need at least {k} samples for {k} folds, got {n}")]
pub struct TooFewSamples {
    pub n: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    /// Fold index per sample.
    pub assignment: Vec<usize>,
    pub stratified: bool,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] != fold).collect()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }
}

/// Each class is shuffled, then dealt round-robin across folds, the deal
/// continuing where the previous class stopped. Fold sizes and per-fold
/// class counts each differ by at most one.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<FoldPlan, TooFewSamples> {
    let n = labels.len();
    if k == 0 || n < k {
        return Err(TooFewSamples { n, k });
    }
    let mut assignment = vec![0; n];
    let mut next = 0;
    for (c, class) in [true, false].into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng_from(derive_seed(seed, c as u64)));
        for i in idx {
            assignment[i] = next % k;
            next += 1;
        }
    }
    Ok(FoldPlan { n_folds: k, assignment, stratified: true })
}

/// Unstratified k-fold plan.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<FoldPlan, TooFewSamples> {
    let mut plan = stratified_folds(&vec![false; n], k, seed)?;
    plan.stratified = false;
    Ok(plan)
}

/// Stratified split of `indices` into (train, validation) with the given
/// validation fraction; validation is non-empty whenever `indices` has at
/// least two elements.
pub fn validation_split(indices: &[usize], labels: &[bool], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (c, class) in [true, false].into_iter().enumerate() {
        let mut idx: Vec<usize> = indices.iter().copied().filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng_from(derive_seed(seed, 100 + c as u64)));
        let nv = (idx.len() as f64 * fraction).round() as usize;
        val.extend_from_slice(&idx[..nv]);
        train.extend_from_slice(&idx[nv..]);
    }
    if val.is_empty() && train.len() >= 2 {
        val.push(train.pop().unwrap());
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Per-column affine standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population std, floored at [`STD_FLOOR`].
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows() as f64;
        let mean: Vec<f64> = x.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_else(|| vec![0.0; x.ncols()]);
        let std = x.columns().into_iter().zip(&mean).map(|(c, m)| (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt().max(STD_FLOOR)).collect();
        Standardizer { mean, std }
    }

    pub fn identity(d: usize) -> Self {
        Standardizer { mean: vec![0.0; d], std: vec![1.0; d] }
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (j, mut c) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            c.mapv_inplace(|v| (v - m) / s);
        }
        out
    }

    pub fn transform_value(&self, j: usize, v: f64) -> f64 {
        (v - self.mean[j]) / self.std[j]
    }
}

/// Copies the selected rows.
pub fn select_rows(x: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

pub fn select<T: Clone>(v: &[T], rows: &[usize]) -> Vec<T> {
    rows.iter().map(|&i| v[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_samples_four_positives() {
        let labels = [true, true, true, true, false, false, false, false, false, false];
        let plan = stratified_folds(&labels, 5, 3).unwrap();
        let mut pos = vec![0; 5];
        let mut size = vec![0; 5];
        for (i, &f) in plan.assignment.iter().enumerate() {
            size[f] += 1;
            pos[f] += labels[i] as usize;
        }
        assert_eq!(size, [2; 5]);
        let mut sorted = pos.clone();
        sorted.sort();
        assert_eq!(sorted, [0, 1, 1, 1, 1]);
        assert_eq!(plan, stratified_folds(&labels, 5, 3).unwrap());
    }

    #[test]
    fn balanced_hundred() {
        let labels: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        let plan = stratified_folds(&labels, 5, 9).unwrap();
        for f in 0..5 {
            let t = plan.test_indices(f);
            assert_eq!(t.len(), 20);
            assert_eq!(t.iter().filter(|&&i| labels[i]).count(), 10);
        }
        assert!(stratified_folds(&labels[..3], 5, 0).is_err());
    }

    #[test]
    fn standardizer_moments() {
        let x = Array2::from_shape_fn((50, 3), |(i, j)| if j == 2 { 4.0 } else { (i * (j + 1)) as f64 * 0.37 + j as f64 });
        let s = Standardizer::fit(x.view());
        let z = s.transform(x.view());
        for j in 0..2 {
            let c = z.column(j);
            let m = c.mean().unwrap();
            let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 50.0).sqrt();
            assert!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
        }
        assert!(z.column(2).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn validation_split_is_disjoint_and_stratified() {
        let labels: Vec<bool> = (0..80).map(|i| i % 4 == 0).collect();
        let idx: Vec<usize> = (0..80).collect();
        let (tr, va) = validation_split(&idx, &labels, 0.125, 1);
        assert_eq!(tr.len() + va.len(), 80);
        assert_eq!(va.len(), 11);
        assert!(va.iter().all(|i| !tr.contains(i)));
        assert_eq!(va.iter().filter(|&&i| labels[i]).count(), 3);
    }

    proptest! {
        #[test]
        fn plan_is_a_balanced_partition(labels in prop::collection::vec(any::<bool>(), 5..200), k in 2usize..6, seed in any::<u64>()) {
            let plan = stratified_folds(&labels, k, seed).unwrap();
            let p = labels.iter().filter(|&&l| l).count() as f64;
            let mut seen = vec![0; labels.len()];
            for f in 0..k {
                let t = plan.test_indices(f);
                for &i in &t { seen[i] += 1; }
                let pos = t.iter().filter(|&&i| labels[i]).count() as f64;
                prop_assert!((pos - p / k as f64).abs() <= 1.0);
                prop_assert!((t.len() as f64 - labels.len() as f64 / k as f64).abs() <= 1.0);
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }
}
