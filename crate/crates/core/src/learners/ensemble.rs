//! Gradient-boosted trees and bootstrap forests.

use ndarray::ArrayView2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, presort, Tree, TreeParams};
use crate::linalg::{bce_with_logit, logit, sigmoid};
use crate::types::{derive_seed, rng_from};

fn rows(x: ArrayView2<f64>) -> Vec<Vec<f64>> {
    x.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub logistic: bool,
    pub init: f64,
    pub trees: Vec<Tree>,
}

impl GbmModel {
    pub fn raw(&self, row: &[f64]) -> f64 {
        self.init + self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        rows(x).iter().map(|r| if self.logistic { sigmoid(self.raw(r)) } else { self.raw(r) }).collect()
    }
}

fn mean_loss(f: &[f64], y: &[f64], logistic: bool) -> f64 {
    let s: f64 =
        if logistic { f.iter().zip(y).map(|(&z, &t)| bce_with_logit(z, t)).sum() } else { f.iter().zip(y).map(|(&z, &t)| 0.5 * (z - t) * (z - t)).sum() };
    s / y.len() as f64
}

/// Newton boosting. Each round's tree is shrunk by the learning rate, and
/// halved further while it would raise the training loss, so the returned
/// loss curve (initial loss, then one entry per round) never increases.
pub fn fit_gbm(x: ArrayView2<f64>, y: &[f64], logistic: bool, p: &GbmParams, seed: u64) -> (GbmModel, Vec<f64>) {
    let n = y.len();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let init = if logistic { logit(ybar.clamp(1e-6, 1.0 - 1e-6)) } else { ybar };
    let sorted = presort(x);
    let xr = rows(x);
    let params = TreeParams { max_depth: p.max_depth, min_leaf: p.min_leaf, max_features: x.ncols() };
    let mut rng = rng_from(seed);
    let mut f = vec![init; n];
    let mut curve = vec![mean_loss(&f, y, logistic)];
    let mut trees = Vec::with_capacity(p.n_trees);
    let (mut t, mut w) = (vec![0.0; n], vec![1.0; n]);
    for _ in 0..p.n_trees {
        for i in 0..n {
            if logistic {
                let q = sigmoid(f[i]);
                w[i] = q * (1.0 - q);
                t[i] = if w[i] > 0.0 { (y[i] - q) / w[i] } else { 0.0 };
            } else {
                t[i] = y[i] - f[i];
            }
        }
        let mut tree = grow(x, &t, &w, &sorted, &params, &mut rng);
        let step: Vec<f64> = xr.iter().map(|r| tree.predict_row(r)).collect();
        let prev = *curve.last().unwrap();
        let mut scale = p.learning_rate;
        let mut accepted = None;
        for _ in 0..30 {
            let cand: Vec<f64> = f.iter().zip(&step).map(|(a, s)| a + scale * s).collect();
            let loss = mean_loss(&cand, y, logistic);
            if loss <= prev {
                accepted = Some((cand, loss));
                break;
            }
            scale /= 2.0;
        }
        match accepted {
            Some((cand, loss)) => {
                f = cand;
                curve.push(loss);
                tree.scale_leaves(scale);
            }
            None => {
                curve.push(prev);
                tree.scale_leaves(0.0);
            }
        }
        trees.push(tree);
    }
    (GbmModel { logistic, init, trees }, curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features per split; `>= d` gives plain bagging.
    pub max_features: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
}

impl ForestModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let k = self.trees.len() as f64;
        rows(x).iter().map(|r| self.trees.iter().map(|t| t.predict_row(r)).sum::<f64>() / k).collect()
    }
}

/// Tree `j` draws its bootstrap and feature subsets from
/// `derive_seed(seed, j)`, so results do not depend on thread scheduling.
pub fn fit_forest(x: ArrayView2<f64>, y: &[f64], p: &ForestParams, seed: u64) -> ForestModel {
    let n = y.len();
    let sorted = presort(x);
    let params = TreeParams { max_depth: p.max_depth, min_leaf: p.min_leaf, max_features: p.max_features };
    let trees = (0..p.n_trees)
        .into_par_iter()
        .map(|j| {
            let mut rng = rng_from(derive_seed(seed, j as u64));
            let mut w = vec![0.0; n];
            for _ in 0..n {
                w[rng.random_range(0..n)] += 1.0;
            }
            grow(x, y, &w, &sorted, &params, &mut rng)
        })
        .collect();
    ForestModel { trees }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auroc;
    use ndarray::Array2;

    fn xor_data(n: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = rng_from(seed);
        let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        let y = (0..n).map(|i| ((x[[i, 0]] > 0.0) != (x[[i, 1]] > 0.0)) as u8 as f64).collect();
        (x, y)
    }

    #[test]
    fn boosting_loss_is_monotone_and_learns_xor() {
        let (x, y) = xor_data(300, 1);
        let p = GbmParams { n_trees: 60, max_depth: 2, learning_rate: 0.3, min_leaf: 1 };
        let (m, curve) = fit_gbm(x.view(), &y, true, &p, 0);
        assert_eq!(curve.len(), 61);
        assert!(curve.windows(2).all(|w| w[1] <= w[0]));
        let (xt, yt) = xor_data(300, 2);
        let labels: Vec<bool> = yt.iter().map(|&v| v > 0.5).collect();
        assert!(auroc(&m.predict(xt.view()), &labels).unwrap() > 0.9);
    }

    #[test]
    fn squared_loss_boosting_is_monotone() {
        let (x, _) = xor_data(200, 3);
        let y: Vec<f64> = (0..200).map(|i| (3.0 * x[[i, 0]]).sin() + x[[i, 2]]).collect();
        let p = GbmParams { n_trees: 40, max_depth: 3, learning_rate: 0.1, min_leaf: 1 };
        let (_, curve) = fit_gbm(x.view(), &y, false, &p, 0);
        assert!(curve.windows(2).all(|w| w[1] <= w[0]));
        assert!(curve[40] < 0.5 * curve[0]);
    }

    #[test]
    fn forest_with_all_features_is_bagging_and_deterministic() {
        let (x, y) = xor_data(120, 4);
        let p = ForestParams { n_trees: 1, max_features: 3, max_depth: usize::MAX, min_leaf: 1 };
        let a = fit_forest(x.view(), &y, &p, 9);
        let b = fit_forest(x.view(), &y, &ForestParams { max_features: 10, ..p }, 9);
        assert_eq!(a.predict(x.view()), b.predict(x.view()));
        let p = ForestParams { n_trees: 20, max_features: 1, max_depth: usize::MAX, min_leaf: 1 };
        assert_eq!(fit_forest(x.view(), &y, &p, 3), fit_forest(x.view(), &y, &p, 3));
        assert!(fit_forest(x.view(), &y, &p, 3).predict(x.view()).iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
