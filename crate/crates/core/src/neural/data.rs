//! Turning episode tensors into standardized network inputs.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::network::{NetInput, Network};
use super::NeuralError;
use crate::features::{temporal_train_means, EpisodeTensor};
use crate::folds::{Standardizer, STD_FLOOR};

/// Training-fold statistics: imputation means for never-observed series,
/// and per-feature standardization of hourly and static values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScaler {
    pub train_means: Vec<f64>,
    pub temporal: Standardizer,
    pub statics: Standardizer,
}

impl EpisodeScaler {
    pub fn fit(train: &[&EpisodeTensor]) -> Result<Self, NeuralError> {
        let train_means = temporal_train_means(train);
        let p = train_means.len();
        let mut sum = vec![0.0; p];
        let mut count = 0usize;
        let imputed: Vec<Array2<f64>> = train.iter().map(|e| e.imputed(Some(&train_means))).collect::<Result<_, _>>()?;
        for m in &imputed {
            for (f, row) in m.rows().into_iter().enumerate() {
                sum[f] += row.sum();
            }
            count += m.ncols();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count.max(1) as f64).collect();
        let mut ss = vec![0.0; p];
        for m in &imputed {
            for (f, row) in m.rows().into_iter().enumerate() {
                ss[f] += row.iter().map(|v| (v - mean[f]) * (v - mean[f])).sum::<f64>();
            }
        }
        let std = ss.iter().map(|s| (s / count.max(1) as f64).sqrt().max(STD_FLOOR)).collect();
        let statics = Array2::from_shape_fn((train.len(), train.first().map(|e| e.static_features.len()).unwrap_or(0)), |(i, j)| train[i].static_features[j]);
        Ok(EpisodeScaler { train_means, temporal: Standardizer { mean, std }, statics: Standardizer::fit(statics.view()) })
    }

    /// Imputed, standardized `NetInput` (time-major temporal block).
    pub fn to_input(&self, episodes: &[&EpisodeTensor]) -> Result<NetInput, NeuralError> {
        let n = episodes.len();
        let t = episodes.first().map(|e| e.temporal.ncols()).unwrap_or(0);
        let p = self.train_means.len();
        let s = self.statics.mean.len();
        let mut temporal = Array3::zeros((t, n, p));
        let mut statics = Array2::zeros((n, s));
        for (i, e) in episodes.iter().enumerate() {
            if e.temporal.dim() != (p, t) || e.static_features.len() != s {
                return Err(NeuralError::ShapeMismatch(format!("episode {} has shape {:?}", e.admission_id.0, e.temporal.dim())));
            }
            let m = e.imputed(Some(&self.train_means))?;
            for ((f, h), &v) in m.indexed_iter() {
                temporal[[h, i, f]] = self.temporal.transform_value(f, v);
            }
            for (j, &v) in e.static_features.iter().enumerate() {
                statics[[i, j]] = self.statics.transform_value(j, v);
            }
        }
        NetInput::new(statics, temporal)
    }
}

/// Task outputs for one episode.
pub fn predict_mmdl(net: &Network, scaler: &EpisodeScaler, episode: &EpisodeTensor) -> Result<Vec<f64>, NeuralError> {
    let input = scaler.to_input(&[episode])?;
    Ok(net.predict(&input)?.row(0).to_vec())
}
