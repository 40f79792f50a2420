//! One-hot bucketing of continuous features for the categorized Super Learner.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::features::STATIC_FEATURES;
use crate::severity::SapsIIModel;

/// Bucket boundaries per input column; bucket `k` holds `breaks[k-1] <= v < breaks[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub breaks: Vec<Vec<f64>>,
}

/// Statistics whose values live on the physiological scale of the variable.
const VALUE_STATS: [&str; 5] = ["min", "max", "mean", "first", "last"];
const QUANTILES: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

impl BinSpec {
    /// Bucket index; NaN falls into bucket 0.
    pub fn bucket(breaks: &[f64], v: f64) -> usize {
        breaks.iter().take_while(|&&b| b <= v).count()
    }

    pub fn n_outputs(&self) -> usize {
        self.breaks.iter().map(|b| b.len() + 1).sum()
    }

    /// Breaks for summary-feature columns: the SAPS-II point-table
    /// boundaries where a variable has a table, `[0.5]` for 0/1 static
    /// indicators, and training-column quintiles otherwise.
    pub fn for_summary(names: &[String], model: &SapsIIModel, train: ArrayView2<f64>) -> BinSpec {
        let breaks = names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                if name == "age" {
                    return model.tables["age"].breaks.clone();
                }
                if STATIC_FEATURES.contains(&name.as_str()) {
                    return vec![0.5];
                }
                if let Some((var, stat)) = name.rsplit_once('_') {
                    if VALUE_STATS.contains(&stat) {
                        if let Some(t) = model.tables.get(var) {
                            return t.breaks.clone();
                        }
                    }
                }
                quantile_breaks(train.column(j).iter().copied())
            })
            .collect();
        BinSpec { breaks }
    }
}

/// Distinct empirical quintiles of the finite values.
pub fn quantile_breaks<I: Iterator<Item = f64>>(values: I) -> Vec<f64> {
    let mut v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return Vec::new();
    }
    v.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = QUANTILES.iter().map(|q| v[((v.len() - 1) as f64 * q).round() as usize]).collect();
    out.dedup();
    // A break at the minimum would leave bucket 0 empty.
    out.retain(|&b| b > v[0]);
    out
}

/// Replaces every column by one-hot indicators over its buckets.
pub fn categorize(x: ArrayView2<f64>, spec: &BinSpec) -> Array2<f64> {
    assert_eq!(x.ncols(), spec.breaks.len(), "bin spec width");
    let mut out = Array2::zeros((x.nrows(), spec.n_outputs()));
    let mut offset = 0;
    for (j, br) in spec.breaks.iter().enumerate() {
        for (i, &v) in x.column(j).iter().enumerate() {
            out[[i, offset + BinSpec::bucket(br, v)]] = 1.0;
        }
        offset += br.len() + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::severity::SeverityConfig;
    use ndarray::array;

    #[test]
    fn heart_rate_buckets() {
        let sev = SeverityConfig::bundled();
        let br = &sev.saps2.tables["heart_rate"].breaks;
        assert_eq!(BinSpec::bucket(br, 84.0), 2);
        assert_eq!(BinSpec::bucket(br, 70.0), 2);
        assert_eq!(BinSpec::bucket(br, 39.9), 0);
        assert_eq!(BinSpec::bucket(br, 500.0), 4);
        let x = array![[84.0], [70.0], [12.0]];
        let oh = categorize(x.view(), &BinSpec { breaks: vec![br.clone()] });
        assert_eq!(oh.row(0).to_vec(), [0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(oh.row(2).to_vec(), [1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn constant_feature_has_one_active_bucket() {
        let x = array![[3.0], [3.0], [3.0], [3.0]];
        let spec = BinSpec { breaks: vec![quantile_breaks(x.column(0).iter().copied())] };
        let oh = categorize(x.view(), &spec);
        assert_eq!(oh.ncols(), 1);
        assert!(oh.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn summary_spec_uses_point_tables() {
        let sev = SeverityConfig::bundled();
        let names: Vec<String> = ["heart_rate_mean", "heart_rate_std", "age", "aids"].iter().map(|s| s.to_string()).collect();
        let train = Array2::from_shape_fn((10, 4), |(i, j)| (i * (j + 1)) as f64);
        let spec = BinSpec::for_summary(&names, &sev.saps2, train.view());
        assert_eq!(spec.breaks[0], sev.saps2.tables["heart_rate"].breaks);
        assert_eq!(spec.breaks[1], vec![4.0, 8.0, 10.0, 14.0]);
        assert_eq!(spec.breaks[2], sev.saps2.tables["age"].breaks);
        assert_eq!(spec.breaks[3], vec![0.5]);
        let oh = categorize(train.view(), &spec);
        assert!(oh.rows().into_iter().all(|r| r.sum() == 4.0));
    }
}
