//! Feature sets A, B and C as hourly episode tensors over the first 24 or
//! 48 hours of the ICU stay, imputation, and summary statistics for
//! learners that cannot consume sequences.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::clean::{AggMode, CleanConfig, CleanEvent};
use crate::container::{self, ContainerError};
use crate::ingest::{AdmissionRecord, ServiceRecord, SourceTable};
use crate::types::{AdmissionId, ItemId, ItemIdRepr, Timestamp, SECONDS_PER_HOUR};

const BUNDLED_A: &str = include_str!("../config/features_a.toml");
const BUNDLED_B: &str = include_str!("../config/features_b.toml");
const BUNDLED_C: &str = include_str!("../config/features_c.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureSetId {
    A,
    B,
    C,
}

impl FeatureSetId {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "A" | "a" => Some(FeatureSetId::A),
            "B" | "b" => Some(FeatureSetId::B),
            "C" | "c" => Some(FeatureSetId::C),
            _ => None,
        }
    }
}

impl fmt::Display for FeatureSetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FeatureSetId::A => "A",
            FeatureSetId::B => "B",
            FeatureSetId::C => "C",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("feature config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("feature config: {0}")]
    Invalid(String),
    #[error("feature {feature}: fully missing row and no training mean supplied")]
    MissingTrainMean { feature: usize },
    #[error("tensor file: {0}")]
    Container(#[from] ContainerError),
    #[error("tensor file: {0}")]
    Io(#[from] std::io::Error),
    #[error("tensor manifest: {0}")]
    Manifest(String),
}

/// How a feature's hour-bucket value is formed from its items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Merge {
    /// Items pooled and aggregated with the feature's mode.
    Plain,
    /// Sum of three component means; missing unless all three are observed.
    GcsSum { parts: Vec<Vec<ItemId>> },
    /// Numerator mean over denominator mean. Denominator readings above 1
    /// are percentages.
    Ratio { numerator: Vec<ItemId>, denominator: Vec<ItemId> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalFeature {
    pub name: String,
    pub source: SourceTable,
    pub mode: AggMode,
    pub merge: Merge,
    /// Plain items; empty for merged features.
    pub items: Vec<ItemId>,
    pub fahrenheit_items: Vec<ItemId>,
    pub clamp: Option<(f64, f64)>,
    /// Item ids not confirmed against a data dictionary.
    pub placeholder: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub set_id: FeatureSetId,
    pub drop_negative: bool,
    pub temporal: Vec<TemporalFeature>,
    pub window_hours: usize,
}

pub const STATIC_FEATURES: [&str; 7] =
    ["age", "admission_scheduled_surgical", "admission_medical", "admission_unscheduled_surgical", "aids", "hematologic_malignancy", "metastatic_cancer"];

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFeature {
    name: String,
    source: SourceTable,
    #[serde(default)]
    merge: Option<String>,
    #[serde(default)]
    items: Vec<ItemIdRepr>,
    #[serde(default)]
    fahrenheit_items: Vec<ItemIdRepr>,
    #[serde(default)]
    parts: Vec<Vec<ItemIdRepr>>,
    #[serde(default)]
    numerator: Vec<ItemIdRepr>,
    #[serde(default)]
    denominator: Vec<ItemIdRepr>,
    clamp: Option<[f64; 2]>,
    agg: Option<AggMode>,
    #[serde(default)]
    placeholder: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    set_id: String,
    drop_negative: bool,
    feature: Vec<RawFeature>,
}

fn ids(v: Vec<ItemIdRepr>) -> Vec<ItemId> {
    v.into_iter().map(|i| i.0).collect()
}

impl FeatureSpec {
    pub fn bundled(set: FeatureSetId, window_hours: usize) -> Self {
        let src = match set {
            FeatureSetId::A => BUNDLED_A,
            FeatureSetId::B => BUNDLED_B,
            FeatureSetId::C => BUNDLED_C,
        };
        Self::from_toml_str(src, window_hours).expect("bundled feature config is valid")
    }

    pub fn from_toml_str(s: &str, window_hours: usize) -> Result<Self, FeatureError> {
        if window_hours != 24 && window_hours != 48 {
            return Err(FeatureError::Invalid(format!("window must be 24 or 48 hours, got {window_hours}")));
        }
        let raw: RawSpec = toml::from_str(s)?;
        let set_id = FeatureSetId::parse(&raw.set_id).ok_or_else(|| FeatureError::Invalid(format!("unknown set id {:?}", raw.set_id)))?;
        let mut temporal = Vec::with_capacity(raw.feature.len());
        for f in raw.feature {
            let bad = |m: &str| FeatureError::Invalid(format!("feature {}: {m}", f.name));
            let merge = match f.merge.as_deref() {
                None | Some("plain") => {
                    if f.items.is_empty() && f.fahrenheit_items.is_empty() {
                        return Err(bad("no items"));
                    }
                    Merge::Plain
                }
                Some("gcs_sum") => {
                    if f.parts.len() != 3 || f.parts.iter().any(|p| p.is_empty()) {
                        return Err(bad("gcs_sum needs three non-empty parts"));
                    }
                    Merge::GcsSum { parts: f.parts.into_iter().map(ids).collect() }
                }
                Some("ratio") => {
                    if f.numerator.is_empty() || f.denominator.is_empty() {
                        return Err(bad("ratio needs numerator and denominator items"));
                    }
                    Merge::Ratio { numerator: ids(f.numerator), denominator: ids(f.denominator) }
                }
                Some(other) => return Err(bad(&format!("unknown merge {other:?}"))),
            };
            let clamp = match f.clamp {
                Some([lo, hi]) if lo <= hi => Some((lo, hi)),
                Some(_) => return Err(bad("clamp lo > hi")),
                None => None,
            };
            temporal.push(TemporalFeature {
                mode: f.agg.unwrap_or_else(|| CleanConfig::default_mode(f.source)),
                name: f.name,
                source: f.source,
                merge,
                items: ids(f.items),
                fahrenheit_items: ids(f.fahrenheit_items),
                clamp,
                placeholder: f.placeholder,
            });
        }
        let mut names: Vec<&str> = temporal.iter().map(|f| f.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(FeatureError::Invalid("duplicate feature name".into()));
        }
        Ok(FeatureSpec { set_id, drop_negative: raw.drop_negative, temporal, window_hours })
    }

    pub fn temporal_names(&self) -> Vec<String> {
        self.temporal.iter().map(|f| f.name.clone()).collect()
    }

    pub fn n_temporal(&self) -> usize {
        self.temporal.len()
    }

    /// Feature count as tabulated: temporal features plus the five static
    /// variables (age, admission type, three chronic diseases).
    pub fn n_features(&self) -> usize {
        self.temporal.len() + 5
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.temporal.iter().position(|f| f.name == name)
    }

    /// Every item this spec reads.
    pub fn all_items(&self) -> Vec<ItemId> {
        let mut out = Vec::new();
        for f in &self.temporal {
            out.extend(f.items.iter().cloned());
            out.extend(f.fahrenheit_items.iter().cloned());
            match &f.merge {
                Merge::Plain => {}
                Merge::GcsSum { parts } => parts.iter().for_each(|p| out.extend(p.iter().cloned())),
                Merge::Ratio { numerator, denominator } => {
                    out.extend(numerator.iter().cloned());
                    out.extend(denominator.iter().cloned());
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Plain,
    Fahrenheit,
    Part(usize),
    Numerator,
    Denominator,
}

/// Item → (feature, role) lookup for one spec.
#[derive(Debug, Clone)]
pub struct FeatureIndex {
    map: HashMap<ItemId, Vec<(usize, Role)>>,
}

impl FeatureIndex {
    pub fn new(spec: &FeatureSpec) -> Self {
        let mut map: HashMap<ItemId, Vec<(usize, Role)>> = HashMap::new();
        for (fi, f) in spec.temporal.iter().enumerate() {
            let mut add = |item: &ItemId, role| map.entry(item.clone()).or_default().push((fi, role));
            f.items.iter().for_each(|i| add(i, Role::Plain));
            f.fahrenheit_items.iter().for_each(|i| add(i, Role::Fahrenheit));
            match &f.merge {
                Merge::Plain => {}
                Merge::GcsSum { parts } => {
                    for (k, p) in parts.iter().enumerate() {
                        p.iter().for_each(|i| add(i, Role::Part(k)));
                    }
                }
                Merge::Ratio { numerator, denominator } => {
                    numerator.iter().for_each(|i| add(i, Role::Numerator));
                    denominator.iter().for_each(|i| add(i, Role::Denominator));
                }
            }
        }
        FeatureIndex { map }
    }
}

pub fn fahrenheit_to_celsius(f: f64) -> f64 {
    (f - 32.0) * 5.0 / 9.0
}

fn fraction_of_inspired(v: f64) -> f64 {
    if v > 1.0 {
        v / 100.0
    } else {
        v
    }
}

/// One hourly series before imputation.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    /// NaN where unobserved.
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
    /// Events contributing to each bucket.
    pub counts: Vec<u32>,
}

fn bucket_of(t: Timestamp, intime: Timestamp, window_hours: usize) -> Option<usize> {
    let dt = t.0 - intime.0;
    if dt < 0 {
        return None;
    }
    let h = (dt / SECONDS_PER_HOUR) as usize;
    (h < window_hours).then_some(h)
}

/// Bucket `h` holds events with `intime + h ≤ t < intime + h + 1` hours.
pub fn resample_hourly(series: &[(Timestamp, f64)], mode: AggMode, window_hours: usize, intime: Timestamp) -> Resampled {
    let mut sums = vec![0.0; window_hours];
    let mut counts = vec![0u32; window_hours];
    for &(t, v) in series {
        if let Some(h) = bucket_of(t, intime, window_hours) {
            sums[h] += v;
            counts[h] += 1;
        }
    }
    let values = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| match (c, mode) {
            (0, _) => f64::NAN,
            (_, AggMode::Sum) => s,
            (_, AggMode::Mean) => s / c as f64,
        })
        .collect();
    Resampled { values, observed: counts.iter().map(|&c| c > 0).collect(), counts }
}

/// Hourly tensor for one admission. `temporal` is `[feature × hour]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTensor {
    pub admission_id: AdmissionId,
    pub window_hours: usize,
    pub temporal: Array2<f64>,
    /// Pre-imputation observability, same shape as `temporal`.
    pub observed: Array2<bool>,
    pub static_features: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildTally {
    pub unmatched_events: u64,
    pub outside_window: u64,
    pub dropped_negative: u64,
    pub dropped_clamp: u64,
    pub used_events: u64,
}

impl BuildTally {
    pub fn merge(&mut self, o: &BuildTally) {
        self.unmatched_events += o.unmatched_events;
        self.outside_window += o.outside_window;
        self.dropped_negative += o.dropped_negative;
        self.dropped_clamp += o.dropped_clamp;
        self.used_events += o.used_events;
    }
}

#[derive(Clone, Copy, Default)]
struct Acc {
    sum: f64,
    n: u32,
}

impl Acc {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn mean(self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }

    fn value(self, mode: AggMode) -> Option<f64> {
        match mode {
            AggMode::Mean => self.mean(),
            AggMode::Sum => (self.n > 0).then_some(self.sum),
        }
    }
}

const SLOTS: usize = 3;

/// Builds the raw (unimputed) tensor for one admission. Unobserved cells
/// hold NaN.
pub fn build_episode(
    spec: &FeatureSpec,
    index: &FeatureIndex,
    admission_id: AdmissionId,
    intime: Timestamp,
    events: &[CleanEvent],
    static_features: Vec<f64>,
) -> (EpisodeTensor, BuildTally) {
    let nf = spec.temporal.len();
    let w = spec.window_hours;
    let mut acc = vec![Acc::default(); nf * SLOTS * w];
    let slot = |f: usize, s: usize, h: usize| (f * SLOTS + s) * w + h;
    let mut tally = BuildTally::default();
    for e in events {
        let Some(targets) = index.map.get(&e.item_id) else {
            tally.unmatched_events += 1;
            continue;
        };
        let Some(h) = bucket_of(e.charttime, intime, w) else {
            tally.outside_window += 1;
            continue;
        };
        for &(fi, role) in targets {
            let f = &spec.temporal[fi];
            let mut v = e.value;
            if spec.drop_negative && v < 0.0 {
                tally.dropped_negative += 1;
                continue;
            }
            let s = match role {
                Role::Plain => 0,
                Role::Fahrenheit => {
                    v = fahrenheit_to_celsius(v);
                    0
                }
                Role::Part(k) => k,
                Role::Numerator => 0,
                Role::Denominator => {
                    v = fraction_of_inspired(v);
                    1
                }
            };
            let per_event_clamp = matches!(role, Role::Plain | Role::Fahrenheit);
            if per_event_clamp {
                if let Some((lo, hi)) = f.clamp {
                    if !(lo..=hi).contains(&v) {
                        tally.dropped_clamp += 1;
                        continue;
                    }
                }
            }
            acc[slot(fi, s, h)].add(v);
            tally.used_events += 1;
        }
    }

    let mut temporal = Array2::from_elem((nf, w), f64::NAN);
    let mut observed = Array2::from_elem((nf, w), false);
    for (fi, f) in spec.temporal.iter().enumerate() {
        for h in 0..w {
            let value = match &f.merge {
                Merge::Plain => acc[slot(fi, 0, h)].value(f.mode),
                Merge::GcsSum { .. } => {
                    let parts: Option<Vec<f64>> = (0..3).map(|k| acc[slot(fi, k, h)].mean()).collect();
                    parts.map(|p| p.iter().sum())
                }
                Merge::Ratio { .. } => match (acc[slot(fi, 0, h)].mean(), acc[slot(fi, 1, h)].mean()) {
                    (Some(n), Some(d)) if d > 0.0 => Some(n / d),
                    _ => None,
                },
            };
            let value = match (value, f.clamp, &f.merge) {
                (Some(v), Some((lo, hi)), Merge::GcsSum { .. } | Merge::Ratio { .. }) if !(lo..=hi).contains(&v) => {
                    tally.dropped_clamp += 1;
                    None
                }
                (v, _, _) => v,
            };
            if let Some(v) = value.filter(|v| v.is_finite()) {
                temporal[[fi, h]] = v;
                observed[[fi, h]] = true;
            }
        }
    }
    (EpisodeTensor { admission_id, window_hours: w, temporal, observed, static_features }, tally)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AdmissionCategory {
    ScheduledSurgical,
    Medical,
    UnscheduledSurgical,
}

pub fn is_surgical_service(service: &str) -> bool {
    let s = service.trim().to_ascii_uppercase();
    s.ends_with("SURG") || s == "ORTHO"
}

/// Surgical when a surgical service is recorded before `intime + 24h`;
/// scheduled when the admission type is elective.
pub fn admission_category(admission: &AdmissionRecord, services: &[&ServiceRecord], intime: Timestamp) -> AdmissionCategory {
    let cutoff = intime.plus_seconds(24 * SECONDS_PER_HOUR);
    let surgical = services.iter().any(|s| s.transfertime <= cutoff && is_surgical_service(&s.curr_service));
    let elective = admission.admission_type.trim().eq_ignore_ascii_case("ELECTIVE");
    match (surgical, elective) {
        (false, _) => AdmissionCategory::Medical,
        (true, true) => AdmissionCategory::ScheduledSurgical,
        (true, false) => AdmissionCategory::UnscheduledSurgical,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChronicDiseases {
    pub aids: bool,
    pub hematologic_malignancy: bool,
    pub metastatic_cancer: bool,
}

fn numeric_prefix(code: &str) -> Option<u16> {
    code.trim().get(..3).filter(|p| p.bytes().all(|b| b.is_ascii_digit()))?.parse().ok()
}

pub fn chronic_diseases<'a, I: IntoIterator<Item = &'a str>>(codes: I) -> ChronicDiseases {
    let mut c = ChronicDiseases::default();
    for p in codes.into_iter().filter_map(numeric_prefix) {
        c.aids |= (42..=44).contains(&p);
        c.hematologic_malignancy |= (200..=208).contains(&p);
        c.metastatic_cancer |= (196..=199).contains(&p);
    }
    c
}

/// Static vector in [`STATIC_FEATURES`] order.
pub fn encode_static(age: f64, category: AdmissionCategory, chronic: ChronicDiseases) -> Vec<f64> {
    let one = |b: bool| b as u8 as f64;
    vec![
        age,
        one(category == AdmissionCategory::ScheduledSurgical),
        one(category == AdmissionCategory::Medical),
        one(category == AdmissionCategory::UnscheduledSurgical),
        one(chronic.aids),
        one(chronic.hematologic_malignancy),
        one(chronic.metastatic_cancer),
    ]
}

/// Decodes the category from a static vector.
pub fn static_category(static_features: &[f64]) -> AdmissionCategory {
    if static_features[1] > 0.5 {
        AdmissionCategory::ScheduledSurgical
    } else if static_features[3] > 0.5 {
        AdmissionCategory::UnscheduledSurgical
    } else {
        AdmissionCategory::Medical
    }
}

pub fn static_chronic(static_features: &[f64]) -> ChronicDiseases {
    ChronicDiseases { aids: static_features[4] > 0.5, hematologic_malignancy: static_features[5] > 0.5, metastatic_cancer: static_features[6] > 0.5 }
}

/// Forward fill, then backward fill, per feature row; fully missing rows
/// take the supplied training mean. Observed cells are never modified.
pub fn impute(matrix: &Array2<f64>, observed: &Array2<bool>, train_means: Option<&[f64]>) -> Result<Array2<f64>, FeatureError> {
    let mut out = matrix.clone();
    for (fi, (mut row, obs)) in out.rows_mut().into_iter().zip(observed.rows()).enumerate() {
        let Some(first) = obs.iter().position(|&o| o) else {
            let mean = train_means.and_then(|m| m.get(fi).copied()).ok_or(FeatureError::MissingTrainMean { feature: fi })?;
            row.fill(mean);
            continue;
        };
        let mut last = row[first];
        for h in 0..row.len() {
            if obs[h] {
                last = row[h];
            } else if h < first {
                row[h] = row[first];
            } else {
                row[h] = last;
            }
        }
    }
    Ok(out)
}

impl EpisodeTensor {
    /// Imputed copy of the temporal matrix.
    pub fn imputed(&self, train_means: Option<&[f64]>) -> Result<Array2<f64>, FeatureError> {
        impute(&self.temporal, &self.observed, train_means)
    }

    pub fn n_temporal(&self) -> usize {
        self.temporal.nrows()
    }
}

/// Mean of observed cells per temporal feature over the given episodes;
/// 0 for features never observed.
pub fn temporal_train_means(episodes: &[&EpisodeTensor]) -> Vec<f64> {
    let nf = episodes.first().map(|e| e.n_temporal()).unwrap_or(0);
    let mut sum = vec![0.0; nf];
    let mut n = vec![0u64; nf];
    for e in episodes {
        for ((fi, h), &v) in e.temporal.indexed_iter() {
            if e.observed[[fi, h]] {
                sum[fi] += v;
                n[fi] += 1;
            }
        }
    }
    sum.iter().zip(&n).map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect()
}

pub const SUMMARY_STATS: [&str; 7] = ["min", "max", "mean", "std", "first", "last", "count"];

/// Per temporal feature `[min, max, mean, std, first, last, count]` over
/// observed cells; the first six are NaN when nothing was observed.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryFeatures {
    pub stats: Vec<[f64; 7]>,
    pub static_features: Vec<f64>,
}

pub fn summarize(tensor: &EpisodeTensor) -> SummaryFeatures {
    let stats = tensor
        .temporal
        .rows()
        .into_iter()
        .zip(tensor.observed.rows())
        .map(|(row, obs)| {
            let vals: Vec<f64> = row.iter().zip(obs.iter()).filter(|(_, &o)| o).map(|(&v, _)| v).collect();
            if vals.is_empty() {
                let mut s = [f64::NAN; 7];
                s[6] = 0.0;
                return s;
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            [
                vals.iter().copied().fold(f64::INFINITY, f64::min),
                vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean,
                var.sqrt(),
                vals[0],
                vals[vals.len() - 1],
                n,
            ]
        })
        .collect();
    SummaryFeatures { stats, static_features: tensor.static_features.clone() }
}

impl SummaryFeatures {
    /// Flat row: 7 statistics per temporal feature, then the static vector.
    pub fn to_row(&self) -> Vec<f64> {
        let mut r: Vec<f64> = self.stats.iter().flatten().copied().collect();
        r.extend_from_slice(&self.static_features);
        r
    }
}

pub fn summary_feature_names(spec: &FeatureSpec) -> Vec<String> {
    let mut out = Vec::with_capacity(spec.temporal.len() * 7 + STATIC_FEATURES.len());
    for f in &spec.temporal {
        out.extend(SUMMARY_STATS.iter().map(|s| format!("{}_{s}", f.name)));
    }
    out.extend(STATIC_FEATURES.iter().map(|s| s.to_string()));
    out
}

const TENSOR_MAGIC: [u8; 4] = *b"ICBT";
const TENSOR_VERSION: u32 = 1;

/// Sidecar describing a tensor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorManifest {
    pub format_version: u32,
    pub set_id: FeatureSetId,
    pub window_hours: usize,
    pub temporal_features: Vec<String>,
    pub static_features: Vec<String>,
    pub n_episodes: usize,
    /// Layout of one record.
    pub record_layout: String,
    pub mask_encoding: String,
    pub payload_sha256: String,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

fn encode_tensors(episodes: &[EpisodeTensor]) -> Vec<u8> {
    let mut buf = Vec::new();
    for e in episodes {
        buf.extend_from_slice(&e.admission_id.0.to_le_bytes());
        for v in e.temporal.iter() {
            buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        buf.extend(e.observed.iter().map(|&o| o as u8));
        for v in &e.static_features {
            buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    buf
}

/// Writes the tensor container and its sidecar manifest. Values are stored
/// as raw IEEE-754 bits, so the round trip is bit-exact.
pub fn write_tensors(path: &Path, spec: &FeatureSpec, episodes: &[EpisodeTensor]) -> Result<TensorManifest, FeatureError> {
    let nf = spec.temporal.len();
    for e in episodes {
        if e.temporal.dim() != (nf, spec.window_hours) || e.static_features.len() != STATIC_FEATURES.len() {
            return Err(FeatureError::Manifest(format!("episode {} does not match the feature spec", e.admission_id)));
        }
    }
    let payload = encode_tensors(episodes);
    let manifest = TensorManifest {
        format_version: TENSOR_VERSION,
        set_id: spec.set_id,
        window_hours: spec.window_hours,
        temporal_features: spec.temporal_names(),
        static_features: STATIC_FEATURES.iter().map(|s| s.to_string()).collect(),
        n_episodes: episodes.len(),
        record_layout: "admission_id u64 | temporal f64[feature][hour] | observed u8[feature][hour] | static f64[]".into(),
        mask_encoding: "u8 per cell: 1 observed, 0 missing".into(),
        payload_sha256: container::content_hash(&payload),
    };
    container::write_file(path, TENSOR_MAGIC, TENSOR_VERSION, &payload)?;
    fs::write(manifest_path(path), serde_json::to_vec_pretty(&manifest).map_err(ContainerError::from)?)?;
    Ok(manifest)
}

pub fn read_tensors(path: &Path) -> Result<(TensorManifest, Vec<EpisodeTensor>), FeatureError> {
    let manifest: TensorManifest = serde_json::from_slice(&fs::read(manifest_path(path))?).map_err(|e| FeatureError::Manifest(e.to_string()))?;
    let (_, payload) = container::read_file(path, TENSOR_MAGIC, TENSOR_VERSION)?;
    if container::content_hash(&payload) != manifest.payload_sha256 {
        return Err(FeatureError::Manifest("payload does not match manifest".into()));
    }
    let (nf, w, ns) = (manifest.temporal_features.len(), manifest.window_hours, manifest.static_features.len());
    let rec = 8 + nf * w * 9 + ns * 8;
    if payload.len() != rec * manifest.n_episodes {
        return Err(FeatureError::Manifest("payload length does not match manifest".into()));
    }
    let f64_at = |b: &[u8], i: usize| f64::from_bits(u64::from_le_bytes(b[i..i + 8].try_into().unwrap()));
    let episodes = payload
        .chunks_exact(rec)
        .map(|b| {
            let admission_id = AdmissionId(u64::from_le_bytes(b[0..8].try_into().unwrap()));
            let t0 = 8;
            let m0 = t0 + nf * w * 8;
            let s0 = m0 + nf * w;
            let temporal = Array2::from_shape_fn((nf, w), |(f, h)| f64_at(b, t0 + (f * w + h) * 8));
            let observed = Array2::from_shape_fn((nf, w), |(f, h)| b[m0 + f * w + h] != 0);
            let static_features = (0..ns).map(|i| f64_at(b, s0 + i * 8)).collect();
            EpisodeTensor { admission_id, window_hours: w, temporal, observed, static_features }
        })
        .collect();
    Ok((manifest, episodes))
}
