//! SAPS-II and SOFA scores over the first 24 hours, the fixed SAPS-II
//! mortality equation, and the logistic recalibrations (SOFA, New SAPS-II).

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::clean::CleanEvent;
use crate::features::{static_category, static_chronic, AdmissionCategory, EpisodeTensor, FeatureSpec};
use crate::glm::{fit_logistic, FitFlag, LinearModel};
use crate::linalg::sigmoid;
use crate::types::{AdmissionId, ItemId, ItemIdRepr, Timestamp, SECONDS_PER_HOUR};

pub const BUNDLED_SEVERITY_CONFIG: &str = include_str!("../config/severity.toml");

#[derive(Debug, thiserror::Error)]
pub enum SeverityError {
    #[error("severity config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("severity config: {0}")]
    Invalid(String),
    #[error("feature set lacks variable {0}")]
    MissingFeature(String),
    #[error("score fit needs both classes and at least two distinct scores")]
    DegenerateFit,
}

/// Half-open bucket table: `points[i]` for `breaks[i-1] <= v < breaks[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointTable {
    pub breaks: Vec<f64>,
    pub points: Vec<u32>,
}

impl PointTable {
    pub fn validate(&self, name: &str) -> Result<(), SeverityError> {
        if self.points.len() != self.breaks.len() + 1 {
            return Err(SeverityError::Invalid(format!("{name}: need one more point value than breaks")));
        }
        if self.breaks.windows(2).any(|w| !(w[0] < w[1])) || self.breaks.iter().any(|b| !b.is_finite()) {
            return Err(SeverityError::Invalid(format!("{name}: breaks must be finite and increasing")));
        }
        Ok(())
    }

    pub fn bucket(&self, v: f64) -> usize {
        self.breaks.iter().take_while(|&&b| b <= v).count()
    }

    pub fn points_for(&self, v: f64) -> u32 {
        self.points[self.bucket(v)]
    }

    /// Points of the worst value; 0 when nothing is observed.
    pub fn worst<I: IntoIterator<Item = f64>>(&self, values: I) -> Option<u32> {
        values.into_iter().filter(|v| v.is_finite()).map(|v| self.points_for(v)).max()
    }
}

/// SAPS-II components in score order.
pub const SAPS2_VARIABLES: [&str; 15] = [
    "age",
    "heart_rate",
    "systolic_bp",
    "temperature",
    "pf_ratio",
    "urine_output",
    "bun",
    "wbc",
    "potassium",
    "sodium",
    "bicarbonate",
    "bilirubin",
    "gcs",
    "chronic_disease",
    "admission_type",
];

/// The 12 physiological components read from the set A tensor.
const SAPS2_TEMPORAL: [&str; 12] =
    ["heart_rate", "systolic_bp", "temperature", "pf_ratio", "urine_output", "bun", "wbc", "potassium", "sodium", "bicarbonate", "bilirubin", "gcs"];

pub const SOFA_ORGANS: [&str; 6] = ["respiration", "coagulation", "liver", "cardiovascular", "cns", "renal"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChronicPoints {
    pub metastatic_cancer: u32,
    pub hematologic_malignancy: u32,
    pub aids: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionPoints {
    pub scheduled_surgical: u32,
    pub medical: u32,
    pub unscheduled_surgical: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SapsIIModel {
    pub intercept: f64,
    pub coef_linear: f64,
    pub coef_log: f64,
    pub tables: BTreeMap<String, PointTable>,
    pub chronic: ChronicPoints,
    pub admission: AdmissionPoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SofaItems {
    pub platelets: Vec<ItemIdRepr>,
    pub creatinine: Vec<ItemIdRepr>,
    pub mean_arterial_pressure: Vec<ItemIdRepr>,
    pub vasopressors: Vec<ItemIdRepr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SofaTables {
    pub respiration: PointTable,
    pub coagulation: PointTable,
    pub liver: PointTable,
    pub mean_arterial_pressure: PointTable,
    pub vasopressor_points: u32,
    pub cns: PointTable,
    pub creatinine: PointTable,
    pub urine_output: PointTable,
    pub items: SofaItems,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityConfig {
    pub saps2: SapsIIModel,
    pub sofa: SofaTables,
}

impl SeverityConfig {
    pub fn bundled() -> Self {
        Self::from_toml_str(BUNDLED_SEVERITY_CONFIG).expect("bundled severity config is valid")
    }

    pub fn from_toml_str(s: &str) -> Result<Self, SeverityError> {
        let c: SeverityConfig = toml::from_str(s)?;
        for v in SAPS2_VARIABLES.iter().filter(|v| !matches!(**v, "chronic_disease" | "admission_type")) {
            c.saps2.tables.get(*v).ok_or_else(|| SeverityError::Invalid(format!("saps2 table {v} missing")))?.validate(v)?;
        }
        let s = &c.sofa;
        for (name, t) in [
            ("respiration", &s.respiration),
            ("coagulation", &s.coagulation),
            ("liver", &s.liver),
            ("mean_arterial_pressure", &s.mean_arterial_pressure),
            ("cns", &s.cns),
            ("creatinine", &s.creatinine),
            ("urine_output", &s.urine_output),
        ] {
            t.validate(name)?;
            if t.points.iter().any(|&p| p > 4) {
                return Err(SeverityError::Invalid(format!("sofa {name}: subscores are 0..4")));
            }
        }
        if s.vasopressor_points > 4 {
            return Err(SeverityError::Invalid("sofa vasopressor points exceed 4".into()));
        }
        Ok(c)
    }
}

/// `logistic(-7.7631 + 0.0737·S + 0.9971·ln(1+S))` with the model's
/// coefficients.
pub fn saps2_mortality_with(model: &SapsIIModel, s: f64) -> f64 {
    sigmoid(model.intercept + model.coef_linear * s + model.coef_log * (1.0 + s).ln())
}

pub fn saps2_mortality(s: u32) -> f64 {
    sigmoid(-7.7631 + 0.0737 * s as f64 + 0.9971 * (1.0 + s as f64).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Saps2Breakdown {
    /// Points per [`SAPS2_VARIABLES`] entry.
    pub points: [u32; 15],
    pub total: u32,
    /// Variables scored 0 for lack of any observation.
    pub missing: Vec<String>,
}

/// Hours scored by the first-day scores.
pub const SCORE_HOURS: usize = 24;

/// SAPS-II from a set A episode (raw, pre-imputation) over its first 24
/// hours. Urine output is the 24-hour total of observed hours.
pub fn saps2_score(episode: &EpisodeTensor, spec: &FeatureSpec, model: &SapsIIModel) -> Result<Saps2Breakdown, SeverityError> {
    let hours = SCORE_HOURS.min(episode.window_hours);
    let mut points = [0u32; 15];
    let mut missing = Vec::new();
    points[0] = model.tables["age"].points_for(episode.static_features[0]);
    for (k, var) in SAPS2_TEMPORAL.iter().enumerate() {
        let fi = spec.feature_index(var).ok_or_else(|| SeverityError::MissingFeature(var.to_string()))?;
        let obs: Vec<f64> = (0..hours).filter(|&h| episode.observed[[fi, h]]).map(|h| episode.temporal[[fi, h]]).collect();
        let table = &model.tables[*var];
        let p = if *var == "urine_output" { (!obs.is_empty()).then(|| table.points_for(obs.iter().sum())) } else { table.worst(obs.iter().copied()) };
        points[k + 1] = p.unwrap_or_else(|| {
            missing.push(var.to_string());
            0
        });
    }
    let chronic = static_chronic(&episode.static_features);
    let c = &model.chronic;
    points[13] = [(chronic.metastatic_cancer, c.metastatic_cancer), (chronic.hematologic_malignancy, c.hematologic_malignancy), (chronic.aids, c.aids)]
        .iter()
        .filter(|(has, _)| *has)
        .map(|(_, p)| *p)
        .max()
        .unwrap_or(0);
    let a = &model.admission;
    points[14] = match static_category(&episode.static_features) {
        AdmissionCategory::ScheduledSurgical => a.scheduled_surgical,
        AdmissionCategory::Medical => a.medical,
        AdmissionCategory::UnscheduledSurgical => a.unscheduled_surgical,
    };
    Ok(Saps2Breakdown { total: points.iter().sum(), points, missing })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SofaBreakdown {
    /// Subscores per [`SOFA_ORGANS`] entry, each in 0..=4.
    pub subscores: [u32; 6],
    pub total: u32,
}

fn item_set(v: &[ItemIdRepr]) -> HashSet<ItemId> {
    v.iter().map(|i| i.0.clone()).collect()
}

/// SOFA over the first 24 hours: respiration, liver, CNS and urine from the
/// set A episode; platelets, creatinine, MAP and vasopressors from clean
/// events of the same admission.
pub fn sofa_score(
    episode: &EpisodeTensor,
    spec: &FeatureSpec,
    events: &[CleanEvent],
    intime: Timestamp,
    tables: &SofaTables,
) -> Result<SofaBreakdown, SeverityError> {
    let hours = SCORE_HOURS.min(episode.window_hours);
    let feature = |name: &str| -> Result<Vec<f64>, SeverityError> {
        let fi = spec.feature_index(name).ok_or_else(|| SeverityError::MissingFeature(name.to_string()))?;
        Ok((0..hours).filter(|&h| episode.observed[[fi, h]]).map(|h| episode.temporal[[fi, h]]).collect())
    };
    let end = intime.plus_seconds(SCORE_HOURS as i64 * SECONDS_PER_HOUR);
    let in_window: Vec<&CleanEvent> = events.iter().filter(|e| e.charttime >= intime && e.charttime < end).collect();
    let values = |items: &[ItemIdRepr]| {
        let set = item_set(items);
        in_window.iter().filter(|e| set.contains(&e.item_id)).map(|e| e.value).collect::<Vec<f64>>()
    };
    let it = &tables.items;
    let respiration = tables.respiration.worst(feature("pf_ratio")?).unwrap_or(0);
    let coagulation = tables.coagulation.worst(values(&it.platelets)).unwrap_or(0);
    let liver = tables.liver.worst(feature("bilirubin")?).unwrap_or(0);
    let pressor = values(&it.vasopressors).iter().any(|&v| v > 0.0);
    let map = tables.mean_arterial_pressure.worst(values(&it.mean_arterial_pressure)).unwrap_or(0);
    let cardiovascular = if pressor { map.max(tables.vasopressor_points) } else { map };
    let cns = tables.cns.worst(feature("gcs")?).unwrap_or(0);
    let urine = feature("urine_output")?;
    let renal_urine = if !urine.is_empty() { tables.urine_output.points_for(urine.iter().sum()) } else { 0 };
    let renal = tables.creatinine.worst(values(&it.creatinine)).unwrap_or(0).max(renal_urine);
    let subscores = [respiration, coagulation, liver, cardiovascular, cns, renal].map(|s| s.min(4));
    Ok(SofaBreakdown { total: subscores.iter().sum(), subscores })
}

/// Logistic fit of labels on a single score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLogistic {
    pub intercept: f64,
    pub slope: f64,
    pub flags: Vec<FitFlag>,
}

impl ScoreLogistic {
    pub fn predict(&self, score: f64) -> f64 {
        sigmoid(self.intercept + self.slope * score)
    }
}

pub fn fit_score_logistic(scores: &[f64], labels: &[f64]) -> Result<ScoreLogistic, SeverityError> {
    let pos = labels.iter().filter(|&&y| y > 0.5).count();
    let distinct = scores.iter().any(|&s| s != scores[0]);
    if pos == 0 || pos == labels.len() || !distinct {
        return Err(SeverityError::DegenerateFit);
    }
    let x = Array2::from_shape_vec((scores.len(), 1), scores.to_vec()).expect("shape");
    let fit = fit_logistic(x.view(), labels);
    Ok(ScoreLogistic { intercept: fit.model.intercept, slope: fit.model.coef[0], flags: fit.flags })
}

/// Main-term logistic regression on the 15 per-variable SAPS-II points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewSapsIIModel {
    pub model: LinearModel,
    pub flags: Vec<FitFlag>,
}

pub fn points_matrix(breakdowns: &[&Saps2Breakdown]) -> Array2<f64> {
    Array2::from_shape_fn((breakdowns.len(), 15), |(i, j)| breakdowns[i].points[j] as f64)
}

impl NewSapsIIModel {
    pub fn fit(breakdowns: &[&Saps2Breakdown], labels: &[f64]) -> Result<Self, SeverityError> {
        let pos = labels.iter().filter(|&&y| y > 0.5).count();
        if pos == 0 || pos == labels.len() {
            return Err(SeverityError::DegenerateFit);
        }
        let fit = fit_logistic(points_matrix(breakdowns).view(), labels);
        Ok(NewSapsIIModel { model: fit.model, flags: fit.flags })
    }

    pub fn predict(&self, breakdowns: &[&Saps2Breakdown]) -> Vec<f64> {
        self.model.predict_proba(points_matrix(breakdowns).view())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityRecord {
    pub admission_id: AdmissionId,
    pub saps2: Saps2Breakdown,
    pub sofa: SofaBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub admission_id: AdmissionId,
    pub saps2: u32,
    pub sofa: u32,
    pub p_saps2: f64,
    pub p_sofa: f64,
    pub p_newsaps2: f64,
}

pub fn write_scores_csv<W: Write>(w: W, rows: &[ScoreRow]) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["admission_id", "saps2", "sofa", "p_saps2", "p_sofa", "p_newsaps2"])?;
    for r in rows {
        wr.write_record([
            r.admission_id.to_string(),
            r.saps2.to_string(),
            r.sofa.to_string(),
            format!("{}", r.p_saps2),
            format!("{}", r.p_sofa),
            format!("{}", r.p_newsaps2),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_episode, encode_static, ChronicDiseases, FeatureIndex, FeatureSetId};
    use crate::types::rng_from;
    use rand::Rng;

    fn ev(item: u64, h: f64, v: f64) -> CleanEvent {
        CleanEvent { admission_id: AdmissionId(1), item_id: ItemId::Code(item), charttime: Timestamp((h * 3600.0) as i64), value: v, canonical_unit: None }
    }

    fn episode(events: &[CleanEvent], age: f64, cat: AdmissionCategory, chronic: ChronicDiseases) -> (EpisodeTensor, FeatureSpec) {
        let spec = FeatureSpec::bundled(FeatureSetId::A, 24);
        let (e, _) = build_episode(&spec, &FeatureIndex::new(&spec), AdmissionId(1), Timestamp(0), events, encode_static(age, cat, chronic));
        (e, spec)
    }

    fn normal_events() -> Vec<CleanEvent> {
        vec![
            ev(220045, 1.0, 80.0),
            ev(220050, 1.0, 120.0),
            ev(223762, 1.0, 37.0),
            ev(226559, 1.0, 1500.0),
            ev(51006, 1.0, 15.0),
            ev(51300, 1.0, 8.0),
            ev(50971, 1.0, 4.0),
            ev(50983, 1.0, 140.0),
            ev(50882, 1.0, 24.0),
            ev(50885, 1.0, 0.8),
            ev(223900, 1.0, 5.0),
            ev(223901, 1.0, 6.0),
            ev(220739, 1.0, 4.0),
        ]
    }

    #[test]
    fn mortality_equation_values() {
        assert!((saps2_mortality(0) - 4.25e-4).abs() < 1e-5, "{}", saps2_mortality(0));
        assert!((saps2_mortality(33) - 0.140).abs() < 1e-3, "{}", saps2_mortality(33));
        assert!(saps2_mortality(59) > saps2_mortality(48));
        let c = SeverityConfig::bundled();
        assert_eq!(saps2_mortality_with(&c.saps2, 33.0), saps2_mortality(33));
    }

    #[test]
    fn zero_point_episode_scores_zero() {
        let c = SeverityConfig::bundled();
        let (e, spec) = episode(&normal_events(), 30.0, AdmissionCategory::ScheduledSurgical, ChronicDiseases::default());
        let s = saps2_score(&e, &spec, &c.saps2).unwrap();
        assert_eq!(s.total, 0, "{:?}", s.points);
        assert_eq!(s.missing, vec!["pf_ratio"]);
    }

    #[test]
    fn single_variable_seven_points() {
        let c = SeverityConfig::bundled();
        let (e, spec) = episode(&normal_events(), 45.0, AdmissionCategory::ScheduledSurgical, ChronicDiseases::default());
        assert_eq!(saps2_score(&e, &spec, &c.saps2).unwrap().total, 7);
    }

    #[test]
    fn worst_value_wins() {
        let c = SeverityConfig::bundled();
        let mut evs = normal_events();
        evs.push(ev(220045, 5.0, 165.0));
        evs.push(ev(220045, 6.0, 35.0));
        let (e, spec) = episode(&evs, 30.0, AdmissionCategory::Medical, ChronicDiseases { aids: true, metastatic_cancer: true, ..Default::default() });
        let s = saps2_score(&e, &spec, &c.saps2).unwrap();
        assert_eq!(s.points[1], 11);
        assert_eq!(s.points[13], 17);
        assert_eq!(s.points[14], 6);
        assert_eq!(s.total, 34);
    }

    #[test]
    fn boundary_is_lower_closed() {
        let c = SeverityConfig::bundled();
        let hr = &c.saps2.tables["heart_rate"];
        assert_eq!(hr.bucket(84.0), 2);
        assert_eq!(hr.bucket(70.0), 2);
        assert_eq!(hr.bucket(69.999), 1);
        assert_eq!(hr.worst(std::iter::empty()), None);
    }

    #[test]
    fn sofa_components() {
        let c = SeverityConfig::bundled();
        let mut evs = normal_events();
        evs.extend([ev(51265, 2.0, 40.0), ev(50912, 3.0, 2.5), ev(220052, 2.0, 65.0), ev(50821, 2.0, 70.0), ev(223835, 2.0, 50.0)]);
        let (e, spec) = episode(&evs, 50.0, AdmissionCategory::Medical, ChronicDiseases::default());
        let s = sofa_score(&e, &spec, &evs, Timestamp(0), &c.sofa).unwrap();
        // PF 140 → 3; platelets 40 → 3; bilirubin 0.8 → 0; MAP 65 → 1; GCS 15 → 0; creatinine 2.5 → 2.
        assert_eq!(s.subscores, [3, 3, 0, 1, 0, 2]);
        assert_eq!(s.total, 9);
        let mut with_pressor = evs.clone();
        with_pressor.push(ev(221906, 4.0, 0.1));
        let s = sofa_score(&e, &spec, &with_pressor, Timestamp(0), &c.sofa).unwrap();
        assert_eq!(s.subscores[3], 3);
    }

    #[test]
    fn score_logistic_recovery_and_separation() {
        let mut rng = rng_from(21);
        let n = 100_000;
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..=40) as f64).collect();
        let y: Vec<f64> = s.iter().map(|&v| (rng.random::<f64>() < sigmoid(-1.0 + 0.1 * v)) as u8 as f64).collect();
        let f = fit_score_logistic(&s, &y).unwrap();
        assert!((f.intercept + 1.0).abs() < 0.05 && (f.slope - 0.1).abs() < 0.05, "{f:?}");
        let sep = fit_score_logistic(&[0.0, 0.0, 1.0, 1.0], &[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(sep.slope > 0.0 && sep.flags.contains(&FitFlag::Separable));
        assert!(fit_score_logistic(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn null_scores_have_small_slope() {
        let mut rng = rng_from(8);
        let s: Vec<f64> = (0..1000).map(|_| rng.random_range(0..=24) as f64).collect();
        let y: Vec<f64> = (0..1000).map(|_| (rng.random::<f64>() < 0.3) as u8 as f64).collect();
        let f = fit_score_logistic(&s, &y).unwrap();
        assert!(f.slope.abs() < 0.05, "{}", f.slope);
    }

    #[test]
    fn mortality_monotone_over_range() {
        let ps: Vec<f64> = (0..=160).map(saps2_mortality).collect();
        assert!(ps.windows(2).all(|w| w[0] < w[1]));
        assert!(ps.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn bad_table_rejected() {
        let bad = BUNDLED_SEVERITY_CONFIG.replace("points = [11, 2, 0, 4, 7]", "points = [11, 2, 0, 4]");
        assert!(SeverityConfig::from_toml_str(&bad).is_err());
    }
}
