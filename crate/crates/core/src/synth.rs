//! Seeded generator of MIMIC-shaped tables whose labels come from a known
//! latent risk, plus controlled dirt injection for the cleaning stage.
//!
//! Every patient draws from its own derived random stream, so output does
//! not depend on thread scheduling. Labels are nested draws from
//! `logistic(a_k + z)` with one uniform per admission; the intercepts `a_k`
//! are calibrated on the drawn cohort so prevalences match their targets up
//! to Bernoulli noise.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clean::{normalize_unit, AggMode, CleanConfig};
use crate::cohort::{Icd9Class, Icd9GroupTable, DAYS_PER_YEAR, N_ICD9_GROUPS};
use crate::features::{FeatureSetId, FeatureSpec};
use crate::ingest::{
    AdmissionRecord, CareSource, DiagnosisRecord, EventRecord, Gender, IcuStayRecord, PatientRecord, RawTables, ServiceRecord, SourceTable, TableKind, Value,
};
use crate::linalg::sigmoid;
use crate::types::{derive_seed, rng_from, AdmissionId, IcuStayId, ItemId, PatientId, Timestamp, SECONDS_PER_DAY, SECONDS_PER_HOUR};

/// Which latent-risk components drive the labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalSpec {
    StaticOnly,
    TemporalOnly,
    Mixed,
}

/// Which measurement items are emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventScope {
    /// Admissions, patients and diagnoses only.
    None,
    /// Items of the raw SAPS-II variables (feature sets A and B).
    Core,
    /// Every item of feature set C.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prevalence {
    pub in_hospital: f64,
    pub mort_30d: f64,
    pub mort_1y: f64,
}

impl Default for Prevalence {
    fn default() -> Self {
        Prevalence { in_hospital: 0.105, mort_30d: 0.129, mort_1y: 0.248 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub prevalence: Prevalence,
    /// Log-normal length of stay in hours.
    pub los_log_mean: f64,
    pub los_log_sd: f64,
    /// Chance that a scheduled observation is not recorded.
    pub missing_rate: f64,
    /// Per-feature overrides, keyed by feature-set-C name.
    pub missing_overrides: BTreeMap<String, f64>,
    pub signal: SignalSpec,
    /// Weights of the static, temporal and set-C-only risk components.
    pub static_strength: f64,
    pub temporal_strength: f64,
    pub set_c_strength: f64,
    pub scope: EventScope,
    /// Hours after ICU admission covered by measurements.
    pub horizon_hours: usize,
    pub minor_fraction: f64,
    pub readmission_fraction: f64,
    /// In-hospital deaths whose date of death is left blank.
    pub missing_dod_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patients: 1000,
            prevalence: Prevalence::default(),
            los_log_mean: 169.9f64.ln(),
            los_log_sd: 0.76,
            missing_rate: 0.1,
            missing_overrides: BTreeMap::new(),
            signal: SignalSpec::Mixed,
            static_strength: 1.0,
            temporal_strength: 1.5,
            set_c_strength: 0.0,
            scope: EventScope::Full,
            horizon_hours: 48,
            minor_fraction: 0.02,
            readmission_fraction: 0.05,
            missing_dod_fraction: 0.002,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Invalid(String),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SynthError + '_ {
    move |source| SynthError::Io { path: path.display().to_string(), source }
}

/// Hours in which the timed episode of the temporal signal may occur.
pub const SIGNAL_WINDOW_HOURS: usize = 24;
/// Length of the timed episode.
pub const SPIKE_HOURS: usize = 3;
/// Features shifted during the episode, with the shift in their units.
pub const SPIKE_FEATURES: [(&str, f64); 3] = [("heart_rate", 30.0), ("systolic_blood_pressure_abp_mean", -30.0), ("body_temperature", 1.5)];
/// Set-C-only laboratory features whose levels carry the set-C risk term.
pub const SET_C_SIGNAL: [(&str, f64); 3] = [("lactate", 1.0), ("creatinine", 1.0), ("platelet_count", -1.0)];

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        let p = self.prevalence;
        for (name, v) in [("in_hospital", p.in_hospital), ("mort_30d", p.mort_30d), ("mort_1y", p.mort_1y)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("prevalence {name} = {v} must lie in (0, 1)"));
            }
        }
        // 30-day and 1-year mortality count in-hospital deaths too.
        if !(p.in_hospital <= p.mort_30d && p.mort_30d <= p.mort_1y) {
            return bad("prevalences must satisfy in_hospital <= mort_30d <= mort_1y".into());
        }
        if self.n_patients == 0 {
            return bad("n_patients must be positive".into());
        }
        if !(self.los_log_sd >= 0.0 && self.los_log_mean.is_finite()) {
            return bad("length-of-stay parameters must be finite with sd >= 0".into());
        }
        for (name, v) in [
            ("missing_rate", self.missing_rate),
            ("minor_fraction", self.minor_fraction),
            ("readmission_fraction", self.readmission_fraction),
            ("missing_dod_fraction", self.missing_dod_fraction),
        ]
        .into_iter()
        .chain(self.missing_overrides.iter().map(|(k, v)| (k.as_str(), *v)))
        {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} must lie in [0, 1]"));
            }
        }
        if self.horizon_hours < SIGNAL_WINDOW_HOURS {
            return bad(format!("horizon_hours must be at least {SIGNAL_WINDOW_HOURS}"));
        }
        for s in [self.static_strength, self.temporal_strength, self.set_c_strength] {
            if !s.is_finite() {
                return bad("signal strengths must be finite".into());
            }
        }
        let names: HashSet<String> = FeatureSpec::bundled(FeatureSetId::C, 48).temporal_names().into_iter().collect();
        if let Some(k) = self.missing_overrides.keys().find(|k| !names.contains(*k)) {
            return bad(format!("missing_overrides: unknown feature {k}"));
        }
        Ok(())
    }

    fn missing_for(&self, feature: &str) -> f64 {
        self.missing_overrides.get(feature).copied().unwrap_or(self.missing_rate)
    }
}

#[derive(Debug, Clone, Copy)]
enum Dist {
    Normal { mu: f64, between: f64, within: f64 },
    LogNormal { median: f64, between: f64, within: f64 },
    Gcs { max: f64 },
    Fio2,
}

#[derive(Debug, Clone, Copy)]
struct Physio {
    dist: Dist,
    every: usize,
    unit: Option<&'static str>,
}

/// Physiology of the raw SAPS-II variables, keyed by feature-set-C name.
fn core_physio(name: &str) -> Option<Physio> {
    use Dist::*;
    let p = |dist, every, unit| Some(Physio { dist, every, unit });
    match name {
        "gcsverbal" => p(Gcs { max: 5.0 }, 4, None),
        "gcsmotor" => p(Gcs { max: 6.0 }, 4, None),
        "gcseyes" => p(Gcs { max: 4.0 }, 4, None),
        "systolic_blood_pressure_abp_mean" => p(Normal { mu: 120.0, between: 15.0, within: 8.0 }, 1, Some("mmHg")),
        "heart_rate" => p(Normal { mu: 85.0, between: 12.0, within: 5.0 }, 1, Some("bpm")),
        "body_temperature" => p(Normal { mu: 37.0, between: 0.4, within: 0.2 }, 1, Some("degC")),
        "fio2" => p(Fio2, 6, Some("%")),
        "pao2" => p(Normal { mu: 95.0, between: 20.0, within: 8.0 }, 6, Some("mmHg")),
        "urinary_output_sum" => p(LogNormal { median: 80.0, between: 0.4, within: 0.3 }, 1, Some("ml")),
        "serum_urea_nitrogen_level" => p(LogNormal { median: 20.0, between: 0.5, within: 0.05 }, 8, Some("mg/dL")),
        "white_blood_cells_count_mean" => p(LogNormal { median: 10.0, between: 0.35, within: 0.08 }, 8, Some("K/uL")),
        "serum_bicarbonate_level_mean" => p(Normal { mu: 24.0, between: 3.0, within: 1.0 }, 8, Some("mEq/L")),
        "sodium_level_mean" => p(Normal { mu: 139.0, between: 3.5, within: 1.0 }, 8, Some("mEq/L")),
        "potassium_level_mean" => p(Normal { mu: 4.2, between: 0.45, within: 0.15 }, 8, Some("mEq/L")),
        "bilirubin_level" => p(LogNormal { median: 0.9, between: 0.7, within: 0.05 }, 24, Some("mg/dL")),
        _ => None,
    }
}

const FLUID_WORDS: [&str; 12] = ["albumin", "plasma", "cells", "d5", "lr", "solution", "water", "piggyback", "crystalloid", "intake", "flush", "ns"];

/// Stable FNV-1a hash of a feature name, for per-feature constants.
fn name_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn generic_physio(name: &str, source: SourceTable) -> Physio {
    // Median spread log-uniformly over [1, 500).
    let u = (name_hash(name) % 10_000) as f64 / 10_000.0;
    let median = (u * 500f64.ln()).exp();
    let dist = Dist::LogNormal { median, between: 0.3, within: 0.08 };
    let (every, unit) = match source {
        SourceTable::Chartevents => (4, None),
        SourceTable::Labevents => (12, None),
        SourceTable::Inputevents => {
            let fluid = FLUID_WORDS.iter().any(|w| name.split('_').any(|p| p == *w));
            (4, Some(if fluid { "ml" } else { "mg" }))
        }
        SourceTable::Outputevents => (4, Some("ml")),
        SourceTable::Prescriptions => (24, Some("mg")),
    };
    let every = if SET_C_SIGNAL.iter().any(|(n, _)| *n == name) { 8 } else { every };
    Physio {
        dist: if matches!(source, SourceTable::Inputevents | SourceTable::Outputevents | SourceTable::Prescriptions) {
            Dist::LogNormal { median, between: 0.3, within: 0.5 }
        } else {
            dist
        },
        every,
        unit,
    }
}

/// Intermittent treatments are given to a subset of patients only.
const TREATMENT_SHARE: f64 = 0.3;

#[derive(Debug, Clone)]
struct FeaturePlan {
    name: String,
    source: SourceTable,
    items: Vec<ItemId>,
    physio: Physio,
    core: bool,
    spike: f64,
}

fn feature_plans() -> Vec<FeaturePlan> {
    FeatureSpec::bundled(FeatureSetId::C, 48)
        .temporal
        .iter()
        .map(|f| {
            let core = core_physio(&f.name);
            FeaturePlan {
                name: f.name.clone(),
                source: f.source,
                items: f.items.clone(),
                physio: core.unwrap_or_else(|| generic_physio(&f.name, f.source)),
                core: core.is_some(),
                spike: SPIKE_FEATURES.iter().find(|(n, _)| *n == f.name).map(|(_, s)| *s).unwrap_or(0.0),
            }
        })
        .collect()
}

const MV_ITEM_FLOOR: u64 = 220_000;

fn is_metavision_item(item: &ItemId) -> bool {
    matches!(item, ItemId::Code(c) if *c >= MV_ITEM_FLOOR)
}

fn pick_item(items: &[ItemId], metavision: bool) -> ItemId {
    items.iter().find(|i| is_metavision_item(i) == metavision).unwrap_or(&items[0]).clone()
}

const TEMP_C: (u64, u64) = (676, 223_762);
const TEMP_F: (u64, u64) = (678, 223_761);

/// Chronic-disease code prefixes, which determine static features.
const AIDS: (u16, u16) = (42, 44);
const HEMATOLOGIC: (u16, u16) = (200, 208);
const METASTATIC: (u16, u16) = (196, 199);

/// Share of patients with each diagnosis group (all-sources rates).
#[allow(clippy::approx_constant)]
pub const ICD9_GROUP_RATES: [f64; N_ICD9_GROUPS] =
    [0.258, 0.172, 0.688, 0.369, 0.318, 0.294, 0.831, 0.484, 0.391, 0.399, 0.004, 0.102, 0.190, 0.036, 0.320, 0.086, 0.030, 0.450, 0.479, 0.335];

/// Latent state of one patient, drawn before labels are calibrated.
#[derive(Debug, Clone)]
struct Latent {
    minor: bool,
    age: f64,
    gender: Gender,
    care: CareSource,
    metavision: bool,
    fahrenheit: bool,
    admission_type: &'static str,
    surgical: bool,
    aids: bool,
    hematologic: bool,
    metastatic: bool,
    baseline: Vec<f64>,
    spike_hour: usize,
    static_term: f64,
    temporal_term: f64,
    set_c_term: f64,
    risk: f64,
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn draw_latent(cfg: &SynthConfig, plans: &[FeaturePlan], i: usize) -> Latent {
    let mut rng = rng_from(derive_seed(derive_seed(cfg.seed, 1), i as u64));
    let minor = rng.random::<f64>() < cfg.minor_fraction;
    let age = if minor { rng.random_range(1.0..14.9) } else { (65.0 + 16.0 * normal(&mut rng)).clamp(16.0, 90.0) };
    let gender = if rng.random::<bool>() { Gender::Male } else { Gender::Female };
    let u: f64 = rng.random();
    let care = if u < 0.55 {
        CareSource::Carevue
    } else if u < 0.95 {
        CareSource::Metavision
    } else {
        CareSource::Both
    };
    let metavision = match care {
        CareSource::Carevue => false,
        CareSource::Metavision => true,
        CareSource::Both => rng.random(),
    };
    let fahrenheit = rng.random::<f64>() < 0.1;
    let u: f64 = rng.random();
    let admission_type = if u < 0.15 {
        "ELECTIVE"
    } else if u < 0.93 {
        "EMERGENCY"
    } else {
        "URGENT"
    };
    let surgical = rng.random::<f64>() < if admission_type == "ELECTIVE" { 0.45 } else { 0.25 };
    let aids = rng.random::<f64>() < 0.01;
    let hematologic = rng.random::<f64>() < 0.03;
    let metastatic = rng.random::<f64>() < 0.05;
    let baseline: Vec<f64> = plans.iter().map(|_| normal(&mut rng)).collect();
    let spike_hour = rng.random_range(1..=SIGNAL_WINDOW_HOURS - SPIKE_HOURS - 1);

    let b = |name: &str| plans.iter().position(|p| p.name == name).map(|k| baseline[k]).unwrap_or(0.0);
    let unscheduled = surgical && admission_type != "ELECTIVE";
    let static_term = 0.5 * (age - 65.0) / 16.0 + 0.6 * b("gcsverbal") - 0.4 * b("systolic_blood_pressure_abp_mean")
        + 0.4 * b("serum_urea_nitrogen_level")
        + 1.2 * metastatic as u8 as f64
        + 0.8 * hematologic as u8 as f64
        + 0.8 * aids as u8 as f64
        + 0.5 * unscheduled as u8 as f64
        + 0.3 * (!surgical) as u8 as f64;
    // Later episodes mean higher risk; scaled to unit variance.
    let lo = 1.0;
    let hi = (SIGNAL_WINDOW_HOURS - SPIKE_HOURS - 1) as f64;
    let temporal_term = 3f64.sqrt() * (2.0 * (spike_hour as f64 - lo) / (hi - lo) - 1.0);
    let set_c_term = SET_C_SIGNAL.iter().map(|(n, s)| s * b(n)).sum::<f64>() / 3f64.sqrt();
    let (use_static, use_temporal) = match cfg.signal {
        SignalSpec::StaticOnly => (1.0, 0.0),
        SignalSpec::TemporalOnly => (0.0, 1.0),
        SignalSpec::Mixed => (1.0, 1.0),
    };
    let risk = use_static * cfg.static_strength * static_term + use_temporal * cfg.temporal_strength * temporal_term + cfg.set_c_strength * set_c_term;
    Latent {
        minor,
        age,
        gender,
        care,
        metavision,
        fahrenheit,
        admission_type,
        surgical,
        aids,
        hematologic,
        metastatic,
        baseline,
        spike_hour,
        static_term,
        temporal_term,
        set_c_term,
        risk,
    }
}

/// Intercept `a` with `mean(sigmoid(a + z)) = target`, by bisection.
pub fn calibrate_intercept(z: &[f64], target: f64) -> f64 {
    let mean_p = |a: f64| z.iter().map(|&v| sigmoid(a + v)).sum::<f64>() / z.len().max(1) as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    InHospitalDeath,
    DeathWithin30d,
    DeathWithin1y,
    Survivor,
}

/// Per-admission generating quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub admission_id: AdmissionId,
    pub in_cohort: bool,
    pub latent_risk: f64,
    pub static_term: f64,
    pub temporal_term: f64,
    pub set_c_term: f64,
    pub spike_hour: usize,
    pub p_in_hospital: f64,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Intercepts for in-hospital, 30-day and 1-year mortality.
    pub intercepts: [f64; 3],
    pub coefficients: BTreeMap<String, f64>,
    /// Primary admissions in patient order.
    pub rows: Vec<TruthRow>,
}

impl GroundTruth {
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["admission_id", "in_cohort", "latent_risk", "static_term", "temporal_term", "set_c_term", "spike_hour", "p_in_hospital", "outcome"])?;
        for r in &self.rows {
            let outcome = serde_json::to_value(r.outcome).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            wr.write_record([
                r.admission_id.to_string(),
                (r.in_cohort as u8).to_string(),
                r.latent_risk.to_string(),
                r.static_term.to_string(),
                r.temporal_term.to_string(),
                r.set_c_term.to_string(),
                r.spike_hour.to_string(),
                r.p_in_hospital.to_string(),
                outcome,
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
struct PatientTables {
    admissions: Vec<AdmissionRecord>,
    patient: Option<PatientRecord>,
    icustays: Vec<IcuStayRecord>,
    diagnoses: Vec<DiagnosisRecord>,
    services: Vec<ServiceRecord>,
    events: Vec<EventRecord>,
}

/// Base of the shifted calendar: 2101-01-01.
const EPOCH: i64 = 4_133_980_800;

fn minutes(rng: &mut impl Rng, lo_s: f64, hi_s: f64) -> i64 {
    ((rng.random_range(lo_s..hi_s)) / 60.0).round() as i64 * 60
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (v * s).round() / s
}

fn icd_code(rng: &mut impl Rng, group: usize, table: &Icd9GroupTable, excluded: &[(u16, u16)]) -> String {
    let digit = |rng: &mut dyn rand::RngCore| -> String {
        if rng.random::<f64>() < 0.3 {
            String::new()
        } else {
            rng.random_range(0..10u8).to_string()
        }
    };
    match table.groups[group].class {
        Icd9Class::Numeric { lo, hi } => loop {
            let p = rng.random_range(lo..=hi);
            if excluded.iter().all(|&(a, b)| !(a..=b).contains(&p)) {
                return format!("{p:03}{}", digit(rng));
            }
        },
        Icd9Class::V => format!("V{:02}{}", rng.random_range(1..92u8), digit(rng)),
        Icd9Class::E => format!("E{}{}", rng.random_range(800..1000u16), digit(rng)),
    }
}

fn chronic_code(rng: &mut impl Rng, range: (u16, u16)) -> String {
    format!("{:03}{}", rng.random_range(range.0..=range.1), rng.random_range(0..10u8))
}

fn physio_value(p: &Physio, base_z: f64, gcs_sev: f64, rng: &mut impl Rng) -> f64 {
    match p.dist {
        Dist::Normal { mu, between, within } => round_to((mu + between * base_z + within * normal(rng)).max(0.0), 2),
        Dist::LogNormal { median, between, within } => round_to(median * (between * base_z + within * normal(rng)).exp(), 2),
        Dist::Gcs { max } => (max - gcs_sev * (max - 1.0) + 0.4 * normal(rng)).round().clamp(1.0, max),
        Dist::Fio2 => (21.0 + 79.0 * sigmoid(-1.0 + 0.8 * base_z) + 3.0 * normal(rng)).round().clamp(21.0, 100.0),
    }
}

#[allow(clippy::too_many_arguments)]
fn build_patient(cfg: &SynthConfig, plans: &[FeaturePlan], lat: &Latent, i: usize, intercepts: [f64; 3], table: &Icd9GroupTable) -> (PatientTables, TruthRow) {
    let mut rng = rng_from(derive_seed(derive_seed(cfg.seed, 2), i as u64));
    let patient_id = PatientId(10_000 + i as u64);
    let admission_id = AdmissionId(100_000 + i as u64);
    let admittime = Timestamp(EPOCH + minutes(&mut rng, 0.0, 3650.0 * SECONDS_PER_DAY as f64));
    let intime = admittime.plus_seconds(minutes(&mut rng, 0.0, 12.0 * SECONDS_PER_HOUR as f64));
    let dob = Timestamp(intime.0 - (lat.age * DAYS_PER_YEAR * SECONDS_PER_DAY as f64).round() as i64);
    let los_h = (cfg.los_log_mean + cfg.los_log_sd * normal(&mut rng)).exp().max(intime.hours_since(admittime) + 1.0);
    let dischtime = admittime.plus_seconds((los_h * 60.0).round() as i64 * 60);

    let p = intercepts.map(|a| sigmoid(a + lat.risk));
    let u: f64 = rng.random();
    let outcome = if u < p[0] {
        Outcome::InHospitalDeath
    } else if u < p[1] {
        Outcome::DeathWithin30d
    } else if u < p[2] {
        Outcome::DeathWithin1y
    } else {
        Outcome::Survivor
    };
    let day = SECONDS_PER_DAY as f64;
    let after_discharge = |rng: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64| dischtime.plus_seconds(minutes(rng, lo * day, hi * day)).date_floor();
    let (deathtime, dod) = match outcome {
        Outcome::InHospitalDeath => {
            let blank = rng.random::<f64>() < cfg.missing_dod_fraction;
            (Some(dischtime), (!blank).then(|| dischtime.date_floor()))
        }
        Outcome::DeathWithin30d => (None, Some(after_discharge(&mut rng, 0.0, 29.5))),
        Outcome::DeathWithin1y => (None, Some(after_discharge(&mut rng, 31.0, 364.0))),
        Outcome::Survivor => (None, rng.random::<bool>().then(|| after_discharge(&mut rng, 367.0, 3000.0))),
    };
    let span = (dischtime.0 - intime.0) as f64;
    let outtime = if deathtime.is_some() { dischtime } else { intime.plus_seconds((span * rng.random_range(0.3..1.0) / 60.0).round() as i64 * 60) };

    let mut out = PatientTables { patient: Some(PatientRecord { patient_id, dob, dod, gender: lat.gender }), ..Default::default() };
    out.admissions.push(AdmissionRecord { admission_id, patient_id, admittime, dischtime, deathtime, admission_type: lat.admission_type.to_string() });
    out.icustays.push(IcuStayRecord { icustay_id: IcuStayId(200_000 + i as u64), admission_id, intime, outtime, care_source: lat.care });
    let service = if lat.surgical { ["CSURG", "TSURG", "NSURG", "ORTHO"] } else { ["MED", "CMED", "NMED", "OMED"] }[rng.random_range(0..4)];
    out.services.push(ServiceRecord { admission_id, transfertime: admittime, curr_service: service.to_string() });

    if outcome == Outcome::Survivor && !lat.minor && rng.random::<f64>() < cfg.readmission_fraction {
        let second = AdmissionId(500_000 + i as u64);
        let admit2 = dischtime.plus_seconds(minutes(&mut rng, 30.0 * day, 300.0 * day));
        let in2 = admit2.plus_seconds(3600);
        let disch2 = admit2.plus_seconds(3 * SECONDS_PER_DAY);
        out.admissions.push(AdmissionRecord {
            admission_id: second,
            patient_id,
            admittime: admit2,
            dischtime: disch2,
            deathtime: None,
            admission_type: "EMERGENCY".into(),
        });
        out.icustays.push(IcuStayRecord {
            icustay_id: IcuStayId(600_000 + i as u64),
            admission_id: second,
            intime: in2,
            outtime: disch2,
            care_source: lat.care,
        });
    }

    if !lat.minor {
        let mut codes: Vec<String> = Vec::new();
        let mut excluded = Vec::new();
        for (flag, range) in [(lat.aids, AIDS), (lat.hematologic, HEMATOLOGIC), (lat.metastatic, METASTATIC)] {
            if flag {
                codes.push(chronic_code(&mut rng, range));
            } else {
                excluded.push(range);
            }
        }
        for (g, &rate) in ICD9_GROUP_RATES.iter().enumerate() {
            if rng.random::<f64>() < rate {
                codes.push(icd_code(&mut rng, g, table, &excluded));
            }
        }
        if rng.random::<f64>() < 0.01 {
            codes.push(format!("{}", rng.random_range(760..780u16)));
        }
        let mut seen = HashSet::new();
        codes.retain(|c| seen.insert(c.clone()));
        out.diagnoses.extend(codes.into_iter().map(|icd9_code| DiagnosisRecord { admission_id, icd9_code }));
        emit_events(cfg, plans, lat, admission_id, intime, dischtime, &mut rng, &mut out.events);
    }

    let truth = TruthRow {
        admission_id,
        in_cohort: !lat.minor,
        latent_risk: lat.risk,
        static_term: lat.static_term,
        temporal_term: lat.temporal_term,
        set_c_term: lat.set_c_term,
        spike_hour: lat.spike_hour,
        p_in_hospital: p[0],
        outcome,
    };
    (out, truth)
}

#[allow(clippy::too_many_arguments)]
fn emit_events(
    cfg: &SynthConfig,
    plans: &[FeaturePlan],
    lat: &Latent,
    admission_id: AdmissionId,
    intime: Timestamp,
    dischtime: Timestamp,
    rng: &mut rand_chacha::ChaCha8Rng,
    out: &mut Vec<EventRecord>,
) {
    if cfg.scope == EventScope::None {
        return;
    }
    let end = dischtime.min(intime.plus_seconds(cfg.horizon_hours as i64 * SECONDS_PER_HOUR));
    let gcs_sev = sigmoid(1.2 * plans.iter().position(|p| p.name == "gcsverbal").map(|k| lat.baseline[k]).unwrap_or(0.0) - 1.2);
    let spike = lat.spike_hour..lat.spike_hour + SPIKE_HOURS;
    // PaO2 and FiO2 share sample times so their ratio is defined.
    let mut pao2_times: Vec<(usize, Timestamp)> = Vec::new();
    let pao2_first = plans.iter().position(|p| p.name == "pao2");
    let mut order: Vec<usize> = (0..plans.len()).collect();
    if let Some(k) = pao2_first {
        order.retain(|&j| j != k);
        order.insert(0, k);
    }
    for fi in order {
        let plan = &plans[fi];
        if cfg.scope == EventScope::Core && !plan.core {
            continue;
        }
        let intermittent = !plan.core && matches!(plan.source, SourceTable::Inputevents | SourceTable::Outputevents | SourceTable::Prescriptions);
        if intermittent && rng.random::<f64>() >= TREATMENT_SHARE {
            continue;
        }
        let miss = cfg.missing_for(&plan.name);
        let item = if plan.name == "body_temperature" {
            let (cv, mv) = if lat.fahrenheit { TEMP_F } else { TEMP_C };
            ItemId::Code(if lat.metavision { mv } else { cv })
        } else {
            pick_item(&plan.items, lat.metavision)
        };
        let slots: Vec<(usize, Timestamp)> = if plan.name == "fio2" {
            pao2_times.clone()
        } else {
            let every = plan.physio.every;
            let phase = rng.random_range(0..every);
            let mut slots = Vec::new();
            for h in (phase..cfg.horizon_hours).step_by(every) {
                if rng.random::<f64>() < miss {
                    continue;
                }
                let t = intime.plus_seconds(h as i64 * SECONDS_PER_HOUR + rng.random_range(0..60) * 60);
                if t < end {
                    slots.push((h, t));
                }
            }
            slots
        };
        if plan.name == "pao2" {
            pao2_times = slots.clone();
        }
        for (h, t) in slots {
            let mut v = physio_value(&plan.physio, lat.baseline[fi], gcs_sev, rng);
            if plan.spike != 0.0 && spike.contains(&h) {
                v = round_to((v + plan.spike).max(0.0), 2);
            }
            let mut unit = plan.physio.unit.map(str::to_string);
            if plan.name == "body_temperature" && lat.fahrenheit {
                v = round_to(v * 1.8 + 32.0, 2);
                unit = Some("degF".into());
            }
            out.push(EventRecord { admission_id, item_id: item.clone(), charttime: t, value: Value::Numeric(v), unit, source_table: plan.source });
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub tables: RawTables,
    pub truth: GroundTruth,
}

/// Generates every table in memory.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset, SynthError> {
    cfg.validate()?;
    let plans = feature_plans();
    let latents: Vec<Latent> = (0..cfg.n_patients).into_par_iter().map(|i| draw_latent(cfg, &plans, i)).collect();
    let cohort_risk: Vec<f64> = latents.iter().filter(|l| !l.minor).map(|l| l.risk).collect();
    let pv = cfg.prevalence;
    let intercepts = [pv.in_hospital, pv.mort_30d, pv.mort_1y].map(|t| calibrate_intercept(&cohort_risk, t));
    let table = Icd9GroupTable::default();
    let built: Vec<(PatientTables, TruthRow)> = latents.par_iter().enumerate().map(|(i, l)| build_patient(cfg, &plans, l, i, intercepts, &table)).collect();

    let mut tables = RawTables::default();
    let mut rows = Vec::with_capacity(built.len());
    for (p, t) in built {
        tables.admissions.extend(p.admissions);
        tables.patients.extend(p.patient);
        tables.icustays.extend(p.icustays);
        tables.diagnoses.extend(p.diagnoses);
        tables.services.extend(p.services);
        tables.events.extend(p.events);
        rows.push(t);
    }
    tables.carevue_input_admissions =
        tables.events.iter().filter(|e| e.source_table == SourceTable::Inputevents && !is_metavision_item(&e.item_id)).map(|e| e.admission_id).collect();
    let coefficients = BTreeMap::from([
        ("static_strength".to_string(), if cfg.signal == SignalSpec::TemporalOnly { 0.0 } else { cfg.static_strength }),
        ("temporal_strength".to_string(), if cfg.signal == SignalSpec::StaticOnly { 0.0 } else { cfg.temporal_strength }),
        ("set_c_strength".to_string(), cfg.set_c_strength),
    ]);
    Ok(SynthDataset { tables, truth: GroundTruth { intercepts, coefficients, rows } })
}

/// Event table a record is written to.
pub fn table_of(e: &EventRecord) -> TableKind {
    match e.source_table {
        SourceTable::Chartevents => TableKind::Chartevents,
        SourceTable::Labevents => TableKind::Labevents,
        SourceTable::Outputevents => TableKind::Outputevents,
        SourceTable::Prescriptions => TableKind::Prescriptions,
        SourceTable::Inputevents if is_metavision_item(&e.item_id) => TableKind::InputeventsMv,
        SourceTable::Inputevents => TableKind::InputeventsCv,
    }
}

pub fn format_value(v: &Value) -> String {
    match v {
        Value::Numeric(x) => x.to_string(),
        Value::Range { lo, hi } => format!("{lo}-{hi}"),
        Value::Text(t) => t.clone(),
    }
}

fn opt_time(t: Option<Timestamp>) -> String {
    t.map(|t| t.to_string()).unwrap_or_default()
}

fn write_csv_file<F>(dir: &Path, kind: TableKind, fill: F) -> Result<(), SynthError>
where
    F: FnOnce(&mut csv::Writer<BufWriter<File>>) -> csv::Result<()>,
{
    let path = dir.join(format!("{}.csv", kind.name()));
    let f = File::create(&path).map_err(io_err(&path))?;
    let mut wr = csv::Writer::from_writer(BufWriter::new(f));
    let to_io = |e: csv::Error| io::Error::other(e.to_string());
    wr.write_record(kind.columns()).map_err(to_io).map_err(io_err(&path))?;
    fill(&mut wr).map_err(to_io).map_err(io_err(&path))?;
    wr.flush().map_err(io_err(&path))
}

/// Writes all eleven tables as CSV in canonical row order: events by
/// `(admission, charttime, item)`, other tables as generated.
pub fn write_tables(dir: &Path, t: &RawTables) -> Result<(), SynthError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut by_table: BTreeMap<TableKind, Vec<&EventRecord>> = BTreeMap::new();
    for e in &t.events {
        by_table.entry(table_of(e)).or_default().push(e);
    }
    for kind in
        [TableKind::Chartevents, TableKind::Labevents, TableKind::InputeventsCv, TableKind::InputeventsMv, TableKind::Outputevents, TableKind::Prescriptions]
    {
        let mut rows = by_table.remove(&kind).unwrap_or_default();
        rows.sort_by(|a, b| (a.admission_id, a.charttime, &a.item_id).cmp(&(b.admission_id, b.charttime, &b.item_id)));
        write_csv_file(dir, kind, |wr| {
            for e in rows {
                let item = match &e.item_id {
                    ItemId::Code(c) => c.to_string(),
                    ItemId::Drug(d) => d.clone(),
                };
                let unit = e.unit.clone().unwrap_or_default();
                let fields = match kind {
                    TableKind::Prescriptions => [e.admission_id.to_string(), e.charttime.to_string(), item, format_value(&e.value), unit],
                    _ => [e.admission_id.to_string(), item, e.charttime.to_string(), format_value(&e.value), unit],
                };
                wr.write_record(&fields)?;
            }
            Ok(())
        })?;
    }
    write_csv_file(dir, TableKind::Admissions, |wr| {
        for a in &t.admissions {
            wr.write_record([
                a.patient_id.to_string(),
                a.admission_id.to_string(),
                a.admittime.to_string(),
                a.dischtime.to_string(),
                opt_time(a.deathtime),
                a.admission_type.clone(),
            ])?;
        }
        Ok(())
    })?;
    write_csv_file(dir, TableKind::Patients, |wr| {
        for p in &t.patients {
            let g = match p.gender {
                Gender::Female => "F",
                Gender::Male => "M",
                Gender::Unknown => "",
            };
            wr.write_record([p.patient_id.to_string(), g.to_string(), p.dob.to_string(), opt_time(p.dod)])?;
        }
        Ok(())
    })?;
    write_csv_file(dir, TableKind::Icustays, |wr| {
        for s in &t.icustays {
            let src = match s.care_source {
                CareSource::Carevue => "carevue",
                CareSource::Metavision => "metavision",
                CareSource::Both => "both",
            };
            wr.write_record([s.admission_id.to_string(), s.icustay_id.0.to_string(), src.to_string(), s.intime.to_string(), s.outtime.to_string()])?;
        }
        Ok(())
    })?;
    write_csv_file(dir, TableKind::DiagnosesIcd, |wr| {
        for d in &t.diagnoses {
            wr.write_record([d.admission_id.to_string(), d.icd9_code.clone()])?;
        }
        Ok(())
    })?;
    write_csv_file(dir, TableKind::Services, |wr| {
        for s in &t.services {
            wr.write_record([s.admission_id.to_string(), s.transfertime.to_string(), s.curr_service.clone()])?;
        }
        Ok(())
    })?;
    Ok(())
}

/// Generates a dataset and writes the tables plus a `ground_truth.csv`
/// sidecar to `dir`.
pub fn generate_to_dir(cfg: &SynthConfig, dir: &Path) -> Result<SynthDataset, SynthError> {
    let data = generate(cfg)?;
    write_tables(dir, &data.tables)?;
    let path = dir.join("ground_truth.csv");
    let f = File::create(&path).map_err(io_err(&path))?;
    data.truth.write_csv(BufWriter::new(f)).map_err(|e| SynthError::Io { path: path.display().to_string(), source: io::Error::other(e.to_string()) })?;
    Ok(data)
}

/// Fractions of dirt to inject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirtSpec {
    /// Share of each convertible item's records re-expressed in a secondary
    /// unit. Must stay inside the band where cleaning converts rather than
    /// drops: above `1 - majority_threshold` and below one half.
    pub unit_fraction: f64,
    /// Records split into two same-timestamp records that aggregate back.
    pub duplicate_fraction: f64,
    /// Records replaced by a symmetric range around the value.
    pub range_fraction: f64,
    /// Records negated (not convertible: features drop them).
    pub negative_fraction: f64,
    pub seed: u64,
}

impl Default for DirtSpec {
    fn default() -> Self {
        DirtSpec { unit_fraction: 0.25, duplicate_fraction: 0.05, range_fraction: 0.05, negative_fraction: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirtLog {
    pub unit_converted: usize,
    pub duplicated: usize,
    pub ranged: usize,
    pub negated: usize,
}

/// Secondary units used for unit dirt, by normalized canonical unit.
const SECONDARY_UNITS: [(&str, &str); 7] = [("ml", "l"), ("l", "ml"), ("degc", "degF"), ("degf", "degC"), ("mg", "g"), ("g", "mg"), ("mcg", "mg")];

pub fn inject_dirt(tables: &RawTables, spec: &DirtSpec, config: &CleanConfig) -> Result<(RawTables, DirtLog), SynthError> {
    let low = 1.0 - config.majority_threshold;
    if spec.unit_fraction != 0.0 && !(spec.unit_fraction > low && spec.unit_fraction < 0.5) {
        return Err(SynthError::Invalid(format!("unit_fraction must be 0 or lie in ({low}, 0.5)")));
    }
    let total = spec.duplicate_fraction + spec.range_fraction + spec.negative_fraction;
    if [spec.duplicate_fraction, spec.range_fraction, spec.negative_fraction].iter().any(|f| !(0.0..=1.0).contains(f)) || total > 1.0 {
        return Err(SynthError::Invalid("dirt fractions must be non-negative and sum to at most 1".into()));
    }
    let mut rng = rng_from(spec.seed);
    let mut log = DirtLog::default();
    let mut events = tables.events.clone();

    // Unit dirt: an exact share of each convertible item's records.
    let mut by_item: BTreeMap<(ItemId, String), Vec<usize>> = BTreeMap::new();
    for (k, e) in events.iter().enumerate() {
        if matches!(e.value, Value::Numeric(_)) {
            by_item.entry((e.item_id.clone(), normalize_unit(e.unit.as_deref()))).or_default().push(k);
        }
    }
    for ((item, unit), mut idx) in by_item {
        let Some(&(_, secondary)) = SECONDARY_UNITS.iter().find(|(u, _)| *u == unit) else { continue };
        let sec = normalize_unit(Some(secondary));
        let (Some(fwd), Some(_)) = (config.rule(&item, &unit, &sec), config.rule(&item, &sec, &unit)) else { continue };
        let fwd = fwd.clone();
        idx.shuffle(&mut rng);
        let take = (spec.unit_fraction * idx.len() as f64).floor() as usize;
        for &k in &idx[..take] {
            if let Value::Numeric(v) = events[k].value {
                events[k].value = Value::Numeric(fwd.apply(v));
                events[k].unit = Some(secondary.to_string());
                log.unit_converted += 1;
            }
        }
    }

    let mut out = Vec::with_capacity(events.len());
    for mut e in events {
        let u: f64 = rng.random();
        let Value::Numeric(v) = e.value else {
            out.push(e);
            continue;
        };
        if u < spec.range_fraction && v >= 0.0 {
            e.value = Value::Range { lo: v - 0.1 * v, hi: v + 0.1 * v };
            log.ranged += 1;
            out.push(e);
        } else if u >= spec.range_fraction && u < spec.range_fraction + spec.duplicate_fraction {
            let mode = config.aggregation_overrides.get(&e.item_id).copied().unwrap_or_else(|| CleanConfig::default_mode(e.source_table));
            let (a, b) = match mode {
                AggMode::Mean => (v - 0.1 * v.abs(), v + 0.1 * v.abs()),
                AggMode::Sum => (0.3 * v, v - 0.3 * v),
            };
            let mut twin = e.clone();
            e.value = Value::Numeric(a);
            twin.value = Value::Numeric(b);
            log.duplicated += 1;
            out.push(e);
            out.push(twin);
        } else if u >= spec.range_fraction + spec.duplicate_fraction && u < total {
            e.value = Value::Numeric(-(v.abs() + 1.0));
            log.negated += 1;
            out.push(e);
        } else {
            out.push(e);
        }
    }
    Ok((RawTables { events: out, ..tables.clone() }, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clean::clean_events;
    use crate::cohort::{derive_labels, select_cohort};
    use crate::ingest::ingest_dir;

    fn small(n: usize, seed: u64) -> SynthConfig {
        SynthConfig { n_patients: n, seed, horizon_hours: 24, ..Default::default() }
    }

    #[test]
    fn every_set_a_and_b_item_is_a_set_c_item() {
        let c: HashSet<ItemId> = FeatureSpec::bundled(FeatureSetId::C, 24).all_items().into_iter().collect();
        for set in [FeatureSetId::A, FeatureSetId::B] {
            for item in FeatureSpec::bundled(set, 24).all_items() {
                assert!(c.contains(&item), "{item} of set {set:?}");
            }
        }
        for name in ["gcsverbal", "pao2", "fio2", "body_temperature", "urinary_output_sum"] {
            assert!(feature_plans().iter().any(|p| p.name == name && p.core), "{name}");
        }
        assert_eq!(feature_plans().iter().filter(|p| p.core).count(), 15);
        for (n, _) in SET_C_SIGNAL.iter().chain(SPIKE_FEATURES.iter()) {
            assert!(feature_plans().iter().any(|p| p.name == *n), "{n}");
        }
    }

    #[test]
    fn prevalence_hits_targets() {
        let cfg = SynthConfig { n_patients: 20_000, scope: EventScope::None, seed: 4, ..Default::default() };
        let d = generate(&cfg).unwrap();
        let t = &d.tables;
        let cohort = select_cohort(&t.admissions, &t.patients, &t.icustays);
        let labels = derive_labels(&cohort, &t.admissions, &t.patients, &t.diagnoses);
        let n = labels.labels.len() as f64;
        let rate = |f: fn(&crate::cohort::MortalityFlags) -> bool| labels.labels.iter().filter(|l| f(&l.mortality)).count() as f64 / n;
        let pv = Prevalence::default();
        for (got, want) in [(rate(|m| m.in_hospital), pv.in_hospital), (rate(|m| m.mort_30d), pv.mort_30d), (rate(|m| m.mort_1y), pv.mort_1y)] {
            assert!((got - want).abs() <= 3.0 * (want * (1.0 - want) / n).sqrt(), "{got} vs {want}");
        }
        let in_cohort = d.truth.rows.iter().filter(|r| r.in_cohort).count();
        assert_eq!(cohort.members.len(), in_cohort);
    }

    #[test]
    fn labels_follow_generated_outcomes() {
        let d = generate(&SynthConfig { scope: EventScope::None, ..small(3000, 2) }).unwrap();
        let t = &d.tables;
        let labels = derive_labels(&select_cohort(&t.admissions, &t.patients, &t.icustays), &t.admissions, &t.patients, &t.diagnoses);
        for r in d.truth.rows.iter().filter(|r| r.in_cohort) {
            let m = labels.get(r.admission_id).unwrap().mortality;
            assert_eq!(m.in_hospital, r.outcome == Outcome::InHospitalDeath);
            assert_eq!(m.mort_30d, matches!(r.outcome, Outcome::InHospitalDeath | Outcome::DeathWithin30d));
            assert_eq!(m.mort_1y, r.outcome != Outcome::Survivor);
        }
    }

    #[test]
    fn fully_missing_feature_is_never_emitted() {
        let mut cfg = small(40, 3);
        cfg.missing_overrides.insert("heart_rate".into(), 1.0);
        let d = generate(&cfg).unwrap();
        let hr = [ItemId::Code(211), ItemId::Code(220_045)];
        assert!(!d.tables.events.iter().any(|e| hr.contains(&e.item_id)));
        assert!(d.tables.events.iter().any(|e| e.item_id == ItemId::Code(220_179) || e.item_id == ItemId::Code(51)));
    }

    #[test]
    fn csv_output_is_deterministic_and_parses_back() {
        let cfg = small(60, 5);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let d = generate_to_dir(&cfg, a.path()).unwrap();
        generate_to_dir(&cfg, b.path()).unwrap();
        for kind in TableKind::ALL {
            let name = format!("{}.csv", kind.name());
            assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap(), "{name}");
        }
        let raw = ingest_dir(a.path()).unwrap();
        assert!(raw.rejects.is_empty(), "{:?}", &raw.rejects[..raw.rejects.len().min(3)]);
        assert_eq!(raw.admissions, d.tables.admissions);
        assert_eq!(raw.patients, d.tables.patients);
        assert_eq!(raw.icustays, d.tables.icustays);
        assert_eq!(raw.events.len(), d.tables.events.len());
        let key = |e: &EventRecord| (e.admission_id, e.charttime, e.item_id.clone(), format_value(&e.value), e.unit.clone());
        let mut x: Vec<_> = raw.events.iter().map(key).collect();
        let mut y: Vec<_> = d.tables.events.iter().map(key).collect();
        x.sort();
        y.sort();
        assert_eq!(x, y);
        assert_eq!(raw.carevue_input_admissions, d.tables.carevue_input_admissions);
    }

    #[test]
    fn convertible_dirt_cleans_back() {
        let cfg = CleanConfig::bundled();
        let d = generate(&small(80, 6)).unwrap();
        let (dirty, log) = inject_dirt(&d.tables, &DirtSpec { seed: 1, ..Default::default() }, &cfg).unwrap();
        assert!(log.unit_converted > 0 && log.duplicated > 0 && log.ranged > 0);
        let a = clean_events(&d.tables.events, &cfg).events;
        let b = clean_events(&dirty.events, &cfg).events;
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((x.admission_id, &x.item_id, x.charttime), (y.admission_id, &y.item_id, y.charttime));
            assert!((x.value - y.value).abs() <= 1e-9, "{x:?} {y:?}");
        }
    }

    #[test]
    fn bad_configs_are_rejected() {
        let bad = SynthConfig { prevalence: Prevalence { in_hospital: 0.3, mort_30d: 0.2, mort_1y: 0.4 }, ..Default::default() };
        assert!(generate(&bad).is_err());
        assert!(generate(&SynthConfig { missing_rate: 1.5, ..Default::default() }).is_err());
        let d = generate(&SynthConfig { scope: EventScope::None, ..small(10, 1) }).unwrap();
        assert!(inject_dirt(&d.tables, &DirtSpec { unit_fraction: 0.05, ..Default::default() }, &CleanConfig::bundled()).is_err());
    }
}
