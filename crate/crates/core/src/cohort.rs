//! Cohort selection (first adult admission per patient) and task labels.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::ingest::{AdmissionRecord, CareSource, DiagnosisRecord, IcuStayRecord, PatientRecord};
use crate::types::{AdmissionId, PatientId, Timestamp, SECONDS_PER_DAY};

pub const DAYS_PER_YEAR: f64 = 365.2425;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortMember {
    pub admission_id: AdmissionId,
    pub patient_id: PatientId,
    pub age_at_admission: f64,
    pub first_icu_intime: Timestamp,
    pub care_source: CareSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    NotFirst,
    NotAdult,
    NoIcuStay,
    MissingPatient,
    NegativeDuration,
    EarlyDeath,
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExclusionReason::NotFirst => "not_first",
            ExclusionReason::NotAdult => "not_adult",
            ExclusionReason::NoIcuStay => "no_icu_stay",
            ExclusionReason::MissingPatient => "missing_patient",
            ExclusionReason::NegativeDuration => "negative_duration",
            ExclusionReason::EarlyDeath => "early_death",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRules {
    /// Members must be strictly older than this at ICU intime.
    pub min_age_years: f64,
    /// When set, admissions whose patient died within this many hours of
    /// ICU intime are excluded. Off by default.
    pub min_survival_hours: Option<f64>,
}

impl Default for CohortRules {
    fn default() -> Self {
        CohortRules { min_age_years: 15.0, min_survival_hours: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    /// Sorted by admission id.
    pub members: Vec<CohortMember>,
    pub exclusions: BTreeMap<ExclusionReason, u64>,
    /// ICU stays whose admission is not in the admissions table.
    pub orphan_icustays: u64,
}

impl Cohort {
    pub fn member(&self, id: AdmissionId) -> Option<&CohortMember> {
        self.members.binary_search_by_key(&id, |m| m.admission_id).ok().map(|i| &self.members[i])
    }

    pub fn ids(&self) -> Vec<AdmissionId> {
        self.members.iter().map(|m| m.admission_id).collect()
    }
}

pub fn age_years(at: Timestamp, dob: Timestamp) -> f64 {
    at.days_since(dob) / DAYS_PER_YEAR
}

pub fn select_cohort(admissions: &[AdmissionRecord], patients: &[PatientRecord], icustays: &[IcuStayRecord]) -> Cohort {
    select_cohort_with(admissions, patients, icustays, &CohortRules::default())
}

pub fn select_cohort_with(admissions: &[AdmissionRecord], patients: &[PatientRecord], icustays: &[IcuStayRecord], rules: &CohortRules) -> Cohort {
    let mut cohort = Cohort::default();
    let mut tally = |r: ExclusionReason| *cohort.exclusions.entry(r).or_default() += 1;

    let patients: HashMap<PatientId, &PatientRecord> = patients.iter().map(|p| (p.patient_id, p)).collect();
    let known: std::collections::HashSet<AdmissionId> = admissions.iter().map(|a| a.admission_id).collect();
    // Earliest stay per admission; ties on intime broken by stay id.
    let mut first_stay: HashMap<AdmissionId, &IcuStayRecord> = HashMap::new();
    let mut orphans = 0;
    for s in icustays {
        if !known.contains(&s.admission_id) {
            orphans += 1;
            continue;
        }
        first_stay
            .entry(s.admission_id)
            .and_modify(|cur| {
                if (s.intime, s.icustay_id) < (cur.intime, cur.icustay_id) {
                    *cur = s;
                }
            })
            .or_insert(s);
    }

    let mut by_patient: BTreeMap<PatientId, Vec<&AdmissionRecord>> = BTreeMap::new();
    for a in admissions {
        by_patient.entry(a.patient_id).or_default().push(a);
    }
    let mut members = Vec::new();
    for (pid, mut adms) in by_patient {
        adms.sort_by_key(|a| (a.admittime, a.admission_id));
        for _ in 1..adms.len() {
            tally(ExclusionReason::NotFirst);
        }
        let first = adms[0];
        let Some(patient) = patients.get(&pid) else {
            tally(ExclusionReason::MissingPatient);
            continue;
        };
        if first.dischtime < first.admittime {
            tally(ExclusionReason::NegativeDuration);
            continue;
        }
        let Some(stay) = first_stay.get(&first.admission_id) else {
            tally(ExclusionReason::NoIcuStay);
            continue;
        };
        let age = age_years(stay.intime, patient.dob);
        if !(age > rules.min_age_years) {
            tally(ExclusionReason::NotAdult);
            continue;
        }
        if let Some(h) = rules.min_survival_hours {
            let death = first.deathtime.or(patient.dod);
            if death.is_some_and(|d| d.hours_since(stay.intime) < h) {
                tally(ExclusionReason::EarlyDeath);
                continue;
            }
        }
        members.push(CohortMember {
            admission_id: first.admission_id,
            patient_id: pid,
            age_at_admission: age,
            first_icu_intime: stay.intime,
            care_source: stay.care_source,
        });
    }
    members.sort_by_key(|m| m.admission_id);
    cohort.members = members;
    cohort.orphan_icustays = orphans;
    cohort
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MortalityFlags {
    pub in_hospital: bool,
    pub mort_2d: bool,
    pub mort_3d: bool,
    pub mort_30d: bool,
    pub mort_1y: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LabelIssue {
    /// In-hospital death recorded without a date of death; the death time
    /// stands in for the missing date.
    InconsistentRecord(AdmissionId),
    UnmappableCode {
        admission_id: AdmissionId,
        code: String,
    },
}

fn within_days(later: Timestamp, earlier: Timestamp, days: i64) -> bool {
    later.0 - earlier.0 <= days * SECONDS_PER_DAY
}

pub fn derive_mortality_labels(member: &CohortMember, admission: &AdmissionRecord, patient: &PatientRecord) -> (MortalityFlags, Option<LabelIssue>) {
    let in_hospital = admission.deathtime.is_some();
    let (death, issue) = match (patient.dod, admission.deathtime) {
        (Some(d), _) => (Some(d), None),
        (None, Some(dt)) => (Some(dt), Some(LabelIssue::InconsistentRecord(admission.admission_id))),
        (None, None) => (None, None),
    };
    let short = |k| death.is_some_and(|d| within_days(d, member.first_icu_intime, k));
    let long = |k| death.is_some_and(|d| within_days(d, admission.dischtime, k));
    let flags = MortalityFlags { in_hospital, mort_2d: short(2), mort_3d: short(3), mort_30d: long(30), mort_1y: long(365) };
    (flags, issue)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Icd9Class {
    Numeric { lo: u16, hi: u16 },
    V,
    E,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Icd9Group {
    pub name: &'static str,
    pub class: Icd9Class,
}

pub const N_ICD9_GROUPS: usize = 20;

/// Diagnosis groups in label order. Prefixes 760-779 belong to no group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Icd9GroupTable {
    pub groups: Vec<Icd9Group>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnmappableCode(pub String);

impl Default for Icd9GroupTable {
    fn default() -> Self {
        const RANGES: [(&str, u16, u16); 18] = [
            ("001_139", 1, 139),
            ("140_239", 140, 239),
            ("240_279", 240, 279),
            ("280_289", 280, 289),
            ("290_319", 290, 319),
            ("320_389", 320, 389),
            ("390_459", 390, 459),
            ("460_519", 460, 519),
            ("520_579", 520, 579),
            ("580_629", 580, 629),
            ("630_679", 630, 679),
            ("680_709", 680, 709),
            ("710_739", 710, 739),
            ("740_759", 740, 759),
            ("780_789", 780, 789),
            ("790_796", 790, 796),
            ("797_799", 797, 799),
            ("800_999", 800, 999),
        ];
        let mut groups: Vec<Icd9Group> = RANGES.iter().map(|&(name, lo, hi)| Icd9Group { name, class: Icd9Class::Numeric { lo, hi } }).collect();
        groups.push(Icd9Group { name: "v", class: Icd9Class::V });
        groups.push(Icd9Group { name: "e", class: Icd9Class::E });
        Icd9GroupTable { groups }
    }
}

impl Icd9GroupTable {
    /// 0-based group index of a code.
    pub fn group_of(&self, code: &str) -> Result<usize, UnmappableCode> {
        let code = code.trim();
        let unmappable = || UnmappableCode(code.to_string());
        let class = match code.chars().next() {
            Some('V') | Some('v') => Icd9Class::V,
            Some('E') | Some('e') => Icd9Class::E,
            _ => {
                let prefix = code.get(..3).filter(|p| p.bytes().all(|b| b.is_ascii_digit())).ok_or_else(unmappable)?;
                let p: u16 = prefix.parse().map_err(|_| unmappable())?;
                return self.groups.iter().position(|g| matches!(g.class, Icd9Class::Numeric { lo, hi } if lo <= p && p <= hi)).ok_or_else(unmappable);
            }
        };
        self.groups.iter().position(|g| g.class == class).ok_or_else(unmappable)
    }

    pub fn label_names(&self) -> Vec<String> {
        self.groups.iter().map(|g| format!("icd_{}", g.name)).collect()
    }
}

pub fn derive_icd9_groups<'a, I: IntoIterator<Item = &'a str>>(codes: I, table: &Icd9GroupTable) -> ([bool; N_ICD9_GROUPS], Vec<UnmappableCode>) {
    let mut flags = [false; N_ICD9_GROUPS];
    let mut bad = Vec::new();
    for c in codes {
        match table.group_of(c) {
            Ok(g) => flags[g] = true,
            Err(e) => bad.push(e),
        }
    }
    (flags, bad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NegativeDuration(pub AdmissionId);

pub fn derive_los(admission: &AdmissionRecord) -> Result<f64, NegativeDuration> {
    let h = admission.dischtime.hours_since(admission.admittime);
    if h < 0.0 {
        return Err(NegativeDuration(admission.admission_id));
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub admission_id: AdmissionId,
    pub mortality: MortalityFlags,
    pub icd9_groups: [bool; N_ICD9_GROUPS],
    pub los_hours: f64,
}

/// Prediction targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    InHospital,
    #[serde(rename = "mort_2d")]
    Mort2d,
    #[serde(rename = "mort_3d")]
    Mort3d,
    #[serde(rename = "mort_30d")]
    Mort30d,
    #[serde(rename = "mort_1y")]
    Mort1y,
    Icd9,
    Los,
}

impl Task {
    pub const ALL: [Task; 7] = [Task::InHospital, Task::Mort2d, Task::Mort3d, Task::Mort30d, Task::Mort1y, Task::Icd9, Task::Los];

    pub fn name(self) -> &'static str {
        match self {
            Task::InHospital => "in_hospital",
            Task::Mort2d => "mort_2d",
            Task::Mort3d => "mort_3d",
            Task::Mort30d => "mort_30d",
            Task::Mort1y => "mort_1y",
            Task::Icd9 => "icd9",
            Task::Los => "los",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name() == s)
    }

    pub fn is_mortality(self) -> bool {
        !matches!(self, Task::Icd9 | Task::Los)
    }

    /// Number of output columns.
    pub fn n_outputs(self) -> usize {
        if self == Task::Icd9 {
            N_ICD9_GROUPS
        } else {
            1
        }
    }
}

impl LabelSet {
    pub fn mortality_flag(&self, task: Task) -> Option<bool> {
        let m = &self.mortality;
        match task {
            Task::InHospital => Some(m.in_hospital),
            Task::Mort2d => Some(m.mort_2d),
            Task::Mort3d => Some(m.mort_3d),
            Task::Mort30d => Some(m.mort_30d),
            Task::Mort1y => Some(m.mort_1y),
            Task::Icd9 | Task::Los => None,
        }
    }

    /// Targets as floats; one value except for the diagnosis-group task.
    pub fn targets(&self, task: Task) -> Vec<f64> {
        match task {
            Task::Icd9 => self.icd9_groups.iter().map(|&b| b as u8 as f64).collect(),
            Task::Los => vec![self.los_hours],
            t => vec![self.mortality_flag(t).unwrap() as u8 as f64],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelTable {
    /// Sorted by admission id.
    pub labels: Vec<LabelSet>,
    pub issues: Vec<LabelIssue>,
}

impl LabelTable {
    pub fn get(&self, id: AdmissionId) -> Option<&LabelSet> {
        self.labels.binary_search_by_key(&id, |l| l.admission_id).ok().map(|i| &self.labels[i])
    }
}

/// Labels for every cohort member.
pub fn derive_labels(cohort: &Cohort, admissions: &[AdmissionRecord], patients: &[PatientRecord], diagnoses: &[DiagnosisRecord]) -> LabelTable {
    let table = Icd9GroupTable::default();
    let adm: HashMap<AdmissionId, &AdmissionRecord> = admissions.iter().map(|a| (a.admission_id, a)).collect();
    let pat: HashMap<PatientId, &PatientRecord> = patients.iter().map(|p| (p.patient_id, p)).collect();
    let mut codes: HashMap<AdmissionId, Vec<&str>> = HashMap::new();
    for d in diagnoses {
        codes.entry(d.admission_id).or_default().push(&d.icd9_code);
    }
    let mut out = LabelTable::default();
    for m in &cohort.members {
        let (Some(a), Some(p)) = (adm.get(&m.admission_id), pat.get(&m.patient_id)) else {
            continue;
        };
        let Ok(los_hours) = derive_los(a) else {
            continue;
        };
        let (mortality, issue) = derive_mortality_labels(m, a, p);
        out.issues.extend(issue);
        let (icd9_groups, bad) = derive_icd9_groups(codes.get(&m.admission_id).into_iter().flatten().copied(), &table);
        out.issues.extend(bad.into_iter().map(|c| LabelIssue::UnmappableCode { admission_id: m.admission_id, code: c.0 }));
        out.labels.push(LabelSet { admission_id: m.admission_id, mortality, icd9_groups, los_hours });
    }
    out
}

const MORTALITY_COLUMNS: [&str; 5] = ["in_hospital", "mort_2d", "mort_3d", "mort_30d", "mort_1y"];

pub fn labels_header() -> Vec<String> {
    let mut h = vec!["admission_id".to_string()];
    h.extend(MORTALITY_COLUMNS.iter().map(|s| s.to_string()));
    h.extend(Icd9GroupTable::default().label_names());
    h.push("los_hours".into());
    h
}

pub fn write_labels_csv<W: Write>(w: W, labels: &[LabelSet]) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(labels_header())?;
    for l in labels {
        let m = &l.mortality;
        let mut rec = vec![l.admission_id.to_string()];
        rec.extend([m.in_hospital, m.mort_2d, m.mort_3d, m.mort_30d, m.mort_1y].iter().map(|&b| (b as u8).to_string()));
        rec.extend(l.icd9_groups.iter().map(|&b| (b as u8).to_string()));
        rec.push(format!("{}", l.los_hours));
        wr.write_record(rec)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum LabelsCsvError {
    #[error("labels csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("labels csv: unexpected header")]
    Header,
    #[error("labels csv line {line}: {message}")]
    Field { line: u64, message: String },
}

pub fn read_labels_csv<R: Read>(r: R) -> Result<Vec<LabelSet>, LabelsCsvError> {
    let mut rd = csv::Reader::from_reader(r);
    if rd.headers()?.iter().collect::<Vec<_>>() != labels_header() {
        return Err(LabelsCsvError::Header);
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let err = |m: &str| LabelsCsvError::Field { line, message: m.to_string() };
        let flag = |j: usize| match rec.get(j) {
            Some("0") => Ok(false),
            Some("1") => Ok(true),
            _ => Err(err("flag must be 0 or 1")),
        };
        let admission_id = AdmissionId(rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| err("bad admission id"))?);
        let mortality = MortalityFlags { in_hospital: flag(1)?, mort_2d: flag(2)?, mort_3d: flag(3)?, mort_30d: flag(4)?, mort_1y: flag(5)? };
        let mut icd9_groups = [false; N_ICD9_GROUPS];
        for (g, slot) in icd9_groups.iter_mut().enumerate() {
            *slot = flag(6 + g)?;
        }
        let los_hours = rec.get(6 + N_ICD9_GROUPS).and_then(|s| s.parse().ok()).ok_or_else(|| err("bad los"))?;
        out.push(LabelSet { admission_id, mortality, icd9_groups, los_hours });
    }
    Ok(out)
}
