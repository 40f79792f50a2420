//! Assembly of model-ready data from raw tables: cleaning, cohort and
//! labels once, then episode tensors per feature set and window.

use std::collections::{BTreeMap, HashMap, HashSet};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clean::{clean_events, group_by_admission, CleanConfig, CleanEvent, CleanStats};
use crate::cohort::{derive_labels, select_cohort_with, Cohort, CohortRules, LabelIssue, LabelSet};
use crate::features::{
    admission_category, build_episode, chronic_diseases, encode_static, summarize, summary_feature_names, BuildTally, EpisodeTensor, FeatureIndex,
    FeatureSetId, FeatureSpec,
};
use crate::ingest::{RawTables, ServiceRecord};
use crate::severity::{saps2_score, sofa_score, Saps2Breakdown, SeverityConfig, SeverityError, SofaBreakdown, SCORE_HOURS};
use crate::types::{rng_from, AdmissionId, Timestamp};

/// Which admissions form the study population.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortFilter {
    #[default]
    Mimic3,
    /// Only admissions with at least one input event from the CareVue system.
    CarevueOnly,
}

/// Cleaned events, cohort and labels shared by every dataset of a run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub cohort: Cohort,
    /// Labels of cohort members that passed the filter, by admission id.
    pub labels: Vec<LabelSet>,
    pub label_issues: Vec<LabelIssue>,
    pub filtered_out: u64,
    pub clean_stats: CleanStats,
    pub clean_rejects: usize,
    intimes: HashMap<AdmissionId, Timestamp>,
    statics: HashMap<AdmissionId, Vec<f64>>,
    events: HashMap<AdmissionId, Vec<CleanEvent>>,
}

pub fn prepare(raw: &RawTables, clean_config: &CleanConfig, filter: CohortFilter, rules: &CohortRules) -> Prepared {
    let cohort = select_cohort_with(&raw.admissions, &raw.patients, &raw.icustays, rules);
    let mut table = derive_labels(&cohort, &raw.admissions, &raw.patients, &raw.diagnoses);
    let before = table.labels.len();
    if filter == CohortFilter::CarevueOnly {
        table.labels.retain(|l| raw.carevue_input_admissions.contains(&l.admission_id));
    }
    let keep: HashSet<AdmissionId> = table.labels.iter().map(|l| l.admission_id).collect();
    let member_events: Vec<_> = raw.events.iter().filter(|e| keep.contains(&e.admission_id)).cloned().collect();
    let cleaned = clean_events(&member_events, clean_config);
    drop(member_events);

    let mut services: HashMap<AdmissionId, Vec<&ServiceRecord>> = HashMap::new();
    for s in &raw.services {
        services.entry(s.admission_id).or_default().push(s);
    }
    let mut codes: HashMap<AdmissionId, Vec<&str>> = HashMap::new();
    for d in &raw.diagnoses {
        codes.entry(d.admission_id).or_default().push(&d.icd9_code);
    }
    let admissions: HashMap<AdmissionId, _> = raw.admissions.iter().map(|a| (a.admission_id, a)).collect();
    let mut statics = HashMap::new();
    let mut intimes = HashMap::new();
    for l in &table.labels {
        let m = cohort.member(l.admission_id).expect("labels come from cohort members");
        let adm = admissions[&l.admission_id];
        let svc = services.get(&l.admission_id).map(Vec::as_slice).unwrap_or(&[]);
        let category = admission_category(adm, svc, m.first_icu_intime);
        let chronic = chronic_diseases(codes.get(&l.admission_id).into_iter().flatten().copied());
        statics.insert(l.admission_id, encode_static(m.age_at_admission, category, chronic));
        intimes.insert(l.admission_id, m.first_icu_intime);
    }
    Prepared {
        filtered_out: (before - table.labels.len()) as u64,
        labels: table.labels,
        label_issues: table.issues,
        cohort,
        clean_stats: cleaned.stats,
        clean_rejects: cleaned.rejects.len(),
        intimes,
        statics,
        events: group_by_admission(cleaned.events),
    }
}

impl Prepared {
    pub fn events_of(&self, id: AdmissionId) -> &[CleanEvent] {
        self.events.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn intime_of(&self, id: AdmissionId) -> Option<Timestamp> {
        self.intimes.get(&id).copied()
    }
}

/// First-day severity inputs for one admission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreInputs {
    pub saps2: Saps2Breakdown,
    pub sofa: SofaBreakdown,
}

/// Aligned episodes, summary rows, severity inputs and labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub set: FeatureSetId,
    pub window_hours: usize,
    pub spec: FeatureSpec,
    pub episodes: Vec<EpisodeTensor>,
    pub labels: Vec<LabelSet>,
    pub scores: Vec<ScoreInputs>,
    pub tally: BuildTally,
}

pub fn build_dataset(prep: &Prepared, spec: &FeatureSpec, severity: &SeverityConfig) -> Result<Dataset, SeverityError> {
    let index = FeatureIndex::new(spec);
    let score_spec = FeatureSpec::bundled(FeatureSetId::A, SCORE_HOURS);
    let score_index = FeatureIndex::new(&score_spec);
    let built: Vec<(EpisodeTensor, BuildTally, ScoreInputs)> = prep
        .labels
        .par_iter()
        .map(|l| {
            let id = l.admission_id;
            let intime = prep.intimes[&id];
            let events = prep.events_of(id);
            let statics = prep.statics[&id].clone();
            let (ep, tally) = build_episode(spec, &index, id, intime, events, statics.clone());
            let (score_ep, _) = build_episode(&score_spec, &score_index, id, intime, events, statics);
            let saps2 = saps2_score(&score_ep, &score_spec, &severity.saps2)?;
            let sofa = sofa_score(&score_ep, &score_spec, events, intime, &severity.sofa)?;
            Ok((ep, tally, ScoreInputs { saps2, sofa }))
        })
        .collect::<Result<_, SeverityError>>()?;
    let mut tally = BuildTally::default();
    let mut episodes = Vec::with_capacity(built.len());
    let mut scores = Vec::with_capacity(built.len());
    for (e, t, s) in built {
        tally.merge(&t);
        episodes.push(e);
        scores.push(s);
    }
    Ok(Dataset { set: spec.set_id, window_hours: spec.window_hours, spec: spec.clone(), episodes, labels: prep.labels.clone(), scores, tally })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn summary_names(&self) -> Vec<String> {
        summary_feature_names(&self.spec)
    }

    /// One summary row per episode; unobserved statistics are NaN.
    pub fn summary_matrix(&self) -> Array2<f64> {
        let rows: Vec<Vec<f64>> = self.episodes.par_iter().map(|e| summarize(e).to_row()).collect();
        let d = rows.first().map(Vec::len).unwrap_or(0);
        Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j])
    }

    /// Copy with labels shuffled across admissions; features stay in place.
    pub fn with_permuted_labels(&self, seed: u64) -> Dataset {
        let mut labels = self.labels.clone();
        labels.shuffle(&mut rng_from(seed));
        for (l, e) in labels.iter_mut().zip(&self.episodes) {
            l.admission_id = e.admission_id;
        }
        Dataset { labels, ..self.clone() }
    }

    /// Admission ids in row order.
    pub fn ids(&self) -> Vec<AdmissionId> {
        self.labels.iter().map(|l| l.admission_id).collect()
    }
}

/// Counts for the run manifest.
pub fn exclusion_tally(prep: &Prepared) -> BTreeMap<String, u64> {
    let mut m: BTreeMap<String, u64> = prep.cohort.exclusions.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    m.insert("carevue_filter".into(), prep.filtered_out);
    m.insert("orphan_icustays".into(), prep.cohort.orphan_icustays);
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, EventScope, SynthConfig};

    fn prep(n: usize, filter: CohortFilter) -> (RawTables, Prepared) {
        let d = generate(&SynthConfig { n_patients: n, scope: EventScope::Core, horizon_hours: 48, seed: 11, ..Default::default() }).unwrap();
        let p = prepare(&d.tables, &CleanConfig::bundled(), filter, &CohortRules::default());
        (d.tables, p)
    }

    #[test]
    fn datasets_align_episodes_labels_and_scores() {
        let (_, p) = prep(150, CohortFilter::Mimic3);
        let sev = SeverityConfig::bundled();
        for set in [FeatureSetId::A, FeatureSetId::B, FeatureSetId::C] {
            let ds = build_dataset(&p, &FeatureSpec::bundled(set, 24), &sev).unwrap();
            assert_eq!(ds.episodes.len(), ds.labels.len());
            assert_eq!(ds.scores.len(), ds.labels.len());
            assert!(ds.episodes.iter().zip(&ds.labels).all(|(e, l)| e.admission_id == l.admission_id));
            let x = ds.summary_matrix();
            assert_eq!(x.ncols(), ds.summary_names().len());
            assert!(ds.tally.used_events > 0);
        }
        let ds = build_dataset(&p, &FeatureSpec::bundled(FeatureSetId::A, 24), &sev).unwrap();
        assert!(ds.scores.iter().any(|s| s.saps2.total > 0));
    }

    #[test]
    fn carevue_filter_keeps_only_carevue_input_admissions() {
        let (raw, all) = prep(300, CohortFilter::Mimic3);
        let (_, cv) = prep(300, CohortFilter::CarevueOnly);
        assert!(cv.labels.len() < all.labels.len());
        assert!(cv.labels.iter().all(|l| raw.carevue_input_admissions.contains(&l.admission_id)));
        assert_eq!(cv.filtered_out as usize, all.labels.len() - cv.labels.len());
    }

    #[test]
    fn permuted_labels_keep_alignment_and_multiset() {
        let (_, p) = prep(80, CohortFilter::Mimic3);
        let ds = build_dataset(&p, &FeatureSpec::bundled(FeatureSetId::A, 24), &SeverityConfig::bundled()).unwrap();
        let perm = ds.with_permuted_labels(3);
        assert_eq!(perm.ids(), ds.ids());
        let count = |d: &Dataset| d.labels.iter().filter(|l| l.mortality.in_hospital).count();
        assert_eq!(count(&perm), count(&ds));
    }
}
