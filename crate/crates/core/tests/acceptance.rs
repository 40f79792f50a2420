//! Acceptance checks. Each test writes one `PASS`/`FAIL` line to stderr
//! (bypassing libtest capture) and then asserts.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use chrono::{DateTime, NaiveDateTime, TimeDelta};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use icubench::clean::{clean_events, CleanConfig, CleanEvent};
use icubench::cohort::{derive_labels, select_cohort, CohortRules, Icd9GroupTable, Task};
use icubench::dataset::{build_dataset, prepare, CohortFilter, Dataset};
use icubench::evaluation::{fold_plan, run_benchmark, LibraryEntry, ModelId, ModelSettings, NeuralSettings};
use icubench::features::{FeatureSetId, FeatureSpec};
use icubench::folds::stratified_folds;
use icubench::ingest::{RawTables, Value};
use icubench::learners::{LearnerKind, LearnerSpec, LearnerTask};
use icubench::metrics::{auprc, auroc};
use icubench::neural::network::{gradient_check, Architecture, NetConfig, NetInput, Network, OutputKind};
use icubench::run::{run, RunConfig, Stage};
use icubench::severity::{saps2_mortality, SeverityConfig};
use icubench::super_learner::{fit_super_learner, solve_weights, SlVariant, StackLoss};
use icubench::synth::{generate, inject_dirt, DirtSpec, EventScope, SignalSpec, SynthConfig};

fn verdict(criterion: u32, pass: bool, detail: &str) {
    let line = format!("{} criterion {criterion}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn prepared_dataset(cfg: &SynthConfig, set: FeatureSetId) -> Dataset {
    let data = generate(cfg).unwrap();
    let prep = prepare(&data.tables, &CleanConfig::bundled(), CohortFilter::Mimic3, &CohortRules::default());
    drop(data);
    build_dataset(&prep, &FeatureSpec::bundled(set, 24), &SeverityConfig::bundled()).unwrap()
}

fn reduced_settings() -> ModelSettings {
    ModelSettings {
        library: vec![
            LibraryEntry { kind: LearnerKind::LogisticGlm, hyperparameters: BTreeMap::from([("ridge".into(), 1e-3)]) },
            LibraryEntry { kind: LearnerKind::ElasticNet, hyperparameters: BTreeMap::new() },
            LibraryEntry { kind: LearnerKind::GradientBoostedTrees, hyperparameters: BTreeMap::from([("n_trees".into(), 100.0)]) },
        ],
        inner_folds: 3,
        neural: NeuralSettings { ffn_hidden: vec![32], gru_hidden: 16, shared_hidden: 16, max_epochs: 40, patience: 5, ..Default::default() },
        ..Default::default()
    }
}

fn mean_auroc(ds: &Dataset, model: ModelId, settings: &ModelSettings, seed: u64) -> f64 {
    let plan = fold_plan(ds, Task::InHospital, 5, seed).unwrap();
    run_benchmark(ds, Task::InHospital, model, settings, &plan, seed).unwrap().metric("auroc").unwrap().mean
}

// ---------------------------------------------------------------- 1

fn auroc_oracle(s: &[f64], y: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in (0..s.len()).filter(|&i| y[i]) {
        for j in (0..s.len()).filter(|&j| !y[j]) {
            pairs += 1.0;
            wins += if s[i] > s[j] {
                1.0
            } else if s[i] == s[j] {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / pairs
}

/// Sweep over every distinct score as a threshold, recounting from scratch.
fn auprc_oracle(s: &[f64], y: &[bool]) -> f64 {
    let p = y.iter().filter(|&&l| l).count() as f64;
    let mut thresholds = s.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    for t in thresholds {
        let tp = (0..s.len()).filter(|&i| s[i] >= t && y[i]).count() as f64;
        let called = (0..s.len()).filter(|&i| s[i] >= t).count() as f64;
        let recall = tp / p;
        ap += (recall - prev_recall) * (tp / called);
        prev_recall = recall;
    }
    ap
}

#[test]
fn criterion_01_metric_oracles() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    while instances < 500 {
        let n = rng.random_range(2..=500);
        // Few distinct levels on some instances so ties are common.
        let levels = if rng.random_bool(0.5) { rng.random_range(2..10) } else { 1_000_000 };
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let rate = rng.random_range(0.05..0.95);
        let y: Vec<bool> = (0..n).map(|_| rng.random_bool(rate)).collect();
        if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
            continue;
        }
        worst = worst.max((auroc(&s, &y).unwrap() - auroc_oracle(&s, &y)).abs());
        worst = worst.max((auprc(&s, &y).unwrap() - auprc_oracle(&s, &y)).abs());
        instances += 1;
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst <= 1e-12 && secs < 10.0;
    verdict(1, pass, &format!("500 instances per metric, max |metric - oracle| = {worst:.2e}, {secs:.1}s"));
    assert!(pass);
}

// ---------------------------------------------------------------- 2

fn random_input(n: usize, s: usize, steps: usize, p: usize, seed: u64) -> NetInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let statics = Array2::from_shape_fn((n, s), |_| rng.random_range(-2.0..2.0));
    let temporal = Array3::from_shape_fn((steps, n, p), |_| rng.random_range(-2.0..2.0));
    if steps == 0 {
        NetInput::statics_only(statics)
    } else {
        NetInput::new(statics, temporal).unwrap()
    }
}

#[test]
fn criterion_02_gradient_fidelity() {
    let t = Instant::now();
    let (n, s, steps, p) = (6, 5, 10, 4);
    let mut results = Vec::new();
    for (label, arch, k, output) in [
        ("ffn", Architecture::Ffn, 1, OutputKind::Binary),
        ("gru", Architecture::Gru, 1, OutputKind::Binary),
        ("mmdl", Architecture::Mmdl, 20, OutputKind::Binary),
        ("mmdl_regression", Architecture::Mmdl, 1, OutputKind::Regression),
    ] {
        let mut cfg = NetConfig::new(arch, s, p, k, output, 5);
        cfg.ffn_hidden = vec![7, 6];
        cfg.gru_hidden = 8;
        cfg.shared_hidden = 6;
        let net = Network::new(cfg);
        let input = random_input(n, s, if arch == Architecture::Ffn { 0 } else { steps }, p, 3);
        let y = Array2::from_shape_fn((n, k), |(i, j)| match output {
            OutputKind::Binary => ((i * 3 + j) % 2) as f64,
            OutputKind::Regression => i as f64 - 2.5,
        });
        let check = gradient_check(&net, &input, &y, 1e-5).unwrap();
        results.push((label, check.max_rel_error, check.n_checked));
    }
    let secs = t.elapsed().as_secs_f64();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let pass = worst <= 1e-4 && secs < 60.0;
    let detail: Vec<String> = results.iter().map(|(l, e, c)| format!("{l} {e:.1e} over {c}")).collect();
    verdict(2, pass, &format!("GRU T=10 H=8; max relative error {} ({secs:.1}s)", detail.join(", ")));
    assert!(pass);
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_03_saps2_formula() {
    let (m0, m33) = (saps2_mortality(0), saps2_mortality(33));
    let monotone = (0..160).all(|s| saps2_mortality(s + 1) > saps2_mortality(s));
    let pass = (m0 - 4.25e-4).abs() <= 1e-3 && (m33 - 0.140).abs() <= 1e-3 && monotone;
    verdict(3, pass, &format!("mortality(0) = {m0:.3e}, mortality(33) = {m33:.4}, strictly increasing on 0..=160: {monotone}"));
    assert!(pass);
}

// ---------------------------------------------------------------- 4

fn grid_weights(preds: &Array2<f64>, y: &[f64], loss: StackLoss) -> Vec<f64> {
    let k = preds.ncols();
    let objective = |w: &[f64]| -> f64 {
        let combined: Vec<f64> = (0..y.len()).map(|i| (0..k).map(|j| w[j] * preds[[i, j]]).sum()).collect();
        loss.mean(&combined, y)
    };
    let mut best = (f64::INFINITY, vec![]);
    for a in 0..=100 {
        let rest = if k == 3 { 100 - a } else { 0 };
        for b in 0..=rest {
            let w: Vec<f64> =
                if k == 2 { vec![a as f64 / 100.0, (100 - a) as f64 / 100.0] } else { vec![a as f64 / 100.0, b as f64 / 100.0, (100 - a - b) as f64 / 100.0] };
            let f = objective(&w);
            if f < best.0 {
                best = (f, w);
            }
        }
    }
    best.1
}

#[test]
fn criterion_04_super_learner_optimality() {
    let mut worst_gap = f64::NEG_INFINITY;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (n, d) = (400, 5);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let z: f64 = x[[i, 0]] - 0.8 * x[[i, 1]] + (x[[i, 2]] * x[[i, 3]]) - 0.5;
                f64::from(rng.random_bool(1.0 / (1.0 + (-z).exp())))
            })
            .collect();
        let labels: Vec<bool> = y.iter().map(|&v| v == 1.0).collect();
        let plan = stratified_folds(&labels, 5, seed).unwrap();
        let library: Vec<LearnerSpec> = [LearnerKind::LogisticGlm, LearnerKind::ElasticNet, LearnerKind::GradientBoostedTrees, LearnerKind::RandomForest]
            .into_iter()
            .map(|k| {
                let mut s = LearnerSpec::new(k, LearnerTask::Binary, seed);
                if matches!(k, LearnerKind::GradientBoostedTrees | LearnerKind::RandomForest) {
                    s.hyperparameters.insert("n_trees".into(), 30.0);
                }
                s
            })
            .collect();
        let ens = fit_super_learner(SlVariant::SlIIRaw, &library, x.view(), &y, &plan).unwrap();
        let best = ens.cv_risks.iter().copied().fold(f64::INFINITY, f64::min);
        worst_gap = worst_gap.max(ens.oof_loss - best);
    }

    let mut worst_weight: f64 = 0.0;
    for seed in 0..20u64 {
        for (k, loss) in [(2, StackLoss::NegLogLikelihood), (3, StackLoss::NegLogLikelihood), (2, StackLoss::SquaredError), (3, StackLoss::SquaredError)] {
            let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
            let n = 1500;
            let z: Vec<f64> = (0..n).map(|_| rng.random_range(-2.5..2.5)).collect();
            let y: Vec<f64> = z.iter().map(|&v| f64::from(rng.random_bool(1.0 / (1.0 + (-v).exp())))).collect();
            // Candidates see the risk through independent noise of different sizes.
            let preds = Array2::from_shape_fn((n, k), |(i, j)| {
                let noisy = z[i] + rng.random_range(-1.0..1.0) * (1.0 + j as f64);
                1.0 / (1.0 + (-noisy).exp())
            });
            let solved = solve_weights(preds.view(), &y, loss);
            let grid = grid_weights(&preds, &y, loss);
            for (a, b) in solved.iter().zip(&grid) {
                worst_weight = worst_weight.max((a - b).abs());
            }
        }
    }
    let pass = worst_gap <= 1e-6 && worst_weight <= 0.02;
    verdict(
        4,
        pass,
        &format!("20 datasets: max(ensemble OOF loss - best candidate) = {worst_gap:.2e}; 80 weight solves vs 0.01 grid: max |Δw| = {worst_weight:.4}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_05_deep_models_outperform_stacking() {
    let t = Instant::now();
    let settings = reduced_settings();
    let mut gaps = Vec::new();
    let (mut mmdl_sum, mut sl_sum) = (0.0, 0.0);
    for seed in 0..5u64 {
        let cfg =
            SynthConfig { n_patients: 10_000, scope: EventScope::Core, horizon_hours: 24, signal: SignalSpec::Mixed, seed: 1 + seed, ..Default::default() };
        let ds = prepared_dataset(&cfg, FeatureSetId::B);
        let mmdl = mean_auroc(&ds, ModelId::Mmdl, &settings, seed);
        let sl = mean_auroc(&ds, ModelId::SuperLearnerII, &settings, seed);
        mmdl_sum += mmdl;
        sl_sum += sl;
        gaps.push(format!("{mmdl:.3}/{sl:.3}"));
    }
    let (mmdl, sl) = (mmdl_sum / 5.0, sl_sum / 5.0);

    // Feature-rich cohorts carry extra risk in the set C laboratory series;
    // feature-poor cohorts carry none.
    let mut neural = settings.clone();
    neural.neural =
        NeuralSettings { ffn_hidden: vec![32], gru_hidden: 16, shared_hidden: 16, max_epochs: 100, patience: 10, batch_norm: false, ..Default::default() };
    let mut set_gain = BTreeMap::new();
    for (label, strength) in [("rich", 2.0), ("poor", 0.0)] {
        let cfg = SynthConfig { n_patients: 10_000, scope: EventScope::Full, horizon_hours: 24, set_c_strength: strength, seed: 11, ..Default::default() };
        let data = generate(&cfg).unwrap();
        let prep = prepare(&data.tables, &CleanConfig::bundled(), CohortFilter::Mimic3, &CohortRules::default());
        drop(data);
        let mut by_set = Vec::new();
        for set in [FeatureSetId::A, FeatureSetId::C] {
            let ds = build_dataset(&prep, &FeatureSpec::bundled(set, 24), &SeverityConfig::bundled()).unwrap();
            by_set.push(mean_auroc(&ds, ModelId::Mmdl, &neural, 0));
        }
        set_gain.insert(label, (by_set[0], by_set[1]));
    }
    let (rich_a, rich_c) = set_gain["rich"];
    let (poor_a, poor_c) = set_gain["poor"];
    let secs = t.elapsed().as_secs_f64();
    let pass = mmdl - sl >= 0.02 && rich_c > rich_a && rich_c - rich_a > poor_c - poor_a;
    verdict(
        5,
        pass,
        &format!(
            "MMDL {mmdl:.4} vs SL-II {sl:.4} over 5 seeds (mmdl/sl per seed {}); MMDL set A -> C: rich {rich_a:.4} -> {rich_c:.4}, poor {poor_a:.4} -> {poor_c:.4}; {secs:.0}s on {} thread(s)",
            gaps.join(" "),
            rayon::current_num_threads()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6

type EventKey = (u64, icubench::types::ItemId, i64);

fn keyed(events: &[CleanEvent]) -> BTreeMap<EventKey, f64> {
    events.iter().map(|e| ((e.admission_id.0, e.item_id.clone(), e.charttime.0), e.value)).collect()
}

fn raw_numeric(tables: &RawTables) -> HashMap<EventKey, f64> {
    tables
        .events
        .iter()
        .filter_map(|e| match e.value {
            Value::Numeric(v) => Some(((e.admission_id.0, e.item_id.clone(), e.charttime.0), v)),
            _ => None,
        })
        .collect()
}

#[test]
fn criterion_06_cleaning_round_trip() {
    let config = CleanConfig::bundled();
    let mut worst: f64 = 0.0;
    let mut compared = 0usize;
    let mut ok = true;
    let mut dirt_total = 0usize;
    for seed in 0..10u64 {
        let data = generate(&SynthConfig { n_patients: 150, scope: EventScope::Full, horizon_hours: 24, seed, ..Default::default() }).unwrap();
        let (dirty, log) = inject_dirt(&data.tables, &DirtSpec { seed: 1000 + seed, ..Default::default() }, &config).unwrap();
        dirt_total += log.unit_converted + log.duplicated + log.ranged;
        let original = raw_numeric(&data.tables);
        let cleaned = keyed(&clean_events(&dirty.events, &config).events);
        let baseline = keyed(&clean_events(&data.tables.events, &config).events);
        ok &= cleaned.len() == baseline.len() && cleaned.keys().eq(baseline.keys());
        for (k, v) in &cleaned {
            match original.get(k) {
                Some(o) => worst = worst.max((v - o).abs()),
                None => ok = false,
            }
            compared += 1;
        }
    }
    let pass = ok && worst <= 1e-9 && dirt_total > 0;
    verdict(
        6,
        pass,
        &format!("10 seeds, {dirt_total} dirty records, {compared} cleaned values, max |cleaned - generated| = {worst:.2e}, same event set: {ok}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 7

fn to_chrono(ts: icubench::types::Timestamp) -> NaiveDateTime {
    DateTime::from_timestamp(ts.0, 0).unwrap().naive_utc()
}

/// Group of a code by lexicographic comparison of its 3-character prefix
/// against chapter upper bounds.
fn icd_oracle(code: &str) -> Option<usize> {
    const UPPER: [&str; 18] = ["139", "239", "279", "289", "319", "389", "459", "519", "579", "629", "679", "709", "739", "759", "789", "796", "799", "999"];
    match code.as_bytes().first()? {
        b'V' | b'v' => return Some(18),
        b'E' | b'e' => return Some(19),
        _ => {}
    }
    let prefix = code.get(0..3)?;
    if !prefix.bytes().all(|b| b.is_ascii_digit()) || prefix == "000" {
        return None;
    }
    if ("760"..="779").contains(&prefix) {
        return None;
    }
    UPPER.iter().position(|u| prefix <= *u)
}

#[test]
fn criterion_07_label_oracle() {
    let data = generate(&SynthConfig { n_patients: 10_000, scope: EventScope::None, seed: 21, ..Default::default() }).unwrap();
    let t = &data.tables;
    let cohort = select_cohort(&t.admissions, &t.patients, &t.icustays);
    let labels = derive_labels(&cohort, &t.admissions, &t.patients, &t.diagnoses).labels;
    let mut mismatches = 0usize;
    for l in &labels {
        // Linear scans over the raw tables, no indexes shared with the library.
        let adm = t.admissions.iter().find(|a| a.admission_id == l.admission_id).unwrap();
        let pat = t.patients.iter().find(|p| p.patient_id == adm.patient_id).unwrap();
        let intime = t.icustays.iter().filter(|s| s.admission_id == adm.admission_id).map(|s| to_chrono(s.intime)).min().unwrap();
        let death = pat.dod.or(adm.deathtime).map(to_chrono);
        let within = |from: NaiveDateTime, days: i64| death.is_some_and(|d| d <= from + TimeDelta::days(days));
        let disch = to_chrono(adm.dischtime);
        let expect = [adm.deathtime.is_some(), within(intime, 2), within(intime, 3), within(disch, 30), within(disch, 365)];
        let m = l.mortality;
        if expect != [m.in_hospital, m.mort_2d, m.mort_3d, m.mort_30d, m.mort_1y] {
            mismatches += 1;
        }
        let los = (disch - to_chrono(adm.admittime)).num_seconds() as f64 / 3600.0;
        if (los - l.los_hours).abs() > 1e-9 {
            mismatches += 1;
        }
        let mut groups = [false; 20];
        for d in t.diagnoses.iter().filter(|d| d.admission_id == adm.admission_id) {
            if let Some(g) = icd_oracle(d.icd9_code.trim()) {
                groups[g] = true;
            }
        }
        if groups != l.icd9_groups {
            mismatches += 1;
        }
    }

    let table = Icd9GroupTable::default();
    let mut prefix_mismatch = 0;
    let mut codes: Vec<String> = (0..=999).flat_map(|p| [format!("{p:03}"), format!("{p:03}9"), format!("{p:03}01")]).collect();
    codes.extend(["V01", "V3000", "V8541", "E800", "E8889", "E9299"].map(String::from));
    for c in &codes {
        if table.group_of(c).ok() != icd_oracle(c) {
            prefix_mismatch += 1;
        }
    }
    let pass = mismatches == 0 && prefix_mismatch == 0 && labels.len() > 9000;
    verdict(
        7,
        pass,
        &format!(
            "{} admissions, {mismatches} label mismatches; {} codes over prefixes 000-999 plus V/E, {prefix_mismatch} group mismatches",
            labels.len(),
            codes.len()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_08_prevalence_targets() {
    let data = generate(&SynthConfig { n_patients: 20_000, scope: EventScope::None, seed: 8, ..Default::default() }).unwrap();
    let t = &data.tables;
    let cohort = select_cohort(&t.admissions, &t.patients, &t.icustays);
    let labels = derive_labels(&cohort, &t.admissions, &t.patients, &t.diagnoses).labels;
    let n = labels.len() as f64;
    let rate = |f: fn(&icubench::cohort::LabelSet) -> bool| labels.iter().filter(|l| f(l)).count() as f64 / n;
    let got = [rate(|l| l.mortality.in_hospital), rate(|l| l.mortality.mort_30d), rate(|l| l.mortality.mort_1y)];
    let target = [0.105, 0.129, 0.248];
    let pass = got.iter().zip(&target).all(|(g, t)| (g - t).abs() <= 0.01);
    verdict(8, pass, &format!("{n} cohort admissions: in-hospital {:.4}, 30-day {:.4}, 1-year {:.4} (targets 0.105 / 0.129 / 0.248)", got[0], got[1], got[2]));
    assert!(pass);
}

// ---------------------------------------------------------------- 9

const DETERMINISM_CONFIG: &str = r#"
feature_set = "B"
window_hours = 24
tasks = ["in_hospital", "icd9", "los"]
models = ["sl1", "sl2", "gru", "mmdl"]
seeds = [1, 2]
folds = 3

[data.synth]
n_patients = 400
scope = "core"
horizon_hours = 24
seed = 9

[settings]
inner_folds = 3
library = [
  { kind = "logistic_glm", hyperparameters = { ridge = 0.001 } },
  { kind = "linear_glm", hyperparameters = { ridge = 0.001 } },
  { kind = "random_forest", hyperparameters = { n_trees = 5, max_depth = 4 } },
]

[settings.neural]
ffn_hidden = [8]
gru_hidden = 8
shared_hidden = 8
max_epochs = 15
patience = 4
"#;

fn report_csvs(out: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(out.join("reports"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn criterion_09_determinism() {
    let cfg = RunConfig::from_toml_str(DETERMINISM_CONFIG).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(&cfg, DETERMINISM_CONFIG, a.path(), Stage::Report).unwrap();
    run(&cfg, DETERMINISM_CONFIG, b.path(), Stage::Report).unwrap();
    let (ra, rb) = (report_csvs(a.path()), report_csvs(b.path()));
    let pass = ra.len() == 4 && ra == rb;
    verdict(9, pass, &format!("two independent runs (no shared cache), {} report CSVs, byte-identical: {}", ra.len(), ra == rb));
    assert!(pass);
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_null_calibration() {
    let cfg = SynthConfig { n_patients: 5_000, scope: EventScope::Core, horizon_hours: 24, seed: 10, ..Default::default() };
    let ds = prepared_dataset(&cfg, FeatureSetId::B).with_permuted_labels(77);
    let settings = reduced_settings();
    let models = [
        ModelId::Saps2,
        ModelId::NewSaps2,
        ModelId::Sofa,
        ModelId::SuperLearnerI,
        ModelId::SuperLearnerII,
        ModelId::Learner(LearnerKind::LogisticGlm),
        ModelId::Learner(LearnerKind::GradientBoostedTrees),
        ModelId::Ffn,
        ModelId::Gru,
        ModelId::Mmdl,
    ];
    let mut results = Vec::new();
    for m in models {
        results.push((m, mean_auroc(&ds, m, &settings, 3)));
    }
    let pass = results.iter().all(|(_, a)| (0.45..=0.55).contains(a));
    let detail: Vec<String> = results.iter().map(|(m, a)| format!("{m} {a:.3}")).collect();
    verdict(10, pass, &format!("{} admissions, permuted labels: {}", ds.len(), detail.join(", ")));
    assert!(pass);
}
