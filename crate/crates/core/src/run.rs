//! Declarative benchmark runs: a TOML run config drives the stage chain
//! ingest → clean → labels → features → evaluate → report. Every stage
//! artifact lives under a key hashed from its inputs, so an unchanged stage
//! is loaded instead of recomputed and a changed input invalidates exactly
//! the stages downstream of it.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clean::{CleanConfig, CleanStats};
use crate::cohort::{read_labels_csv, write_labels_csv, CohortRules, Task};
use crate::container::content_hash;
use crate::dataset::{build_dataset, exclusion_tally, prepare, CohortFilter, Dataset, ScoreInputs};
use crate::evaluation::{check_task_window, fold_plan, run_benchmark, write_reports_csv, MetricReport, MetricSummary, ModelId, ModelSettings};
use crate::features::{read_tensors, write_tensors, BuildTally, FeatureSetId, FeatureSpec};
use crate::ingest::{ingest_dir, TableKind};
use crate::learners::{LearnerError, LearnerSpec, LearnerTask};
use crate::severity::SeverityConfig;
use crate::synth::{write_tables, SynthConfig};

pub const CACHE_ENV: &str = "ICUBENCH_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Directory holding the raw table CSVs.
    Dir(PathBuf),
    Synth(SynthConfig),
}

fn default_folds() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    #[serde(default)]
    pub cohort_filter: CohortFilter,
    pub feature_set: FeatureSetId,
    pub window_hours: usize,
    pub tasks: Vec<Task>,
    pub models: Vec<ModelId>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Cleaning rules file; the bundled rules when absent.
    #[serde(default)]
    pub clean_config: Option<PathBuf>,
    #[serde(default)]
    pub settings: ModelSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Clean,
    Labels,
    Features,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Ingest, Stage::Clean, Stage::Labels, Stage::Features, Stage::Evaluate, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Clean => "clean",
            Stage::Labels => "labels",
            Stage::Features => "features",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|x| x.name() == s)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error in stage {stage}: {message}")]
    Data { stage: Stage, message: String },
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error("report bundle is incomplete: missing {0}")]
    IncompleteBundle(String),
}

impl RunError {
    /// 2 config, 3 data, 4 stage failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Data { .. } => 3,
            RunError::Stage { .. } | RunError::IncompleteBundle(_) => 4,
        }
    }
}

fn stage_err(stage: Stage) -> impl Fn(String) -> RunError {
    move |message| RunError::Stage { stage, message }
}

fn io_fail<E: fmt::Display>(stage: Stage, path: &Path) -> impl Fn(E) -> RunError + '_ {
    move |e| RunError::Stage { stage, message: format!("{}: {e}", path.display()) }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, RunError> {
        let c: RunConfig = toml::from_str(s).map_err(|e| RunError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if self.window_hours != 24 && self.window_hours != 48 {
            return bad(format!("window_hours must be 24 or 48, got {}", self.window_hours));
        }
        if self.tasks.is_empty() || self.models.is_empty() || self.seeds.is_empty() {
            return bad("tasks, models and seeds must be non-empty".into());
        }
        if self.folds < 2 {
            return bad("folds must be at least 2".into());
        }
        if self.settings.inner_folds < 2 {
            return bad("settings.inner_folds must be at least 2".into());
        }
        for &t in &self.tasks {
            check_task_window(t, self.window_hours).map_err(|e| RunError::Config(e.to_string()))?;
            if let Some(m) = self.models.iter().find(|m| m.is_score() && !t.is_mortality()) {
                return bad(format!("model {m} only predicts mortality, not task {}", t.name()));
            }
        }
        if let DataSource::Synth(s) = &self.data {
            s.validate().map_err(|e| RunError::Config(e.to_string()))?;
        }
        let stacked = self.models.iter().any(|m| matches!(m, ModelId::SuperLearnerI | ModelId::SuperLearnerII));
        if stacked && !self.settings.library.is_empty() {
            let mut needed = vec![];
            if self.tasks.iter().any(|&t| t != Task::Los) {
                needed.push(LearnerTask::Binary);
            }
            if self.tasks.contains(&Task::Los) {
                needed.push(LearnerTask::Regression);
            }
            for task in needed {
                let mut usable = 0;
                for e in &self.settings.library {
                    let spec = LearnerSpec { kind: e.kind, hyperparameters: e.hyperparameters.clone(), task, seed: 0 };
                    match spec.validate() {
                        Ok(()) => usable += 1,
                        Err(LearnerError::UnsupportedTask(_)) => {}
                        Err(err) => return bad(format!("library entry {}: {err}", e.kind.name())),
                    }
                }
                if usable == 0 {
                    return bad(format!("library has no learner for {task:?} tasks"));
                }
            }
        }
        Ok(())
    }

    /// Applies `--seed`: evaluation seeds become `[seed]`, and a synthetic
    /// data source is regenerated with the same seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.seeds = vec![seed];
        if let DataSource::Synth(s) = &mut self.data {
            s.seed = seed;
        }
    }

    fn clean_config(&self) -> Result<CleanConfig, RunError> {
        match &self.clean_config {
            None => Ok(CleanConfig::bundled()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| RunError::Config(format!("{}: {e}", p.display())))?;
                CleanConfig::from_toml_str(&text).map_err(|e| RunError::Config(e.to_string()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageArtifact {
    pub stage: Stage,
    /// Hash of the stage's inputs; names the artifact directory.
    pub key: String,
    pub input_keys: Vec<String>,
    pub path: PathBuf,
    /// "cached" when loaded, "ran" when computed.
    pub status: String,
}

fn hash_of<T: Serialize>(parts: &[&str], value: &T) -> String {
    let mut bytes = parts.join("\u{1f}").into_bytes();
    bytes.extend(serde_json::to_vec(value).expect("config serializes"));
    content_hash(&bytes)[..24].to_string()
}

fn dir_content_key(dir: &Path) -> Result<String, RunError> {
    let mut bytes = Vec::new();
    for k in TableKind::ALL {
        if let Some(p) = k.locate(dir) {
            bytes.extend(k.name().as_bytes());
            bytes.extend(fs::read(&p).map_err(|e| RunError::Data { stage: Stage::Ingest, message: format!("{}: {e}", p.display()) })?);
        }
    }
    Ok(content_hash(&bytes)[..24].to_string())
}

pub fn cache_dir(out: &Path) -> PathBuf {
    std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| out.join("cache"))
}

/// Cohort-level tallies persisted with the features artifact.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortMeta {
    pub exclusions: BTreeMap<String, u64>,
    pub clean: CleanStats,
    pub clean_rejects: usize,
    pub label_issues: usize,
    pub build: BuildTally,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub artifacts: Vec<StageArtifact>,
    pub reports: Vec<MetricReport>,
    pub meta: CohortMeta,
    pub out_dir: PathBuf,
}

fn write_json<T: Serialize>(stage: Stage, path: &Path, v: &T) -> Result<(), RunError> {
    fs::write(path, serde_json::to_vec_pretty(v).map_err(|e| stage_err(stage)(e.to_string()))?).map_err(io_fail(stage, path))
}

fn read_json<T: serde::de::DeserializeOwned>(stage: Stage, path: &Path) -> Result<T, RunError> {
    serde_json::from_slice(&fs::read(path).map_err(io_fail(stage, path))?).map_err(io_fail(stage, path))
}

/// Marks a finished artifact directory; written last so an interrupted
/// stage is recomputed.
const DONE: &str = "complete";

fn is_done(dir: &Path) -> bool {
    dir.join(DONE).exists()
}

fn finish(stage: Stage, dir: &Path) -> Result<(), RunError> {
    fs::write(dir.join(DONE), b"").map_err(io_fail(stage, dir))
}

fn fresh_dir(stage: Stage, dir: &Path) -> Result<(), RunError> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io_fail(stage, dir))?;
    }
    fs::create_dir_all(dir).map_err(io_fail(stage, dir))
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    cache: PathBuf,
    artifacts: Vec<StageArtifact>,
}

impl Runner<'_> {
    fn record(&mut self, stage: Stage, key: &str, inputs: &[&str], path: &Path, cached: bool) {
        self.artifacts.push(StageArtifact {
            stage,
            key: key.to_string(),
            input_keys: inputs.iter().map(|s| s.to_string()).collect(),
            path: path.to_path_buf(),
            status: if cached { "cached" } else { "ran" }.into(),
        });
    }

    fn stage_dir(&self, stage: Stage, key: &str) -> PathBuf {
        self.cache.join(stage.name()).join(key)
    }

    /// Raw tables directory and its key.
    fn ingest(&mut self) -> Result<(PathBuf, String), RunError> {
        match &self.cfg.data {
            DataSource::Dir(dir) => {
                let key = dir_content_key(dir)?;
                self.record(Stage::Ingest, &key, &[], dir, true);
                Ok((dir.clone(), key))
            }
            DataSource::Synth(s) => {
                let key = hash_of(&["synth", env!("CARGO_PKG_VERSION")], s);
                let dir = self.stage_dir(Stage::Ingest, &key);
                let cached = is_done(&dir);
                if !cached {
                    fresh_dir(Stage::Ingest, &dir)?;
                    let data = crate::synth::generate(s).map_err(|e| RunError::Config(e.to_string()))?;
                    write_tables(&dir, &data.tables).map_err(|e| stage_err(Stage::Ingest)(e.to_string()))?;
                    let f = fs::File::create(dir.join("ground_truth.csv")).map_err(io_fail(Stage::Ingest, &dir))?;
                    data.truth.write_csv(BufWriter::new(f)).map_err(|e| stage_err(Stage::Ingest)(e.to_string()))?;
                    finish(Stage::Ingest, &dir)?;
                }
                self.record(Stage::Ingest, &key, &[], &dir, cached);
                Ok((dir, key))
            }
        }
    }

    fn run(&mut self, stop: Stage) -> Result<(Option<Dataset>, CohortMeta), RunError> {
        let (tables, data_key) = self.ingest()?;
        if stop == Stage::Ingest {
            return Ok((None, CohortMeta::default()));
        }
        let clean_cfg = self.cfg.clean_config()?;
        let clean_key = hash_of(&[&data_key], &(&clean_cfg, self.cfg.cohort_filter, CohortRules::default()));
        let labels_key = hash_of(&[&clean_key, "labels"], &());
        let severity = SeverityConfig::bundled();
        let features_key = hash_of(&[&labels_key, "features"], &(self.cfg.feature_set, self.cfg.window_hours, &severity));
        let (clean_dir, labels_dir, feat_dir) =
            (self.stage_dir(Stage::Clean, &clean_key), self.stage_dir(Stage::Labels, &labels_key), self.stage_dir(Stage::Features, &features_key));

        let upstream_done = is_done(&clean_dir) && is_done(&labels_dir);
        let need_features = stop >= Stage::Features && !is_done(&feat_dir);
        if upstream_done && !need_features {
            self.record(Stage::Clean, &clean_key, &[&data_key], &clean_dir, true);
            self.record(Stage::Labels, &labels_key, &[&clean_key], &labels_dir, true);
            if stop < Stage::Features {
                return Ok((None, read_json(Stage::Labels, &labels_dir.join("meta.json"))?));
            }
            self.record(Stage::Features, &features_key, &[&labels_key], &feat_dir, true);
            let (ds, meta) = load_features(&feat_dir, self.cfg.feature_set, self.cfg.window_hours)?;
            return Ok((Some(ds), meta));
        }

        let raw = ingest_dir(&tables).map_err(|e| RunError::Data { stage: Stage::Ingest, message: e.to_string() })?;
        let prep = prepare(&raw, &clean_cfg, self.cfg.cohort_filter, &CohortRules::default());
        drop(raw);
        if prep.labels.len() < self.cfg.folds {
            return Err(RunError::Data {
                stage: Stage::Labels,
                message: format!("cohort has {} admissions, fewer than {} folds", prep.labels.len(), self.cfg.folds),
            });
        }
        let mut meta = CohortMeta {
            exclusions: exclusion_tally(&prep),
            clean: prep.clean_stats.clone(),
            clean_rejects: prep.clean_rejects,
            label_issues: prep.label_issues.len(),
            build: BuildTally::default(),
        };
        if !is_done(&clean_dir) {
            fresh_dir(Stage::Clean, &clean_dir)?;
            write_json(Stage::Clean, &clean_dir.join("clean_stats.json"), &meta.clean)?;
            finish(Stage::Clean, &clean_dir)?;
            self.record(Stage::Clean, &clean_key, &[&data_key], &clean_dir, false);
        } else {
            self.record(Stage::Clean, &clean_key, &[&data_key], &clean_dir, true);
        }
        if !is_done(&labels_dir) {
            fresh_dir(Stage::Labels, &labels_dir)?;
            let path = labels_dir.join("labels.csv");
            let f = fs::File::create(&path).map_err(io_fail(Stage::Labels, &path))?;
            write_labels_csv(BufWriter::new(f), &prep.labels).map_err(io_fail(Stage::Labels, &path))?;
            write_json(Stage::Labels, &labels_dir.join("meta.json"), &meta)?;
            finish(Stage::Labels, &labels_dir)?;
            self.record(Stage::Labels, &labels_key, &[&clean_key], &labels_dir, false);
        } else {
            self.record(Stage::Labels, &labels_key, &[&clean_key], &labels_dir, true);
        }
        if stop < Stage::Features {
            return Ok((None, meta));
        }
        let spec = FeatureSpec::bundled(self.cfg.feature_set, self.cfg.window_hours);
        let ds = build_dataset(&prep, &spec, &severity).map_err(|e| stage_err(Stage::Features)(e.to_string()))?;
        meta.build = ds.tally;
        fresh_dir(Stage::Features, &feat_dir)?;
        let tensors = feat_dir.join("tensors.bin");
        write_tensors(&tensors, &spec, &ds.episodes).map_err(io_fail(Stage::Features, &tensors))?;
        let path = feat_dir.join("labels.csv");
        let f = fs::File::create(&path).map_err(io_fail(Stage::Features, &path))?;
        write_labels_csv(BufWriter::new(f), &ds.labels).map_err(io_fail(Stage::Features, &path))?;
        write_json(Stage::Features, &feat_dir.join("scores.json"), &ds.scores)?;
        write_json(Stage::Features, &feat_dir.join("meta.json"), &meta)?;
        finish(Stage::Features, &feat_dir)?;
        self.record(Stage::Features, &features_key, &[&labels_key], &feat_dir, false);
        Ok((Some(ds), meta))
    }

    fn evaluate(&mut self, ds: &Dataset, features_key: &str) -> Result<Vec<MetricReport>, RunError> {
        let mut reports = Vec::new();
        for &task in &self.cfg.tasks {
            for &seed in &self.cfg.seeds {
                let plan = fold_plan(ds, task, self.cfg.folds, seed).map_err(|e| RunError::Data { stage: Stage::Evaluate, message: e.to_string() })?;
                for &model in &self.cfg.models {
                    let key = hash_of(
                        &[features_key, task.name(), &model.name(), env!("CARGO_PKG_VERSION")],
                        &(&self.cfg.settings, self.cfg.folds, seed, &self.cfg.settings.severity),
                    );
                    let dir = self.stage_dir(Stage::Evaluate, &key);
                    let path = dir.join("report.json");
                    let cached = is_done(&dir);
                    let report = if cached {
                        read_json(Stage::Evaluate, &path)?
                    } else {
                        let r = run_benchmark(ds, task, model, &self.cfg.settings, &plan, seed)
                            .map_err(|e| stage_err(Stage::Evaluate)(format!("task {} model {model} seed {seed}: {e}", task.name())))?;
                        fresh_dir(Stage::Evaluate, &dir)?;
                        write_json(Stage::Evaluate, &path, &r)?;
                        finish(Stage::Evaluate, &dir)?;
                        r
                    };
                    self.record(Stage::Evaluate, &key, &[features_key], &dir, cached);
                    reports.push(report);
                }
            }
        }
        Ok(reports)
    }
}

fn load_features(dir: &Path, set: FeatureSetId, window: usize) -> Result<(Dataset, CohortMeta), RunError> {
    let st = Stage::Features;
    let (_, episodes) = read_tensors(&dir.join("tensors.bin")).map_err(io_fail(st, dir))?;
    let path = dir.join("labels.csv");
    let labels = read_labels_csv(fs::File::open(&path).map_err(io_fail(st, &path))?).map_err(io_fail(st, &path))?;
    let scores: Vec<ScoreInputs> = read_json(st, &dir.join("scores.json"))?;
    let meta: CohortMeta = read_json(st, &dir.join("meta.json"))?;
    if episodes.len() != labels.len() || scores.len() != labels.len() {
        return Err(stage_err(st)(format!("{}: artifact lengths disagree", dir.display())));
    }
    let ds = Dataset { set, window_hours: window, spec: FeatureSpec::bundled(set, window), episodes, labels, scores, tally: meta.build };
    Ok((ds, meta))
}

/// Runs the stage chain up to and including `stop`, writing the report
/// bundle when `stop` is [`Stage::Report`].
pub fn run(cfg: &RunConfig, config_text: &str, out: &Path, stop: Stage) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let mut runner = Runner { cfg, cache: cache_dir(out), artifacts: Vec::new() };
    let (ds, meta) = runner.run(stop)?;
    let mut reports = Vec::new();
    if let Some(ds) = ds.filter(|_| stop >= Stage::Evaluate) {
        let features_key = runner.artifacts.iter().find(|a| a.stage == Stage::Features).map(|a| a.key.clone()).expect("features recorded");
        reports = runner.evaluate(&ds, &features_key)?;
    }
    let outcome = RunOutcome { artifacts: runner.artifacts, reports, meta, out_dir: out.to_path_buf() };
    if stop == Stage::Report {
        write_bundle(cfg, config_text, &outcome)?;
    }
    Ok(outcome)
}

fn pooled(reports: &[&MetricReport], pick: impl Fn(&MetricReport) -> Option<&MetricSummary>) -> Option<MetricSummary> {
    let first = pick(reports.first()?)?;
    let folds: Vec<f64> = reports.iter().filter_map(|r| pick(r)).flat_map(|m| m.per_fold.clone()).collect();
    Some(MetricSummary::new(&first.metric, folds))
}

/// Group `gi`, or the across-group average when `gi` is past the groups.
fn group_metric<'r>(r: &'r MetricReport, gi: usize, name: &str) -> Option<&'r MetricSummary> {
    let list = if gi < r.groups.len() { &r.groups[gi].metrics } else { &r.metrics };
    list.iter().find(|s| s.metric == name)
}

fn cell(m: Option<&MetricSummary>) -> (String, String) {
    let f = |v: f64| if v.is_finite() { format!("{v:.4}") } else { "nan".into() };
    m.map(|m| (f(m.mean), f(m.std))).unwrap_or(("nan".into(), "nan".into()))
}

/// Per-task tables: `(file stem, csv text, pretty text)`. Fold values are
/// pooled across seeds before the mean and std are taken.
pub fn render_tables(cfg: &RunConfig, reports: &[MetricReport]) -> Result<Vec<(String, String, String)>, RunError> {
    let mut out = Vec::new();
    for &task in &cfg.tasks {
        let by_model: Vec<(ModelId, Vec<&MetricReport>)> =
            cfg.models.iter().map(|&m| (m, reports.iter().filter(|r| r.task == task && r.model == m.name()).collect::<Vec<_>>())).collect();
        if let Some((m, _)) = by_model.iter().find(|(_, rs)| rs.len() != cfg.seeds.len()) {
            return Err(RunError::IncompleteBundle(format!("task {} model {m}", task.name())));
        }
        let metrics: &[&str] = match task {
            Task::Los => &["mse"],
            _ => &["auroc", "auprc"],
        };
        let label = |m: &str| if m == "mse" { "mse_hours".to_string() } else { m.to_string() };
        let mut csv_rows: Vec<Vec<String>> = Vec::new();
        let mut header = if task == Task::Icd9 { vec!["group".to_string(), "model".into()] } else { vec!["model".to_string()] };
        for m in metrics {
            header.push(format!("{}_mean", label(m)));
            header.push(format!("{}_std", label(m)));
        }
        let mut pretty = format!(
            "task {} | feature set {} | window {}h | {} folds x {} seed(s), mean ± population std over pooled folds\n",
            task.name(),
            cfg.feature_set,
            cfg.window_hours,
            cfg.folds,
            cfg.seeds.len()
        );
        if task == Task::Icd9 {
            let groups: Vec<String> = by_model[0].1[0].groups.iter().map(|g| g.group.clone()).chain(["Average".to_string()]).collect();
            pretty.push_str(&format!("{:<24}", "group (AUROC)"));
            for (m, _) in &by_model {
                pretty.push_str(&format!("{:>20}", m.name()));
            }
            pretty.push('\n');
            for (gi, g) in groups.iter().enumerate() {
                pretty.push_str(&format!("{g:<24}"));
                for (m, rs) in &by_model {
                    let mut row = vec![g.clone(), m.name()];
                    for name in ["auroc", "auprc"] {
                        let (a, b) = cell(pooled(rs, |r| group_metric(r, gi, name)).as_ref());
                        row.extend([a, b]);
                    }
                    pretty.push_str(&format!("{:>20}", format!("{} ± {}", row[2], row[3])));
                    csv_rows.push(row);
                }
                pretty.push('\n');
            }
        } else {
            pretty.push_str(&format!("{:<24}", "model"));
            for m in metrics {
                pretty.push_str(&format!("{:>22}", label(m)));
            }
            pretty.push('\n');
            for (m, rs) in &by_model {
                let mut row = vec![m.name()];
                pretty.push_str(&format!("{:<24}", m.name()));
                for name in metrics {
                    let (a, b) = cell(pooled(rs, |r| r.metric(name)).as_ref());
                    pretty.push_str(&format!("{:>22}", format!("{a} ± {b}")));
                    row.extend([a, b]);
                }
                pretty.push('\n');
                csv_rows.push(row);
            }
        }
        let mut wr = csv::Writer::from_writer(Vec::new());
        wr.write_record(&header).and_then(|_| csv_rows.iter().try_for_each(|r| wr.write_record(r))).map_err(|e| stage_err(Stage::Report)(e.to_string()))?;
        let csv_text = String::from_utf8(wr.into_inner().map_err(|e| stage_err(Stage::Report)(e.to_string()))?).expect("utf-8");
        out.push((format!("{}_{}_{}h", task.name(), cfg.feature_set, cfg.window_hours), csv_text, pretty));
    }
    Ok(out)
}

fn write_bundle(cfg: &RunConfig, config_text: &str, o: &RunOutcome) -> Result<(), RunError> {
    let st = Stage::Report;
    let (reports_dir, ledgers) = (o.out_dir.join("reports"), o.out_dir.join("ledgers"));
    for d in [&reports_dir, &ledgers] {
        fs::create_dir_all(d).map_err(io_fail(st, d))?;
    }
    let path = reports_dir.join("metrics.csv");
    let f = fs::File::create(&path).map_err(io_fail(st, &path))?;
    write_reports_csv(BufWriter::new(f), &o.reports).map_err(io_fail(st, &path))?;
    write_json(st, &reports_dir.join("metrics.json"), &o.reports)?;
    for (stem, csv_text, pretty) in render_tables(cfg, &o.reports)? {
        fs::write(reports_dir.join(format!("{stem}.csv")), csv_text).map_err(io_fail(st, &reports_dir))?;
        fs::write(reports_dir.join(format!("{stem}.txt")), pretty).map_err(io_fail(st, &reports_dir))?;
    }
    let mut ex = String::from("reason,count\n");
    for (k, v) in &o.meta.exclusions {
        ex.push_str(&format!("{k},{v}\n"));
    }
    fs::write(ledgers.join("exclusions.csv"), ex).map_err(io_fail(st, &ledgers))?;
    let mut stages = String::from("stage,key,status,inputs,path\n");
    for a in &o.artifacts {
        stages.push_str(&format!("{},{},{},{},{}\n", a.stage, a.key, a.status, a.input_keys.join(";"), a.path.display()));
    }
    fs::write(ledgers.join("stages.csv"), stages).map_err(io_fail(st, &ledgers))?;
    fs::write(o.out_dir.join("config.toml"), config_text).map_err(io_fail(st, &o.out_dir))?;

    let c = &o.meta.clean;
    let mut m = String::new();
    m.push_str(&format!("icubench {}\n", env!("CARGO_PKG_VERSION")));
    m.push_str(&format!("generated_at {}\n", chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)));
    m.push_str(&format!("config_sha256 {}\n", content_hash(config_text.as_bytes())));
    m.push_str(&format!("settings_hash {}\n", hash_of(&["settings"], &cfg.settings)));
    m.push_str(&format!("seeds {}\n", cfg.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")));
    m.push_str(&format!("folds {}\n", cfg.folds));
    m.push_str("spread population std over folds\n");
    for a in &o.artifacts {
        m.push_str(&format!("stage {} {} {}\n", a.stage, a.key, a.status));
    }
    for (k, v) in &o.meta.exclusions {
        m.push_str(&format!("excluded {k} {v}\n"));
    }
    m.push_str(&format!(
        "clean input {} output {} rejected {} converted {} merged_duplicates {} dropped_minority_unit {} dropped_item {}\n",
        c.input_events, c.output_events, c.rejected, c.converted, c.merged_duplicates, c.dropped_minority_unit, c.dropped_item_events
    ));
    m.push_str(&format!("label_issues {}\n", o.meta.label_issues));
    fs::write(o.out_dir.join("manifest.txt"), m).map_err(io_fail(st, &o.out_dir))
}

/// Re-renders the per-task tables of an existing bundle.
pub fn report_bundle(bundle: &Path) -> Result<Vec<(String, String, String)>, RunError> {
    let cfg = RunConfig::load(&bundle.join("config.toml"))?;
    let path = bundle.join("reports").join("metrics.json");
    if !path.exists() {
        return Err(RunError::IncompleteBundle(path.display().to_string()));
    }
    let reports: Vec<MetricReport> = read_json(Stage::Report, &path)?;
    render_tables(&cfg, &reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONFIG: &str = r#"
feature_set = "A"
window_hours = 24
tasks = ["in_hospital"]
models = ["saps2", "sl2", "mmdl"]
seeds = [3]
folds = 3

[data.synth]
n_patients = 400
scope = "full"
horizon_hours = 24
seed = 7

[settings]
inner_folds = 3
library = [{ kind = "logistic_glm", hyperparameters = { ridge = 0.001 } }, { kind = "gradient_boosted_trees", hyperparameters = { n_trees = 20 } }]

[settings.neural]
ffn_hidden = [8]
gru_hidden = 8
shared_hidden = 8
max_epochs = 10
patience = 3
"#;

    fn run_in(dir: &Path, text: &str, stop: Stage) -> RunOutcome {
        let cfg = RunConfig::from_toml_str(text).unwrap();
        run(&cfg, text, dir, stop).unwrap()
    }

    #[test]
    fn rejects_two_day_task_with_48h_window() {
        let text = CONFIG.replace("window_hours = 24", "window_hours = 48").replace(r#"["in_hospital"]"#, r#"["mort_2d"]"#);
        let err = RunConfig::from_toml_str(&text).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("3-day"), "{err}");
        assert!(RunConfig::from_toml_str(&CONFIG.replace("\"sl2\"", "\"nope\"")).is_err());
        assert!(RunConfig::from_toml_str(&CONFIG.replace(r#"["in_hospital"]"#, r#"["los"]"#)).is_err());
        let los_only_glm = CONFIG
            .replace(r#"["in_hospital"]"#, r#"["los"]"#)
            .replace(r#""saps2", "#, "")
            .replace(", { kind = \"gradient_boosted_trees\", hyperparameters = { n_trees = 20 } }", "");
        assert!(RunConfig::from_toml_str(&los_only_glm).unwrap_err().to_string().contains("Regression"));
    }

    #[test]
    fn bundle_has_one_report_per_model_and_reruns_hit_cache() {
        let dir = tempfile::tempdir().unwrap();
        let o = run_in(dir.path(), CONFIG, Stage::Report);
        assert_eq!(o.reports.len(), 3);
        assert!(o.artifacts.iter().all(|a| a.status == "ran"));
        let table = fs::read_to_string(dir.path().join("reports/in_hospital_A_24h.csv")).unwrap();
        assert_eq!(table.lines().count(), 4);
        for f in ["manifest.txt", "config.toml", "ledgers/exclusions.csv", "ledgers/stages.csv", "reports/metrics.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let first = fs::read(dir.path().join("reports/metrics.csv")).unwrap();

        let again = run_in(dir.path(), CONFIG, Stage::Report);
        assert!(again.artifacts.iter().all(|a| a.status == "cached"), "{:?}", again.artifacts);
        assert_eq!(fs::read(dir.path().join("reports/metrics.csv")).unwrap(), first);
        assert_eq!(report_bundle(dir.path()).unwrap().len(), 1);

        // A neural setting only touches evaluation of the neural model.
        let changed = run_in(dir.path(), &CONFIG.replace("max_epochs = 10", "max_epochs = 11"), Stage::Report);
        let status = |s: Stage| changed.artifacts.iter().filter(|a| a.stage == s).map(|a| a.status.as_str()).collect::<Vec<_>>();
        assert_eq!(status(Stage::Features), ["cached"]);
        assert_eq!(status(Stage::Evaluate), ["ran", "ran", "ran"]);

        // A cohort filter change re-runs cleaning and everything after it.
        let filtered = run_in(dir.path(), &format!("cohort_filter = \"carevue_only\"\n{CONFIG}"), Stage::Report);
        let status = |s: Stage| filtered.artifacts.iter().filter(|a| a.stage == s).map(|a| a.status.clone()).collect::<Vec<_>>();
        assert_eq!(status(Stage::Ingest), ["cached"]);
        assert_eq!(status(Stage::Clean), ["ran"]);
        assert_eq!(status(Stage::Features), ["ran"]);
    }

    #[test]
    fn stops_at_requested_stage() {
        let dir = tempfile::tempdir().unwrap();
        let o = run_in(dir.path(), CONFIG, Stage::Labels);
        assert!(o.reports.is_empty());
        assert_eq!(o.artifacts.last().unwrap().stage, Stage::Labels);
        assert!(!dir.path().join("reports").exists());
        assert!(o.meta.exclusions["not_adult"] > 0);
    }

    #[test]
    fn missing_tables_are_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::from_toml_str(CONFIG).unwrap();
        cfg.data = DataSource::Dir(dir.path().join("none"));
        let err = run(&cfg, CONFIG, dir.path(), Stage::Report).unwrap_err();
        assert_eq!(err.exit_code(), 3, "{err}");
    }
}
