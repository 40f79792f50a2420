//! Cross-validated benchmark runs: per fold, fit imputation and
//! standardization on the training rows, fit the model, score the held-out
//! fold, and report the mean and population std over folds.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Icd9GroupTable, LabelSet, Task};
use crate::dataset::Dataset;
use crate::features::{EpisodeTensor, FeatureSetId};
use crate::folds::{kfold, select_rows, stratified_folds, validation_split, FoldPlan, Standardizer, TooFewSamples};
use crate::learners::{categorize, fit, BinSpec, LearnerError, LearnerKind, LearnerSpec, LearnerTask};
use crate::linalg::{mean, std_pop};
use crate::metrics::{auprc, auroc, mse, MetricError};
use crate::neural::{train, Architecture, EpisodeScaler, NetConfig, NetInput, Network, NeuralError, OutputKind, TrainConfig};
use crate::severity::{fit_score_logistic, saps2_mortality_with, NewSapsIIModel, Saps2Breakdown, SeverityConfig, SeverityError};
use crate::super_learner::{fit_super_learner, SlVariant, SuperLearnerError};
use crate::types::derive_seed;

/// A model evaluated by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelId {
    /// Published SAPS-II formula applied to the score; no fitting.
    Saps2,
    /// Logistic regression on the 15 SAPS-II variable points.
    NewSaps2,
    /// Logistic regression on the SOFA total.
    Sofa,
    SuperLearnerI,
    SuperLearnerII,
    Learner(LearnerKind),
    Ffn,
    Gru,
    Mmdl,
}

impl ModelId {
    pub fn name(self) -> String {
        match self {
            ModelId::Saps2 => "saps2".into(),
            ModelId::NewSaps2 => "new_saps2".into(),
            ModelId::Sofa => "sofa".into(),
            ModelId::SuperLearnerI => "sl1".into(),
            ModelId::SuperLearnerII => "sl2".into(),
            ModelId::Learner(k) => k.name().into(),
            ModelId::Ffn => "ffn".into(),
            ModelId::Gru => "gru".into(),
            ModelId::Mmdl => "mmdl".into(),
        }
    }

    pub fn parse(s: &str) -> Option<ModelId> {
        let fixed =
            [ModelId::Saps2, ModelId::NewSaps2, ModelId::Sofa, ModelId::SuperLearnerI, ModelId::SuperLearnerII, ModelId::Ffn, ModelId::Gru, ModelId::Mmdl];
        fixed.into_iter().find(|m| m.name() == s).or_else(|| LearnerKind::parse(s).map(ModelId::Learner))
    }

    pub fn is_score(self) -> bool {
        matches!(self, ModelId::Saps2 | ModelId::NewSaps2 | ModelId::Sofa)
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl TryFrom<String> for ModelId {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        ModelId::parse(&s).ok_or_else(|| format!("unknown model {s}"))
    }
}

impl From<ModelId> for String {
    fn from(m: ModelId) -> String {
        m.name()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryEntry {
    pub kind: LearnerKind,
    #[serde(default)]
    pub hyperparameters: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuralSettings {
    pub ffn_hidden: Vec<usize>,
    pub gru_hidden: usize,
    pub shared_hidden: usize,
    pub batch_norm: bool,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Overrides the per-output default learning rate.
    pub lr: Option<f64>,
    pub validation_fraction: f64,
}

impl Default for NeuralSettings {
    fn default() -> Self {
        NeuralSettings {
            ffn_hidden: vec![64, 64],
            gru_hidden: 64,
            shared_hidden: 64,
            batch_norm: true,
            max_epochs: 250,
            patience: 10,
            batch_size: 100,
            lr: None,
            validation_fraction: 0.125,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    /// Super Learner library; empty means every learner kind suited to the
    /// task with default hyperparameters.
    pub library: Vec<LibraryEntry>,
    pub inner_folds: usize,
    /// Hyperparameters for single-learner models, by learner name.
    pub learner_overrides: BTreeMap<String, BTreeMap<String, f64>>,
    pub neural: NeuralSettings,
    #[serde(skip)]
    pub severity: SeverityConfig,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            library: Vec::new(),
            inner_folds: 5,
            learner_overrides: BTreeMap::new(),
            neural: NeuralSettings::default(),
            severity: SeverityConfig::bundled(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("task {task} is not predicted from a {window}h window: {reason}")]
    InvalidTaskWindow { task: &'static str, window: usize, reason: &'static str },
    #[error("model {model} does not support task {task}")]
    UnsupportedModel { model: String, task: &'static str },
    #[error("fold plan covers {plan} rows but the dataset has {rows}")]
    PlanMismatch { plan: usize, rows: usize },
    #[error(transparent)]
    Folds(#[from] TooFewSamples),
    #[error("fold {fold}: {message}")]
    FoldFailed { fold: usize, message: String },
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    SuperLearner(#[from] SuperLearnerError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Severity(#[from] SeverityError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Short-horizon mortality is not predicted from data that may extend past
/// the horizon.
pub fn check_task_window(task: Task, window_hours: usize) -> Result<(), EvalError> {
    if task == Task::Mort2d && window_hours >= 48 {
        return Err(EvalError::InvalidTaskWindow {
            task: task.name(),
            window: window_hours,
            reason: "with the first 48 hours of data only 3-day and longer mortality is predicted",
        });
    }
    Ok(())
}

/// Label used for stratification: the task label for mortality, the first
/// diagnosis group for the multi-task run, none for length of stay.
pub fn primary_label(l: &LabelSet, task: Task) -> bool {
    match task {
        Task::Icd9 => l.icd9_groups[0],
        Task::Los => false,
        t => l.mortality_flag(t).unwrap_or(false),
    }
}

pub fn fold_plan(ds: &Dataset, task: Task, k: usize, seed: u64) -> Result<FoldPlan, EvalError> {
    if task == Task::Los {
        return Ok(kfold(ds.len(), k, seed)?);
    }
    let labels: Vec<bool> = ds.labels.iter().map(|l| primary_label(l, task)).collect();
    Ok(stratified_folds(&labels, k, seed)?)
}

/// Per-fold values of one metric; NaN marks folds where it is undefined.
/// Serialized NaN is `null`; mean and std are recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SummaryWire", from = "SummaryWire")]
pub struct MetricSummary {
    pub metric: String,
    pub per_fold: Vec<f64>,
    /// Mean over defined folds.
    pub mean: f64,
    /// Population std over defined folds.
    pub std: f64,
}

impl MetricSummary {
    pub fn new(metric: &str, per_fold: Vec<f64>) -> Self {
        let defined: Vec<f64> = per_fold.iter().copied().filter(|v| v.is_finite()).collect();
        let (m, s) = if defined.is_empty() { (f64::NAN, f64::NAN) } else { (mean(&defined), std_pop(&defined)) };
        MetricSummary { metric: metric.to_string(), per_fold, mean: m, std: s }
    }
}

#[derive(Serialize, Deserialize)]
struct SummaryWire {
    metric: String,
    per_fold: Vec<Option<f64>>,
    mean: Option<f64>,
    std: Option<f64>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl From<MetricSummary> for SummaryWire {
    fn from(m: MetricSummary) -> Self {
        SummaryWire { per_fold: m.per_fold.iter().map(|&v| finite(v)).collect(), mean: finite(m.mean), std: finite(m.std), metric: m.metric }
    }
}

impl From<SummaryWire> for MetricSummary {
    fn from(w: SummaryWire) -> Self {
        MetricSummary::new(&w.metric, w.per_fold.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: String,
    pub metrics: Vec<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Task,
    pub model: String,
    pub feature_set: FeatureSetId,
    pub window_hours: usize,
    /// Seed of the fold plan and model initialization.
    pub seed: u64,
    pub n_folds: usize,
    /// For the diagnosis-group task, each fold's value is the mean over
    /// groups defined in that fold.
    pub metrics: Vec<MetricSummary>,
    /// Per-group metrics of the diagnosis-group task.
    pub groups: Vec<GroupMetrics>,
    /// "std" is the population standard deviation over folds.
    pub spread: String,
}

impl MetricReport {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}

fn targets(labels: &[LabelSet], task: Task) -> Array2<f64> {
    let k = task.n_outputs();
    let mut y = Array2::zeros((labels.len(), k));
    for (i, l) in labels.iter().enumerate() {
        for (j, v) in l.targets(task).into_iter().enumerate() {
            y[[i, j]] = v;
        }
    }
    y
}

/// Per-column mean over the training rows, ignoring NaN; 0 for columns
/// never observed in training. Used to impute missing summary values.
fn column_means(x: ArrayView2<f64>, rows: &[usize]) -> Vec<f64> {
    (0..x.ncols())
        .map(|j| {
            let vals: Vec<f64> = rows.iter().map(|&i| x[[i, j]]).filter(|v| v.is_finite()).collect();
            if vals.is_empty() {
                0.0
            } else {
                mean(&vals)
            }
        })
        .collect()
}

fn impute_rows(x: ArrayView2<f64>, rows: &[usize], means: &[f64]) -> Array2<f64> {
    let mut out = select_rows(x, rows);
    for (j, mut c) in out.columns_mut().into_iter().enumerate() {
        c.mapv_inplace(|v| if v.is_finite() { v } else { means[j] });
    }
    out
}

fn learner_task(task: Task) -> LearnerTask {
    if task == Task::Los {
        LearnerTask::Regression
    } else {
        LearnerTask::Binary
    }
}

fn library(settings: &ModelSettings, task: LearnerTask, seed: u64) -> Vec<LearnerSpec> {
    if settings.library.is_empty() {
        return crate::learners::default_library(task, seed);
    }
    settings
        .library
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut s = LearnerSpec::new(e.kind, task, derive_seed(seed, i as u64));
            s.hyperparameters = e.hyperparameters.clone();
            s
        })
        .collect()
}

struct FoldData<'a> {
    ds: &'a Dataset,
    summary: &'a Array2<f64>,
    y: &'a Array2<f64>,
    task: Task,
    train: Vec<usize>,
    test: Vec<usize>,
    seed: u64,
}

fn column(y: &Array2<f64>, rows: &[usize], j: usize) -> Vec<f64> {
    rows.iter().map(|&i| y[[i, j]]).collect()
}

fn predict_scores(f: &FoldData, model: ModelId, sev: &SeverityConfig) -> Result<Array2<f64>, EvalError> {
    let saps = |rows: &[usize]| rows.iter().map(|&i| &f.ds.scores[i].saps2).collect::<Vec<&Saps2Breakdown>>();
    let ytr = column(f.y, &f.train, 0);
    let p: Vec<f64> = match model {
        ModelId::Saps2 => f.test.iter().map(|&i| saps2_mortality_with(&sev.saps2, f.ds.scores[i].saps2.total as f64)).collect(),
        ModelId::NewSaps2 => NewSapsIIModel::fit(&saps(&f.train), &ytr)?.predict(&saps(&f.test)),
        ModelId::Sofa => {
            let total = |rows: &[usize]| rows.iter().map(|&i| f.ds.scores[i].sofa.total as f64).collect::<Vec<f64>>();
            let m = fit_score_logistic(&total(&f.train), &ytr)?;
            total(&f.test).into_iter().map(|s| m.predict(s)).collect()
        }
        _ => unreachable!("not a score model"),
    };
    Ok(Array2::from_shape_vec((p.len(), 1), p).expect("one column"))
}

fn predict_summary(f: &FoldData, model: ModelId, settings: &ModelSettings) -> Result<Array2<f64>, EvalError> {
    let means = column_means(f.summary.view(), &f.train);
    let raw_tr = impute_rows(f.summary.view(), &f.train, &means);
    let raw_te = impute_rows(f.summary.view(), &f.test, &means);
    let (xtr, xte) = if model == ModelId::SuperLearnerI {
        let bins = BinSpec::for_summary(&f.ds.summary_names(), &settings.severity.saps2, raw_tr.view());
        (categorize(raw_tr.view(), &bins), categorize(raw_te.view(), &bins))
    } else {
        let st = Standardizer::fit(raw_tr.view());
        (st.transform(raw_tr.view()), st.transform(raw_te.view()))
    };
    let lt = learner_task(f.task);
    let k = f.y.ncols();
    let mut out = Array2::zeros((f.test.len(), k));
    for j in 0..k {
        let ytr = column(f.y, &f.train, j);
        let seed = derive_seed(f.seed, j as u64);
        let preds = match model {
            ModelId::SuperLearnerI | ModelId::SuperLearnerII => {
                let variant = if model == ModelId::SuperLearnerI { SlVariant::SlICategorized } else { SlVariant::SlIIRaw };
                let inner = if lt == LearnerTask::Binary {
                    stratified_folds(&ytr.iter().map(|&v| v > 0.5).collect::<Vec<_>>(), settings.inner_folds, seed)?
                } else {
                    kfold(ytr.len(), settings.inner_folds, seed)?
                };
                fit_super_learner(variant, &library(settings, lt, seed), xtr.view(), &ytr, &inner)?.predict(xte.view())?
            }
            ModelId::Learner(kind) => {
                let mut spec = LearnerSpec::new(kind, lt, seed);
                if let Some(h) = settings.learner_overrides.get(kind.name()) {
                    spec.hyperparameters = h.clone();
                }
                fit(&spec, xtr.view(), &ytr)?.predict(xte.view())?
            }
            ModelId::Ffn => return predict_network(f, Architecture::Ffn, Some((xtr, xte)), settings),
            _ => unreachable!("not a summary model"),
        };
        out.column_mut(j).assign(&ndarray::Array1::from(preds));
    }
    Ok(out)
}

fn predict_network(f: &FoldData, arch: Architecture, flat: Option<(Array2<f64>, Array2<f64>)>, settings: &ModelSettings) -> Result<Array2<f64>, EvalError> {
    let ns = &settings.neural;
    let strat: Vec<bool> = f.ds.labels.iter().map(|l| primary_label(l, f.task)).collect();
    let (fit_rows, val_rows) = validation_split(&f.train, &strat, ns.validation_fraction, derive_seed(f.seed, 7));
    let output = if f.task == Task::Los { OutputKind::Regression } else { OutputKind::Binary };
    let episodes = |rows: &[usize]| rows.iter().map(|&i| &f.ds.episodes[i]).collect::<Vec<&EpisodeTensor>>();
    let (tr_in, val_in, te_in) = match flat {
        Some((xtr, xte)) => {
            // Rows of `xtr` follow `f.train`; map the split back onto them.
            let pos: BTreeMap<usize, usize> = f.train.iter().enumerate().map(|(p, &i)| (i, p)).collect();
            let pick = |rows: &[usize]| xtr.select(Axis(0), &rows.iter().map(|i| pos[i]).collect::<Vec<_>>());
            (NetInput::statics_only(pick(&fit_rows)), NetInput::statics_only(pick(&val_rows)), NetInput::statics_only(xte))
        }
        None => {
            let scaler = EpisodeScaler::fit(&episodes(&fit_rows))?;
            (scaler.to_input(&episodes(&fit_rows))?, scaler.to_input(&episodes(&val_rows))?, scaler.to_input(&episodes(&f.test))?)
        }
    };
    let mut cfg = NetConfig::new(arch, tr_in.statics.ncols(), tr_in.temporal.dim().2, f.y.ncols(), output, derive_seed(f.seed, 8));
    cfg.ffn_hidden = ns.ffn_hidden.clone();
    cfg.gru_hidden = ns.gru_hidden;
    cfg.shared_hidden = ns.shared_hidden;
    cfg.batch_norm = ns.batch_norm;
    let mut net = Network::new(cfg);
    let mut tc = TrainConfig::for_output(output, derive_seed(f.seed, 9));
    tc.max_epochs = ns.max_epochs;
    tc.patience = ns.patience;
    tc.batch_size = ns.batch_size;
    if let Some(lr) = ns.lr {
        tc.lr = lr;
    }
    let y_fit = f.y.select(Axis(0), &fit_rows);
    let y_val = f.y.select(Axis(0), &val_rows);
    train(&mut net, &tr_in, &y_fit, &val_in, &y_val, &tc)?;
    Ok(net.predict(&te_in)?)
}

fn predict_fold(f: &FoldData, model: ModelId, settings: &ModelSettings) -> Result<Array2<f64>, EvalError> {
    match model {
        m if m.is_score() => predict_scores(f, m, &settings.severity),
        ModelId::Gru => predict_network(f, Architecture::Gru, None, settings),
        ModelId::Mmdl => predict_network(f, Architecture::Mmdl, None, settings),
        m => predict_summary(f, m, settings),
    }
}

/// Held-out predictions for every row, `[n × outputs]`.
pub fn cross_validated_predictions(
    ds: &Dataset,
    task: Task,
    model: ModelId,
    settings: &ModelSettings,
    plan: &FoldPlan,
    seed: u64,
) -> Result<Array2<f64>, EvalError> {
    check_task_window(task, ds.window_hours)?;
    if model.is_score() && !task.is_mortality() {
        return Err(EvalError::UnsupportedModel { model: model.name(), task: task.name() });
    }
    if plan.len() != ds.len() {
        return Err(EvalError::PlanMismatch { plan: plan.len(), rows: ds.len() });
    }
    let y = targets(&ds.labels, task);
    let summary = if model.is_score() || matches!(model, ModelId::Gru | ModelId::Mmdl) { Array2::zeros((0, 0)) } else { ds.summary_matrix() };
    let folds: Vec<(usize, Array2<f64>)> = (0..plan.n_folds)
        .into_par_iter()
        .map(|k| {
            let f =
                FoldData { ds, summary: &summary, y: &y, task, train: plan.train_indices(k), test: plan.test_indices(k), seed: derive_seed(seed, k as u64) };
            predict_fold(&f, model, settings).map(|p| (k, p)).map_err(|e| EvalError::FoldFailed { fold: k, message: e.to_string() })
        })
        .collect::<Result<_, _>>()?;
    let mut out = Array2::from_elem((ds.len(), y.ncols()), f64::NAN);
    for (k, p) in folds {
        for (r, i) in plan.test_indices(k).into_iter().enumerate() {
            out.row_mut(i).assign(&p.row(r));
        }
    }
    Ok(out)
}

fn binary_metrics(p: &[f64], y: &[f64]) -> (f64, f64) {
    let labels: Vec<bool> = y.iter().map(|&v| v > 0.5).collect();
    (auroc(p, &labels).unwrap_or(f64::NAN), auprc(p, &labels).unwrap_or(f64::NAN))
}

/// Metrics of held-out predictions, fold by fold.
pub fn score_predictions(ds: &Dataset, task: Task, model: ModelId, preds: &Array2<f64>, plan: &FoldPlan, seed: u64) -> Result<MetricReport, EvalError> {
    let y = targets(&ds.labels, task);
    let k = plan.n_folds;
    let mut report = MetricReport {
        task,
        model: model.name(),
        feature_set: ds.set,
        window_hours: ds.window_hours,
        seed,
        n_folds: k,
        metrics: Vec::new(),
        groups: Vec::new(),
        spread: "population std over folds".into(),
    };
    let fold_cols = |fold: usize, j: usize| {
        let rows = plan.test_indices(fold);
        (column(preds, &rows, j), column(&y, &rows, j))
    };
    match task {
        Task::Los => {
            let v = (0..k).map(|f| {
                let (p, t) = fold_cols(f, 0);
                mse(&p, &t)
            });
            report.metrics.push(MetricSummary::new("mse", v.collect::<Result<_, _>>()?));
        }
        Task::Icd9 => {
            let names = Icd9GroupTable::default().label_names();
            let per: Vec<Vec<(f64, f64)>> = (0..y.ncols())
                .map(|j| {
                    (0..k)
                        .map(|f| {
                            let (p, t) = fold_cols(f, j);
                            binary_metrics(&p, &t)
                        })
                        .collect()
                })
                .collect();
            for (j, name) in names.into_iter().enumerate() {
                report.groups.push(GroupMetrics {
                    group: name,
                    metrics: vec![
                        MetricSummary::new("auroc", per[j].iter().map(|m| m.0).collect()),
                        MetricSummary::new("auprc", per[j].iter().map(|m| m.1).collect()),
                    ],
                });
            }
            let avg = |pick: fn(&(f64, f64)) -> f64| -> Vec<f64> {
                (0..k)
                    .map(|f| {
                        let v: Vec<f64> = per.iter().map(|g| pick(&g[f])).filter(|v| v.is_finite()).collect();
                        if v.is_empty() {
                            f64::NAN
                        } else {
                            mean(&v)
                        }
                    })
                    .collect()
            };
            report.metrics.push(MetricSummary::new("auroc", avg(|m| m.0)));
            report.metrics.push(MetricSummary::new("auprc", avg(|m| m.1)));
        }
        _ => {
            let mut a = Vec::with_capacity(k);
            let mut b = Vec::with_capacity(k);
            for f in 0..k {
                let (p, t) = fold_cols(f, 0);
                let labels: Vec<bool> = t.iter().map(|&v| v > 0.5).collect();
                a.push(auroc(&p, &labels)?);
                b.push(auprc(&p, &labels)?);
            }
            report.metrics.push(MetricSummary::new("auroc", a));
            report.metrics.push(MetricSummary::new("auprc", b));
        }
    }
    Ok(report)
}

/// Cross-validated benchmark of one model on one task.
pub fn run_benchmark(ds: &Dataset, task: Task, model: ModelId, settings: &ModelSettings, plan: &FoldPlan, seed: u64) -> Result<MetricReport, EvalError> {
    let preds = cross_validated_predictions(ds, task, model, settings, plan, seed)?;
    score_predictions(ds, task, model, &preds, plan, seed)
}

fn fmt_f(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        "nan".into()
    }
}

pub const REPORT_HEADER: [&str; 10] = ["task", "model", "feature_set", "window_hours", "seed", "row", "metric", "mean", "std", "per_fold"];

/// Long-format CSV: one line per (report, row, metric). Rows are "all" for
/// single-output tasks, each group plus "average" for diagnosis groups.
pub fn write_reports_csv<W: Write>(w: W, reports: &[MetricReport]) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(REPORT_HEADER)?;
    for r in reports {
        let mut emit = |row: &str, m: &MetricSummary| {
            let folds: Vec<String> = m.per_fold.iter().map(|&v| fmt_f(v)).collect();
            wr.write_record([
                r.task.name().to_string(),
                r.model.clone(),
                r.feature_set.to_string(),
                r.window_hours.to_string(),
                r.seed.to_string(),
                row.to_string(),
                m.metric.clone(),
                fmt_f(m.mean),
                fmt_f(m.std),
                folds.join(";"),
            ])
        };
        for g in &r.groups {
            for m in &g.metrics {
                emit(&g.group, m)?;
            }
        }
        let overall = if r.groups.is_empty() { "all" } else { "average" };
        for m in &r.metrics {
            emit(overall, m)?;
        }
    }
    wr.flush()?;
    Ok(())
}
