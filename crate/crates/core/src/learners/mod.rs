//! Candidate learners behind one fit/predict contract.

pub mod categorize;
pub mod elastic_net;
pub mod ensemble;
pub mod tree;

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use categorize::{categorize, BinSpec};

use crate::container::{self, ContainerError};
use crate::folds::validation_split;
use crate::glm::{fit_linear, fit_logistic_ridge, LinearModel};
use crate::neural::{self, Architecture, NetConfig, NetInput, Network, NeuralError, OutputKind, TrainConfig};
use elastic_net::{fit_elastic_net, ElasticNetParams};
use ensemble::{fit_forest, fit_gbm, ForestModel, ForestParams, GbmModel, GbmParams};

pub const LEARNER_MAGIC: [u8; 4] = *b"ICBL";
pub const LEARNER_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    LogisticGlm,
    LinearGlm,
    ElasticNet,
    ShallowMlp,
    GradientBoostedTrees,
    RandomForest,
    BaggedTrees,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 7] = [
        LearnerKind::LogisticGlm,
        LearnerKind::LinearGlm,
        LearnerKind::ElasticNet,
        LearnerKind::ShallowMlp,
        LearnerKind::GradientBoostedTrees,
        LearnerKind::RandomForest,
        LearnerKind::BaggedTrees,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::LogisticGlm => "logistic_glm",
            LearnerKind::LinearGlm => "linear_glm",
            LearnerKind::ElasticNet => "elastic_net",
            LearnerKind::ShallowMlp => "shallow_mlp",
            LearnerKind::GradientBoostedTrees => "gradient_boosted_trees",
            LearnerKind::RandomForest => "random_forest",
            LearnerKind::BaggedTrees => "bagged_trees",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Recognized hyperparameters and their defaults.
    pub fn defaults(self, task: LearnerTask) -> &'static [(&'static str, f64)] {
        match (self, task) {
            (LearnerKind::LogisticGlm | LearnerKind::LinearGlm, _) => &[("ridge", 0.0)],
            (LearnerKind::ElasticNet, _) => &[("lambda", 0.01), ("alpha", 0.5), ("tol", 1e-7), ("max_sweeps", 1000.0), ("max_outer", 50.0)],
            (LearnerKind::ShallowMlp, LearnerTask::Binary) => &[("hidden", 32.0), ("epochs", 200.0), ("lr", 0.001), ("batch_size", 100.0), ("patience", 10.0)],
            (LearnerKind::ShallowMlp, LearnerTask::Regression) => {
                &[("hidden", 32.0), ("epochs", 200.0), ("lr", 0.005), ("batch_size", 100.0), ("patience", 10.0)]
            }
            (LearnerKind::GradientBoostedTrees, _) => &[("n_trees", 200.0), ("max_depth", 3.0), ("learning_rate", 0.1), ("min_leaf", 1.0)],
            // max_features 0 means ⌊√d⌋; max_depth 0 means unlimited.
            (LearnerKind::RandomForest, _) => &[("n_trees", 200.0), ("max_features", 0.0), ("max_depth", 0.0), ("min_leaf", 5.0)],
            (LearnerKind::BaggedTrees, _) => &[("n_trees", 50.0), ("max_depth", 0.0), ("min_leaf", 5.0)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerTask {
    Binary,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub hyperparameters: BTreeMap<String, f64>,
    pub task: LearnerTask,
    pub seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum LearnerError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite input at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("binary target must be 0 or 1, found {0}")]
    NonBinaryTarget(f64),
    #[error("{0} rows but {1} targets")]
    LengthMismatch(usize, usize),
    #[error("expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid hyperparameter for {kind}: {msg}")]
    InvalidHyperparameter { kind: &'static str, msg: String },
    #[error("the regression task is not supported by {0}")]
    UnsupportedTask(&'static str),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind, task: LearnerTask, seed: u64) -> Self {
        LearnerSpec { kind, hyperparameters: BTreeMap::new(), task, seed }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.hyperparameters.insert(key.to_string(), value);
        self
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Explicit value or the kind's default.
    pub fn param(&self, key: &str) -> f64 {
        self.hyperparameters
            .get(key)
            .copied()
            .unwrap_or_else(|| self.kind.defaults(self.task).iter().find(|(k, _)| *k == key).map(|(_, v)| *v).expect("known hyperparameter"))
    }

    fn count(&self, key: &str) -> usize {
        self.param(key) as usize
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |msg: String| Err(LearnerError::InvalidHyperparameter { kind: self.kind.name(), msg });
        let defaults = self.kind.defaults(self.task);
        for (k, v) in &self.hyperparameters {
            if !defaults.iter().any(|(d, _)| d == k) {
                return bad(format!("unknown key {k}"));
            }
            if !v.is_finite() || *v < 0.0 {
                return bad(format!("{k} = {v} must be finite and non-negative"));
            }
        }
        for key in ["n_trees", "epochs", "hidden", "batch_size", "max_sweeps", "max_outer"] {
            if defaults.iter().any(|(d, _)| *d == key) {
                let v = self.param(key);
                if v < 1.0 || v.fract() != 0.0 {
                    return bad(format!("{key} = {v} must be a positive integer"));
                }
            }
        }
        if self.kind == LearnerKind::ElasticNet && self.param("alpha") > 1.0 {
            return bad("alpha must lie in [0, 1]".into());
        }
        if self.kind == LearnerKind::GradientBoostedTrees && !(self.param("learning_rate") > 0.0) {
            return bad("learning_rate must be positive".into());
        }
        if self.kind == LearnerKind::LinearGlm && self.task == LearnerTask::Binary {
            return Ok(());
        }
        if self.kind == LearnerKind::LogisticGlm && self.task == LearnerTask::Regression {
            return Err(LearnerError::UnsupportedTask(self.kind.name()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LearnerModel {
    Constant { value: f64 },
    Linear { model: LinearModel, logistic: bool },
    Mlp { network: Box<Network> },
    Boosted(GbmModel),
    Forest(ForestModel),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub loss_curve: Vec<f64>,
    pub iterations: usize,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedLearner {
    pub spec: LearnerSpec,
    pub n_features: usize,
    pub model: LearnerModel,
    pub summary: TrainingSummary,
}

fn check_inputs(x: ArrayView2<f64>, y: &[f64], task: LearnerTask) -> Result<(), LearnerError> {
    if x.nrows() != y.len() {
        return Err(LearnerError::LengthMismatch(x.nrows(), y.len()));
    }
    if y.len() < 2 {
        return Err(LearnerError::TooFewSamples(y.len()));
    }
    if let Some(((row, col), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(LearnerError::NonFinite { row, col });
    }
    if let Some(row) = y.iter().position(|v| !v.is_finite()) {
        return Err(LearnerError::NonFinite { row, col: x.ncols() });
    }
    if task == LearnerTask::Binary {
        if let Some(&v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(LearnerError::NonBinaryTarget(v));
        }
    }
    Ok(())
}

fn depth_param(v: usize) -> usize {
    if v == 0 {
        usize::MAX
    } else {
        v
    }
}

pub fn fit(spec: &LearnerSpec, x: ArrayView2<f64>, y: &[f64]) -> Result<FittedLearner, LearnerError> {
    spec.validate()?;
    check_inputs(x, y, spec.task)?;
    let (n, d) = x.dim();
    let binary = spec.task == LearnerTask::Binary;
    let mut summary = TrainingSummary::default();
    let done = |model, summary| Ok(FittedLearner { spec: spec.clone(), n_features: d, model, summary });
    if binary {
        let pos = y.iter().filter(|&&v| v == 1.0).count();
        if pos == 0 || pos == n {
            summary.flags.push("single_class".into());
            return done(LearnerModel::Constant { value: pos as f64 / n as f64 }, summary);
        }
    }
    let model = match spec.kind {
        LearnerKind::LogisticGlm | LearnerKind::LinearGlm => {
            let logistic = spec.kind == LearnerKind::LogisticGlm;
            let fit = if logistic { fit_logistic_ridge(x, y, spec.param("ridge")) } else { fit_linear(x, y, spec.param("ridge")) };
            summary.iterations = fit.iterations;
            summary.loss_curve.push(fit.grad_norm);
            summary.flags.extend(fit.flags.iter().map(|f| format!("{f:?}")));
            LearnerModel::Linear { model: fit.model, logistic }
        }
        LearnerKind::ElasticNet => {
            let p = ElasticNetParams {
                lambda: spec.param("lambda"),
                alpha: spec.param("alpha"),
                tol: spec.param("tol"),
                max_sweeps: spec.count("max_sweeps"),
                max_outer: spec.count("max_outer"),
            };
            let fit = fit_elastic_net(x, y, binary, &p);
            summary.iterations = fit.sweeps;
            summary.loss_curve = fit.objective;
            LearnerModel::Linear { model: fit.model, logistic: binary }
        }
        LearnerKind::ShallowMlp => {
            let output = if binary { OutputKind::Binary } else { OutputKind::Regression };
            let mut cfg = NetConfig::new(Architecture::Ffn, d, 0, 1, output, spec.seed);
            cfg.ffn_hidden = vec![spec.count("hidden")];
            cfg.batch_norm = false;
            let mut network = Network::new(cfg);
            let strat: Vec<bool> = y.iter().map(|&v| binary && v == 1.0).collect();
            let all: Vec<usize> = (0..n).collect();
            let (tr, va) = validation_split(&all, &strat, 0.125, spec.seed);
            let xin = NetInput::statics_only(x.to_owned());
            let yy = Array2::from_shape_vec((n, 1), y.to_vec()).expect("column");
            let mut tc = TrainConfig::for_output(output, spec.seed);
            tc.lr = spec.param("lr");
            tc.max_epochs = spec.count("epochs");
            tc.batch_size = spec.count("batch_size");
            tc.patience = spec.count("patience").max(1);
            let hist = neural::train(&mut network, &xin.select(&tr), &yy.select(Axis(0), &tr), &xin.select(&va), &yy.select(Axis(0), &va), &tc)?;
            summary.iterations = hist.epochs.len();
            summary.loss_curve = hist.epochs.iter().map(|e| e.train_loss).collect();
            LearnerModel::Mlp { network: Box::new(network) }
        }
        LearnerKind::GradientBoostedTrees => {
            let p = GbmParams {
                n_trees: spec.count("n_trees"),
                max_depth: depth_param(spec.count("max_depth")),
                learning_rate: spec.param("learning_rate"),
                min_leaf: spec.count("min_leaf").max(1),
            };
            let (m, curve) = fit_gbm(x, y, binary, &p, spec.seed);
            summary.iterations = m.trees.len();
            summary.loss_curve = curve;
            LearnerModel::Boosted(m)
        }
        LearnerKind::RandomForest | LearnerKind::BaggedTrees => {
            let max_features = match spec.kind {
                LearnerKind::BaggedTrees => d,
                _ => match spec.count("max_features") {
                    0 => ((d as f64).sqrt().floor() as usize).max(1),
                    m => m.min(d),
                },
            };
            let p = ForestParams {
                n_trees: spec.count("n_trees"),
                max_features,
                max_depth: depth_param(spec.count("max_depth")),
                min_leaf: spec.count("min_leaf").max(1),
            };
            let m = fit_forest(x, y, &p, spec.seed);
            summary.iterations = m.trees.len();
            LearnerModel::Forest(m)
        }
    };
    done(model, summary)
}

impl FittedLearner {
    /// Probabilities for binary tasks, values for regression.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, LearnerError> {
        if x.ncols() != self.n_features {
            return Err(LearnerError::DimensionMismatch { expected: self.n_features, found: x.ncols() });
        }
        let binary = self.spec.task == LearnerTask::Binary;
        let out = match &self.model {
            LearnerModel::Constant { value } => vec![*value; x.nrows()],
            LearnerModel::Linear { model, logistic } => {
                if *logistic {
                    model.predict_proba(x)
                } else {
                    model.predict_linear(x)
                }
            }
            LearnerModel::Mlp { network } => network.predict(&NetInput::statics_only(x.to_owned()))?.column(0).to_vec(),
            LearnerModel::Boosted(m) => m.predict(x),
            LearnerModel::Forest(m) => m.predict(x),
        };
        // A linear model fitted to a binary target is used as a probability.
        Ok(if binary { out.into_iter().map(|p| p.clamp(0.0, 1.0)).collect() } else { out })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, LearnerError> {
        Ok(container::to_bytes(LEARNER_MAGIC, LEARNER_VERSION, self)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LearnerError> {
        Ok(container::from_bytes(LEARNER_MAGIC, LEARNER_VERSION, bytes)?)
    }
}

/// The default candidate library for a task: every kind that supports it.
pub fn default_library(task: LearnerTask, seed: u64) -> Vec<LearnerSpec> {
    LearnerKind::ALL
        .into_iter()
        .filter(|k| match task {
            LearnerTask::Binary => *k != LearnerKind::LinearGlm,
            LearnerTask::Regression => *k != LearnerKind::LogisticGlm,
        })
        .enumerate()
        .map(|(i, k)| LearnerSpec::new(k, task, crate::types::derive_seed(seed, i as u64)))
        .collect()
}
