//! Cross-validated stacking over a candidate library.
//!
//! Each candidate's out-of-fold predictions come from the supplied fold plan;
//! the weights minimize the empirical loss of the convex combination of those
//! predictions, and every surviving candidate is then refit on all rows.

use std::io::Write;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{self, ContainerError};
use crate::folds::{select, select_rows, FoldPlan};
use crate::learners::{fit, FittedLearner, LearnerError, LearnerSpec, LearnerTask};
use crate::linalg::{log_loss, PROB_CLIP};

pub const ENSEMBLE_MAGIC: [u8; 4] = *b"ICBS";
pub const ENSEMBLE_VERSION: u32 = 1;

/// Objective change that ends the weight solve.
pub const WEIGHT_TOL: f64 = 1e-10;
const MAX_WEIGHT_ITERS: usize = 20_000;
const ARMIJO: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlVariant {
    /// Candidates see one-hot bucketed features.
    SlICategorized,
    /// Candidates see the raw summary features.
    SlIIRaw,
}

impl SlVariant {
    pub fn name(self) -> &'static str {
        match self {
            SlVariant::SlICategorized => "super_learner_i",
            SlVariant::SlIIRaw => "super_learner_ii",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackLoss {
    NegLogLikelihood,
    SquaredError,
}

impl StackLoss {
    pub fn for_task(task: LearnerTask) -> Self {
        match task {
            LearnerTask::Binary => StackLoss::NegLogLikelihood,
            LearnerTask::Regression => StackLoss::SquaredError,
        }
    }

    pub fn value(self, pred: f64, y: f64) -> f64 {
        match self {
            StackLoss::NegLogLikelihood => log_loss(pred, y),
            StackLoss::SquaredError => (pred - y) * (pred - y),
        }
    }

    /// Derivative in the prediction; the clipped probability is used for
    /// the log-likelihood so the value stays finite at 0 and 1.
    fn derivative(self, pred: f64, y: f64) -> f64 {
        match self {
            StackLoss::NegLogLikelihood => {
                let p = pred.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                (p - y) / (p * (1.0 - p))
            }
            StackLoss::SquaredError => 2.0 * (pred - y),
        }
    }

    pub fn mean(self, preds: &[f64], y: &[f64]) -> f64 {
        preds.iter().zip(y).map(|(&p, &t)| self.value(p, t)).sum::<f64>() / y.len() as f64
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SuperLearnerError {
    #[error("the candidate library is empty")]
    EmptyLibrary,
    #[error("candidates disagree on the task")]
    MixedTasks,
    #[error("fold plan covers {plan} rows but the data has {rows}")]
    PlanMismatch { plan: usize, rows: usize },
    #[error("every candidate failed: {0}")]
    AllCandidatesFailed(String),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Out-of-fold predictions for one candidate; any failing fold fails it.
pub fn oof_predictions(spec: &LearnerSpec, x: ArrayView2<f64>, y: &[f64], plan: &FoldPlan) -> Result<Vec<f64>, LearnerError> {
    let mut out = vec![f64::NAN; y.len()];
    for fold in 0..plan.n_folds {
        let (tr, te) = (plan.train_indices(fold), plan.test_indices(fold));
        if te.is_empty() {
            continue;
        }
        let model = fit(spec, select_rows(x, &tr).view(), &select(y, &tr))?;
        for (i, p) in te.iter().zip(model.predict(select_rows(x, &te).view())?) {
            out[*i] = p;
        }
    }
    Ok(out)
}

/// Mean held-out loss over all rows of the plan.
pub fn cv_risk(spec: &LearnerSpec, x: ArrayView2<f64>, y: &[f64], plan: &FoldPlan, loss: StackLoss) -> Result<f64, LearnerError> {
    Ok(loss.mean(&oof_predictions(spec, x, y, plan)?, y))
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let (mut cum, mut theta) = (0.0, 0.0);
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn combine(preds: ArrayView2<f64>, alpha: &[f64]) -> Vec<f64> {
    preds.rows().into_iter().map(|r| r.iter().zip(alpha).map(|(p, a)| p * a).sum()).collect()
}

fn objective(preds: ArrayView2<f64>, y: &[f64], alpha: &[f64], loss: StackLoss) -> f64 {
    loss.mean(&combine(preds, alpha), y)
}

fn gradient(preds: ArrayView2<f64>, y: &[f64], alpha: &[f64], loss: StackLoss) -> Vec<f64> {
    let n = y.len() as f64;
    let mut g = vec![0.0; alpha.len()];
    for (row, &t) in preds.rows().into_iter().zip(y) {
        let d = loss.derivative(row.iter().zip(alpha).map(|(p, a)| p * a).sum(), t);
        for (gk, p) in g.iter_mut().zip(row) {
            *gk += d * p / n;
        }
    }
    g
}

/// Simplex weights minimizing the loss of the combined predictions.
///
/// Projected gradient from the uniform point with spectral step lengths and
/// an Armijo backtrack, stopped once the objective moves by at most
/// `WEIGHT_TOL`. Starting from uniform keeps symmetric ties at uniform. The
/// best vertex is returned instead when it is strictly better, so the
/// result never loses to a single candidate.
pub fn solve_weights(preds: ArrayView2<f64>, y: &[f64], loss: StackLoss) -> Vec<f64> {
    let k = preds.ncols();
    assert!(k >= 1, "need at least one candidate");
    assert_eq!(preds.nrows(), y.len(), "prediction rows");
    if k == 1 {
        return vec![1.0];
    }
    let mut alpha = vec![1.0 / k as f64; k];
    let mut f = objective(preds, y, &alpha, loss);
    let mut g = gradient(preds, y, &alpha, loss);
    let mut step = 1.0 / g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    for _ in 0..MAX_WEIGHT_ITERS {
        let mut accepted = None;
        let mut t = step;
        for _ in 0..60 {
            let trial: Vec<f64> = alpha.iter().zip(&g).map(|(a, gk)| a - t * gk).collect();
            let cand = project_simplex(&trial);
            let decrease: f64 = g.iter().zip(cand.iter().zip(&alpha)).map(|(gk, (c, a))| gk * (c - a)).sum();
            let fc = objective(preds, y, &cand, loss);
            if fc <= f + ARMIJO * decrease && fc <= f {
                accepted = Some((cand, fc));
                break;
            }
            t /= 2.0;
        }
        let Some((cand, fc)) = accepted else { break };
        let change = f - fc;
        let gc = gradient(preds, y, &cand, loss);
        let s: Vec<f64> = cand.iter().zip(&alpha).map(|(c, a)| c - a).collect();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        let sr: f64 = s.iter().zip(gc.iter().zip(&g)).map(|(sv, (a, b))| sv * (a - b)).sum();
        step = if sr > 0.0 { ss / sr } else { 2.0 * t };
        alpha = cand;
        f = fc;
        g = gc;
        if change <= WEIGHT_TOL || ss == 0.0 {
            break;
        }
    }
    let (best_k, best_f) = (0..k)
        .map(|j| {
            let mut e = vec![0.0; k];
            e[j] = 1.0;
            (j, objective(preds, y, &e, loss))
        })
        .fold((0, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
    if best_f < f {
        alpha = vec![0.0; k];
        alpha[best_k] = 1.0;
    }
    alpha
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCandidate {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedEnsemble {
    pub variant: SlVariant,
    pub loss: StackLoss,
    /// Surviving candidates, refit on all rows, in library order.
    pub names: Vec<String>,
    pub candidates: Vec<FittedLearner>,
    pub weights: Vec<f64>,
    pub cv_risks: Vec<f64>,
    /// Loss of the weighted out-of-fold predictions.
    pub oof_loss: f64,
    pub failed: Vec<FailedCandidate>,
}

fn candidate_names(specs: &[LearnerSpec]) -> Vec<String> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| if specs.iter().filter(|o| o.kind == s.kind).count() > 1 { format!("{}_{i}", s.name()) } else { s.name().to_string() })
        .collect()
}

/// Stacks `specs` on `(x, y)`; `plan` is the internal fold plan over these rows.
pub fn fit_super_learner(
    variant: SlVariant,
    specs: &[LearnerSpec],
    x: ArrayView2<f64>,
    y: &[f64],
    plan: &FoldPlan,
) -> Result<StackedEnsemble, SuperLearnerError> {
    let task = specs.first().ok_or(SuperLearnerError::EmptyLibrary)?.task;
    if specs.iter().any(|s| s.task != task) {
        return Err(SuperLearnerError::MixedTasks);
    }
    if plan.len() != y.len() || x.nrows() != y.len() {
        return Err(SuperLearnerError::PlanMismatch { plan: plan.len(), rows: x.nrows() });
    }
    let loss = StackLoss::for_task(task);
    let all_names = candidate_names(specs);

    // Candidate x fold fits are independent; results are collected in order.
    let jobs: Vec<(usize, usize)> = (0..specs.len()).flat_map(|c| (0..plan.n_folds).map(move |f| (c, f))).collect();
    type FoldPred = Result<(Vec<usize>, Vec<f64>), LearnerError>;
    let fold_preds: Vec<FoldPred> = jobs
        .par_iter()
        .map(|&(c, fold)| {
            let (tr, te) = (plan.train_indices(fold), plan.test_indices(fold));
            if te.is_empty() {
                return Ok((te, Vec::new()));
            }
            let model = fit(&specs[c], select_rows(x, &tr).view(), &select(y, &tr))?;
            let p = model.predict(select_rows(x, &te).view())?;
            Ok((te, p))
        })
        .collect();

    let mut failed = Vec::new();
    let mut oof: Vec<(usize, Vec<f64>)> = Vec::new();
    for (c, chunk) in fold_preds.chunks(plan.n_folds).enumerate() {
        let mut col = vec![f64::NAN; y.len()];
        let mut err = None;
        for r in chunk {
            match r {
                Ok((te, p)) => te.iter().zip(p).for_each(|(&i, &v)| col[i] = v),
                Err(e) => {
                    err.get_or_insert_with(|| e.to_string());
                }
            }
        }
        if err.is_none() && col.iter().any(|v| !v.is_finite()) {
            err = Some("non-finite out-of-fold prediction".into());
        }
        match err {
            Some(reason) => failed.push(FailedCandidate { name: all_names[c].clone(), reason }),
            None => oof.push((c, col)),
        }
    }

    let refits: Vec<Result<FittedLearner, LearnerError>> = oof.par_iter().map(|(c, _)| fit(&specs[*c], x, y)).collect();
    let mut kept = Vec::new();
    let mut candidates = Vec::new();
    for ((c, col), r) in oof.into_iter().zip(refits) {
        match r {
            Ok(m) => {
                kept.push((c, col));
                candidates.push(m);
            }
            Err(e) => failed.push(FailedCandidate { name: all_names[c].clone(), reason: format!("refit: {e}") }),
        }
    }
    if kept.is_empty() {
        let reasons: Vec<String> = failed.iter().map(|f| format!("{}: {}", f.name, f.reason)).collect();
        return Err(SuperLearnerError::AllCandidatesFailed(reasons.join("; ")));
    }
    let preds = Array2::from_shape_fn((y.len(), kept.len()), |(i, k)| kept[k].1[i]);
    let cv_risks: Vec<f64> = kept.iter().map(|(_, col)| loss.mean(col, y)).collect();
    let weights = solve_weights(preds.view(), y, loss);
    let oof_loss = objective(preds.view(), y, &weights, loss);
    Ok(StackedEnsemble { variant, loss, names: kept.iter().map(|(c, _)| all_names[*c].clone()).collect(), candidates, weights, cv_risks, oof_loss, failed })
}

impl StackedEnsemble {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, LearnerError> {
        let mut out = vec![0.0; x.nrows()];
        for (m, &a) in self.candidates.iter().zip(&self.weights) {
            if a == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(m.predict(x)?) {
                *o += a * p;
            }
        }
        Ok(out)
    }

    /// One row per library candidate: `candidate,cv_risk,weight,status`.
    pub fn write_risk_csv<W: Write>(&self, w: W) -> Result<(), SuperLearnerError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["candidate", "cv_risk", "weight", "status"])?;
        for ((name, risk), weight) in self.names.iter().zip(&self.cv_risks).zip(&self.weights) {
            wr.write_record([name.as_str(), &risk.to_string(), &weight.to_string(), "ok"])?;
        }
        for f in &self.failed {
            wr.write_record([f.name.as_str(), "inf", "0", "failed"])?;
        }
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, SuperLearnerError> {
        Ok(container::to_bytes(ENSEMBLE_MAGIC, ENSEMBLE_VERSION, self)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SuperLearnerError> {
        Ok(container::from_bytes(ENSEMBLE_MAGIC, ENSEMBLE_VERSION, bytes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::folds::{kfold, stratified_folds};
    use crate::learners::LearnerKind;
    use crate::linalg::sigmoid;
    use crate::types::rng_from;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::Rng;

    fn grid_argmin(preds: ArrayView2<f64>, y: &[f64], loss: StackLoss) -> Vec<f64> {
        let k = preds.ncols();
        let mut best = (f64::INFINITY, vec![]);
        let steps = 100;
        for a in 0..=steps {
            for b in 0..=(if k == 3 { steps - a } else { 0 }) {
                let alpha = match k {
                    2 => vec![a as f64 / 100.0, 1.0 - a as f64 / 100.0],
                    _ => vec![a as f64 / 100.0, b as f64 / 100.0, (steps - a - b) as f64 / 100.0],
                };
                let f = objective(preds, y, &alpha, loss);
                if f < best.0 {
                    best = (f, alpha);
                }
            }
        }
        best.1
    }

    fn noisy_candidates(n: usize, k: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = rng_from(seed);
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = truth.iter().map(|&t| (rng.random::<f64>() < sigmoid(t)) as u8 as f64).collect();
        let noise: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..2.0)).collect();
        let preds = Array2::from_shape_fn((n, k), |(i, j)| sigmoid(truth[i] + noise[j] * rng.random_range(-1.0..1.0)));
        (preds, y)
    }

    #[test]
    fn simplex_projection_examples() {
        assert_eq!(project_simplex(&[0.5, 0.5]), vec![0.5, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_simplex(&[0.3, -0.4, 0.9]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12 && p[1] == 0.0);
        assert!((p[2] - p[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn constant_prior_risk_is_ln2() {
        let y: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let plan = stratified_folds(&crate::metrics::to_bool(&y), 5, 1).unwrap();
        let x = Array2::zeros((40, 1));
        let spec = LearnerSpec::new(LearnerKind::LogisticGlm, LearnerTask::Binary, 0);
        let r = cv_risk(&spec, x.view(), &y, &plan, StackLoss::NegLogLikelihood).unwrap();
        assert!((r - std::f64::consts::LN_2).abs() < 1e-9, "{r}");
    }

    #[test]
    fn mean_predictor_risk_matches_fold_by_fold() {
        let mut rng = rng_from(3);
        let y: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..10.0)).collect();
        let x = Array2::zeros((20, 1));
        let plan = kfold(20, 5, 2).unwrap();
        let spec = LearnerSpec::new(LearnerKind::LinearGlm, LearnerTask::Regression, 0);
        let r = cv_risk(&spec, x.view(), &y, &plan, StackLoss::SquaredError).unwrap();
        let mut total = 0.0;
        for f in 0..5 {
            let tr = plan.train_indices(f);
            let m = tr.iter().map(|&i| y[i]).sum::<f64>() / tr.len() as f64;
            total += plan.test_indices(f).iter().map(|&i| (y[i] - m).powi(2)).sum::<f64>();
        }
        assert!((r - total / 20.0).abs() < 1e-9, "{r} {}", total / 20.0);
    }

    #[test]
    fn oracle_predictor_risk_is_near_zero() {
        let y = [0.0, 1.0, 1.0, 0.0];
        assert!(StackLoss::NegLogLikelihood.mean(&y, &y) < 1e-11);
    }

    #[test]
    fn weight_examples() {
        let (p, y) = noisy_candidates(200, 1, 1);
        let dup = Array2::from_shape_fn((200, 2), |(i, _)| p[[i, 0]]);
        assert_eq!(solve_weights(dup.view(), &y, StackLoss::NegLogLikelihood), vec![0.5, 0.5]);
        assert_eq!(solve_weights(p.view(), &y, StackLoss::NegLogLikelihood), vec![1.0]);
        let mut rng = rng_from(2);
        let tn = Array2::from_shape_fn((200, 2), |(i, j)| if j == 0 { y[i] } else { rng.random::<f64>() });
        let a = solve_weights(tn.view(), &y, StackLoss::NegLogLikelihood);
        assert!((a[0] - 1.0).abs() < 1e-3, "{a:?}");
        assert_eq!(solve_weights(array![[1.0, 3.0], [1.0, 3.0]].view(), &[2.0, 2.0], StackLoss::SquaredError), vec![0.5, 0.5]);
    }

    #[test]
    fn weights_match_grid_search() {
        for seed in 0..20 {
            for k in [2, 3] {
                let (p, y) = noisy_candidates(150, k, seed * 7 + k as u64);
                for loss in [StackLoss::NegLogLikelihood, StackLoss::SquaredError] {
                    let a = solve_weights(p.view(), &y, loss);
                    let g = grid_argmin(p.view(), &y, loss);
                    assert!(a.iter().zip(&g).all(|(u, v)| (u - v).abs() <= 0.02), "seed {seed} {a:?} vs {g:?}");
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn weights_are_on_simplex_optimal_and_symmetric(seed in 0u64..10_000, k in 1usize..6) {
            let (p, y) = noisy_candidates(80, k, seed);
            let loss = StackLoss::NegLogLikelihood;
            let a = solve_weights(p.view(), &y, loss);
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-9 && a.iter().all(|&v| v >= 0.0));
            let f = objective(p.view(), &y, &a, loss);
            for j in 0..k {
                prop_assert!(f <= loss.mean(&p.column(j).to_vec(), &y) + 1e-6);
            }
            let rev: Vec<usize> = (0..k).rev().collect();
            let pr = p.select(ndarray::Axis(1), &rev);
            let ar = solve_weights(pr.view(), &y, loss);
            for j in 0..k {
                prop_assert!((ar[j] - a[rev[j]]).abs() < 1e-6, "{:?} {:?}", a, ar);
            }
        }
    }

    fn nonlinear(n: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = rng_from(seed);
        let x = Array2::<f64>::from_shape_fn((n, 3), |_| rng.random_range(-2.0..2.0));
        let y = (0..n).map(|i| (rng.random::<f64>() < sigmoid(3.0 * (x[[i, 0]] * x[[i, 1]]).signum())) as u8 as f64).collect();
        (x, y)
    }

    #[test]
    fn gbm_dominates_glm_on_interaction_task() {
        let (x, y) = nonlinear(400, 5);
        let plan = stratified_folds(&crate::metrics::to_bool(&y), 5, 3).unwrap();
        let specs = [
            LearnerSpec::new(LearnerKind::LogisticGlm, LearnerTask::Binary, 0),
            LearnerSpec::new(LearnerKind::GradientBoostedTrees, LearnerTask::Binary, 1).with("n_trees", 50.0),
        ];
        let ens = fit_super_learner(SlVariant::SlIIRaw, &specs, x.view(), &y, &plan).unwrap();
        assert!(ens.weights[1] > 0.5, "{:?}", ens.weights);
        assert!(ens.cv_risks[1] < ens.cv_risks[0]);
        assert!(ens.oof_loss <= ens.cv_risks.iter().copied().fold(f64::INFINITY, f64::min) + 1e-6);
        let back = StackedEnsemble::from_bytes(&ens.to_bytes().unwrap()).unwrap();
        assert_eq!(back.predict(x.view()).unwrap(), ens.predict(x.view()).unwrap());
        let mut buf = Vec::new();
        ens.write_risk_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("candidate,cv_risk,weight,status\nlogistic_glm,"));
    }

    #[test]
    fn failed_candidates_are_excluded_and_all_failed_is_an_error() {
        let (x, y) = nonlinear(60, 6);
        let plan = stratified_folds(&crate::metrics::to_bool(&y), 5, 3).unwrap();
        let bad = LearnerSpec::new(LearnerKind::LogisticGlm, LearnerTask::Binary, 0).with("unknown", 1.0);
        let good = LearnerSpec::new(LearnerKind::LogisticGlm, LearnerTask::Binary, 0);
        let ens = fit_super_learner(SlVariant::SlIIRaw, &[bad.clone(), good], x.view(), &y, &plan).unwrap();
        assert_eq!(ens.weights, vec![1.0]);
        assert_eq!(ens.failed.len(), 1);
        assert!(matches!(fit_super_learner(SlVariant::SlIIRaw, &[bad], x.view(), &y, &plan), Err(SuperLearnerError::AllCandidatesFailed(_))));
    }
}
