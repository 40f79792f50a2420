//! Maximum-likelihood logistic regression (Newton / IRLS) and least-squares
//! linear regression, both with an unpenalized intercept.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::linalg::{bce_with_logit, cholesky, cholesky_solve_factored, sigmoid};

pub const GRAD_TOL: f64 = 1e-8;
pub const SEPARATION_RIDGE: f64 = 1e-6;
pub const DEGENERATE_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitFlag {
    /// Data separable; refit with the small ridge.
    Separable,
    /// Singular design; ridge jitter added.
    DegenerateDesign,
    NotConverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(d: usize) -> Self {
        LinearModel { intercept: 0.0, coef: vec![0.0; d] }
    }

    pub fn linear_predictor(&self, x: ArrayView1<f64>) -> f64 {
        self.intercept + x.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn predict_linear(&self, x: ArrayView2<f64>) -> Vec<f64> {
        x.rows().into_iter().map(|r| self.linear_predictor(r)).collect()
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Vec<f64> {
        x.rows().into_iter().map(|r| sigmoid(self.linear_predictor(r))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub model: LinearModel,
    pub iterations: usize,
    /// Euclidean norm of the objective gradient at the returned point.
    pub grad_norm: f64,
    pub flags: Vec<FitFlag>,
}

fn design(x: ArrayView2<f64>) -> Array2<f64> {
    let (n, d) = x.dim();
    let mut z = Array2::<f64>::ones((n, d + 1));
    z.slice_mut(s![.., 1..]).assign(&x);
    z
}

/// Mean negative log-likelihood plus `λ/2 ‖w‖²` (intercept unpenalized).
pub fn logistic_objective(z: &Array2<f64>, y: &[f64], beta: &Array1<f64>, lambda: f64) -> f64 {
    let eta = z.dot(beta);
    let nll = eta.iter().zip(y).map(|(&e, &t)| bce_with_logit(e, t)).sum::<f64>() / y.len() as f64;
    nll + 0.5 * lambda * beta.slice(s![1..]).dot(&beta.slice(s![1..]))
}

fn logistic_grad_hess(z: &Array2<f64>, y: &[f64], beta: &Array1<f64>, lambda: f64) -> (Array1<f64>, Array2<f64>) {
    let (g, w) = logistic_grad_weights(z, y, beta, lambda);
    let zw = z * &w.view().insert_axis(Axis(1));
    let mut h = z.t().dot(&zw) / y.len() as f64;
    for j in 1..beta.len() {
        h[[j, j]] += lambda;
    }
    (g, h)
}

/// Penalized gradient and the IRLS weights `p(1-p)`.
fn logistic_grad_weights(z: &Array2<f64>, y: &[f64], beta: &Array1<f64>, lambda: f64) -> (Array1<f64>, Array1<f64>) {
    let n = y.len() as f64;
    let p: Array1<f64> = z.dot(beta).mapv(sigmoid);
    let r = &p - &ArrayView1::from(y);
    let mut g = z.t().dot(&r) / n;
    for j in 1..beta.len() {
        g[j] += lambda * beta[j];
    }
    (g, p.mapv(|v| v * (1.0 - v)))
}

/// Newton direction `H⁻¹g` for a ridge fit with more coefficients than
/// rows, through the `n × n` system instead of the `d × d` Hessian.
///
/// With `s = √(w/n)` and `U = Xᵀ diag(s)`, the penalized block is
/// `M = λI + UUᵀ`, so `M⁻¹v = (v − U (λI + UᵀU)⁻¹ Uᵀv) / λ`; the
/// unpenalized intercept is eliminated through its Schur complement.
/// `gram` is `XXᵀ` (intercept column excluded). Requires `λ > 0`.
fn dual_newton_step(z: &Array2<f64>, gram: &Array2<f64>, w: &Array1<f64>, g: &Array1<f64>, lambda: f64) -> Option<Array1<f64>> {
    let n = z.nrows();
    let x = z.slice(s![.., 1..]);
    let sc: Array1<f64> = w.mapv(|v| (v / n as f64).sqrt());
    let mut k = gram * &sc.view().insert_axis(Axis(1)) * sc.view().insert_axis(Axis(0));
    for i in 0..n {
        k[[i, i]] += lambda;
    }
    let l = cholesky(k.view())?;
    let m_inv = |v: ArrayView1<f64>| -> Array1<f64> {
        let ut_v = x.dot(&v) * &sc;
        let u_k = x.t().dot(&(cholesky_solve_factored(&l, ut_v.view()) * &sc));
        (&v - &u_k) / lambda
    };
    let a = w.sum() / n as f64;
    let b = x.t().dot(w) / n as f64;
    let g1 = g.slice(s![1..]);
    let (m_g, m_b) = (m_inv(g1), m_inv(b.view()));
    let schur = a - b.dot(&m_b);
    if !(schur > 0.0) {
        return None;
    }
    let d0 = (g[0] - b.dot(&m_g)) / schur;
    let mut step = Array1::zeros(z.ncols());
    step[0] = d0;
    step.slice_mut(s![1..]).assign(&(&m_g - &(&m_b * d0)));
    Some(step)
}

/// Newton iterations with step halving on the penalized objective.
fn newton_logistic(z: &Array2<f64>, y: &[f64], lambda: f64, max_iter: usize) -> (Array1<f64>, usize, f64, bool, bool) {
    let d = z.ncols();
    let mut beta = Array1::<f64>::zeros(d);
    let mean_y = y.iter().sum::<f64>() / y.len() as f64;
    if mean_y > 0.0 && mean_y < 1.0 {
        beta[0] = (mean_y / (1.0 - mean_y)).ln();
    }
    let mut obj = logistic_objective(z, y, &beta, lambda);
    let mut jitter = false;
    let mut gnorm = f64::INFINITY;
    let gram = (lambda > 0.0 && d - 1 > z.nrows()).then(|| {
        let x = z.slice(s![.., 1..]);
        x.dot(&x.t())
    });
    for it in 0..max_iter {
        let dual = match &gram {
            Some(gram) => {
                let (g, w) = logistic_grad_weights(z, y, &beta, lambda);
                gnorm = g.dot(&g).sqrt();
                if gnorm <= GRAD_TOL {
                    return (beta, it, gnorm, true, jitter);
                }
                dual_newton_step(z, gram, &w, &g, lambda).ok_or(g)
            }
            None => Err(Array1::zeros(0)),
        };
        let step = match dual {
            Ok(step) => step,
            Err(_) => {
                let (g, mut h) = logistic_grad_hess(z, y, &beta, lambda);
                gnorm = g.dot(&g).sqrt();
                if gnorm <= GRAD_TOL {
                    return (beta, it, gnorm, true, jitter);
                }
                let l = match cholesky(h.view()) {
                    Some(l) => l,
                    None => {
                        jitter = true;
                        for j in 0..d {
                            h[[j, j]] += DEGENERATE_RIDGE.max(1e-10 * h[[j, j]].abs());
                        }
                        match cholesky(h.view()) {
                            Some(l) => l,
                            None => return (beta, it, gnorm, false, jitter),
                        }
                    }
                };
                cholesky_solve_factored(&l, g.view())
            }
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let cand = &beta - &(&step * t);
            let c_obj = logistic_objective(z, y, &cand, lambda);
            if c_obj <= obj {
                beta = cand;
                obj = c_obj;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            // No decrease representable in floating point: at the optimum.
            return (beta, it, gnorm, gnorm <= 1e-6, jitter);
        }
        if beta.iter().any(|b| !b.is_finite() || b.abs() > 1e8) {
            return (beta, it, gnorm, false, jitter);
        }
    }
    (beta, max_iter, gnorm, gnorm <= GRAD_TOL, jitter)
}

fn is_separated(z: &Array2<f64>, y: &[f64], beta: &Array1<f64>) -> bool {
    let eta = z.dot(beta);
    // A fit that classifies every row correctly is a separating hyperplane.
    eta.iter().zip(y).all(|(&e, &t)| if t > 0.5 { e > 0.0 } else { e < 0.0 })
}

/// Logistic regression. Separable data (divergent or perfect fit) is refit
/// with ridge `λ = 1e-6` and flagged.
pub fn fit_logistic(x: ArrayView2<f64>, y: &[f64]) -> GlmFit {
    fit_logistic_ridge(x, y, 0.0)
}

pub fn fit_logistic_ridge(x: ArrayView2<f64>, y: &[f64], lambda: f64) -> GlmFit {
    assert_eq!(x.nrows(), y.len(), "row count mismatch");
    let z = design(x);
    let mut flags = Vec::new();
    let (mut beta, mut it, mut gnorm, mut converged, mut jitter) = newton_logistic(&z, y, lambda, 100);
    if lambda < SEPARATION_RIDGE && (!converged || is_separated(&z, y, &beta)) {
        flags.push(FitFlag::Separable);
        (beta, it, gnorm, converged, jitter) = newton_logistic(&z, y, SEPARATION_RIDGE, 200);
    }
    if jitter {
        flags.push(FitFlag::DegenerateDesign);
    }
    if !converged {
        flags.push(FitFlag::NotConverged);
    }
    let model = LinearModel { intercept: beta[0], coef: beta.slice(s![1..]).to_vec() };
    GlmFit { model, iterations: it, grad_norm: gnorm, flags }
}

/// Ordinary least squares with an optional ridge on the coefficients.
/// A singular design gets a `1e-8` ridge and is flagged.
pub fn fit_linear(x: ArrayView2<f64>, y: &[f64], lambda: f64) -> GlmFit {
    assert_eq!(x.nrows(), y.len(), "row count mismatch");
    let n = y.len() as f64;
    let z = design(x);
    let yv = ArrayView1::from(y);
    let mut a = z.t().dot(&z) / n;
    let b = z.t().dot(&yv) / n;
    let d = a.nrows();
    for j in 1..d {
        a[[j, j]] += lambda;
    }
    let mut flags = Vec::new();
    let l = match cholesky(a.view()) {
        Some(l) => l,
        None => {
            flags.push(FitFlag::DegenerateDesign);
            for j in 1..d {
                a[[j, j]] += DEGENERATE_RIDGE;
            }
            cholesky(a.view()).expect("ridge-regularized normal equations are positive definite")
        }
    };
    let beta = cholesky_solve_factored(&l, b.view());
    let g = a.dot(&beta) - &b;
    let grad_norm = g.dot(&g).sqrt();
    GlmFit { model: LinearModel { intercept: beta[0], coef: beta.slice(s![1..]).to_vec() }, iterations: 1, grad_norm, flags }
}

/// Gradient of the mean logistic NLL (no penalty) at a model, for checks.
pub fn logistic_gradient(x: ArrayView2<f64>, y: &[f64], m: &LinearModel) -> Vec<f64> {
    let z = design(x);
    let mut beta = Array1::<f64>::zeros(m.coef.len() + 1);
    beta[0] = m.intercept;
    beta.slice_mut(s![1..]).assign(&ArrayView1::from(&m.coef));
    logistic_grad_hess(&z, y, &beta, 0.0).0.to_vec()
}
