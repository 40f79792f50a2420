//! FFN, GRU and MMDL networks sharing one forward/backward implementation.
//!
//! MMDL: a dense branch over static features and a GRU over the hourly
//! series; the branch outputs are concatenated into a shared dense layer that
//! feeds one logit per task output.

use ndarray::{s, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::layers::{Activation, Dense, DenseCache, Grads, GruCache, GruCell, Params};
use super::NeuralError;
use crate::linalg::{bce_with_logit, sigmoid};
use crate::types::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Dense stack over a flat feature vector.
    Ffn,
    /// GRU over the hourly series; the last hidden state feeds the head.
    Gru,
    Mmdl,
}

impl Architecture {
    pub fn uses_static(self) -> bool {
        self != Architecture::Gru
    }

    pub fn uses_temporal(self) -> bool {
        self != Architecture::Ffn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Independent sigmoid outputs, mean binary cross-entropy.
    Binary,
    /// Unbounded outputs, mean squared error on the standardized target.
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub arch: Architecture,
    pub static_dim: usize,
    pub temporal_dim: usize,
    pub ffn_hidden: Vec<usize>,
    pub gru_hidden: usize,
    pub shared_hidden: usize,
    pub n_outputs: usize,
    pub output: OutputKind,
    pub batch_norm: bool,
    pub activation: Activation,
    pub seed: u64,
}

impl NetConfig {
    pub fn new(arch: Architecture, static_dim: usize, temporal_dim: usize, n_outputs: usize, output: OutputKind, seed: u64) -> Self {
        NetConfig {
            arch,
            static_dim,
            temporal_dim,
            ffn_hidden: vec![64, 64],
            gru_hidden: 64,
            shared_hidden: 64,
            n_outputs,
            output,
            batch_norm: true,
            activation: Activation::Relu,
            seed,
        }
    }
}

/// A batch of network inputs. `statics` is `[n × S]` (possibly `S = 0`);
/// `temporal` is time-major `[T × n × P]` (possibly `T = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct NetInput {
    pub statics: Array2<f64>,
    pub temporal: Array3<f64>,
}

impl NetInput {
    pub fn new(statics: Array2<f64>, temporal: Array3<f64>) -> Result<Self, NeuralError> {
        if temporal.shape()[0] > 0 && temporal.shape()[1] != statics.nrows() {
            return Err(NeuralError::ShapeMismatch(format!("{} static rows vs {} sequences", statics.nrows(), temporal.shape()[1])));
        }
        Ok(NetInput { statics, temporal })
    }

    pub fn statics_only(statics: Array2<f64>) -> Self {
        let n = statics.nrows();
        NetInput { statics, temporal: Array3::zeros((0, n, 0)) }
    }

    pub fn n(&self) -> usize {
        self.statics.nrows()
    }

    pub fn steps(&self) -> usize {
        self.temporal.shape()[0]
    }

    pub fn select(&self, rows: &[usize]) -> NetInput {
        NetInput { statics: self.statics.select(Axis(0), rows), temporal: self.temporal.select(Axis(1), rows) }
    }

    fn temporal_flat(&self) -> Array2<f64> {
        let (t, n, p) = self.temporal.dim();
        self.temporal.to_shape((t * n, p)).expect("contiguous reshape").into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub config: NetConfig,
    pub params: Params,
    pub ffn: Vec<Dense>,
    pub gru: Option<GruCell>,
    pub shared: Option<Dense>,
    pub head: Dense,
    /// Regression targets are trained as `(y - shift) / scale`.
    pub target_shift: f64,
    pub target_scale: f64,
}

pub struct Forward {
    ffn: Vec<DenseCache>,
    gru: Option<GruCache>,
    shared: Option<DenseCache>,
    head: DenseCache,
}

impl Forward {
    pub fn logits(&self) -> &Array2<f64> {
        &self.head.out
    }
}

const INFERENCE_CHUNK: usize = 2048;

impl Network {
    pub fn new(config: NetConfig) -> Self {
        let mut rng = rng_from(config.seed);
        let mut params = Params::default();
        let bn = config.batch_norm;
        let mut ffn = Vec::new();
        let mut width = 0;
        if config.arch.uses_static() {
            width = config.static_dim;
            for (i, &h) in config.ffn_hidden.iter().enumerate() {
                ffn.push(Dense::new(&mut params, &format!("ffn{i}"), width, h, config.activation, bn, &mut rng));
                width = h;
            }
        }
        let gru = config.arch.uses_temporal().then(|| GruCell::new(&mut params, "gru", config.temporal_dim, config.gru_hidden, &mut rng));
        let mut head_in = match config.arch {
            Architecture::Ffn => width,
            Architecture::Gru => config.gru_hidden,
            Architecture::Mmdl => width + config.gru_hidden,
        };
        let shared = (config.arch == Architecture::Mmdl).then(|| {
            let d = Dense::new(&mut params, "shared", head_in, config.shared_hidden, config.activation, bn, &mut rng);
            head_in = config.shared_hidden;
            d
        });
        let head = Dense::new(&mut params, "head", head_in, config.n_outputs, Activation::Identity, false, &mut rng);
        Network { config, params, ffn, gru, shared, head, target_shift: 0.0, target_scale: 1.0 }
    }

    fn check_input(&self, input: &NetInput) -> Result<(), NeuralError> {
        let c = &self.config;
        if c.arch.uses_static() && input.statics.ncols() != c.static_dim {
            return Err(NeuralError::ShapeMismatch(format!("static width {} vs {}", input.statics.ncols(), c.static_dim)));
        }
        if c.arch.uses_temporal() && (input.steps() == 0 || input.temporal.shape()[2] != c.temporal_dim) {
            return Err(NeuralError::ShapeMismatch(format!("temporal shape {:?} vs width {}", input.temporal.shape(), c.temporal_dim)));
        }
        Ok(())
    }

    pub fn forward(&self, input: &NetInput, training: bool) -> Result<Forward, NeuralError> {
        self.check_input(input)?;
        let p = &self.params;
        let mut ffn = Vec::with_capacity(self.ffn.len());
        let mut x = input.statics.clone();
        if self.config.arch.uses_static() {
            for layer in &self.ffn {
                let c = layer.forward(p, x.view(), training);
                x = c.out.clone();
                ffn.push(c);
            }
        }
        let gru = self.gru.as_ref().map(|cell| cell.forward(p, input.temporal_flat(), input.steps()));
        let trunk = match self.config.arch {
            Architecture::Ffn => x,
            Architecture::Gru => gru.as_ref().unwrap().h.last().unwrap().clone(),
            Architecture::Mmdl => ndarray::concatenate(Axis(1), &[x.view(), gru.as_ref().unwrap().h.last().unwrap().view()]).expect("same rows"),
        };
        let shared = self.shared.as_ref().map(|d| d.forward(p, trunk.view(), training));
        let head_in = shared.as_ref().map(|c| c.out.view()).unwrap_or(trunk.view()).to_owned();
        let head = self.head.forward(p, head_in.view(), training);
        Ok(Forward { ffn, gru, shared, head })
    }

    /// Mean loss of the logits against raw targets `[n × K]`.
    pub fn loss_of(&self, logits: &Array2<f64>, y: &Array2<f64>) -> f64 {
        let m = logits.len() as f64;
        match self.config.output {
            OutputKind::Binary => logits.iter().zip(y.iter()).map(|(&z, &t)| bce_with_logit(z, t)).sum::<f64>() / m,
            OutputKind::Regression => {
                logits
                    .iter()
                    .zip(y.iter())
                    .map(|(&z, &t)| {
                        let d = z - (t - self.target_shift) / self.target_scale;
                        d * d
                    })
                    .sum::<f64>()
                    / m
            }
        }
    }

    fn loss_gradient(&self, logits: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
        let m = logits.len() as f64;
        let mut d = logits.clone();
        match self.config.output {
            OutputKind::Binary => ndarray::Zip::from(&mut d).and(y).for_each(|d, &t| *d = (sigmoid(*d) - t) / m),
            OutputKind::Regression => {
                let (sh, sc) = (self.target_shift, self.target_scale);
                ndarray::Zip::from(&mut d).and(y).for_each(|d, &t| *d = 2.0 * (*d - (t - sh) / sc) / m)
            }
        }
        d
    }

    /// Training-mode loss and exact gradients for every parameter tensor.
    pub fn loss_and_grad(&self, input: &NetInput, y: &Array2<f64>) -> Result<(f64, Grads, Forward), NeuralError> {
        let fwd = self.forward(input, true)?;
        if y.dim() != fwd.logits().dim() {
            return Err(NeuralError::ShapeMismatch(format!("targets {:?} vs outputs {:?}", y.dim(), fwd.logits().dim())));
        }
        let loss = self.loss_of(fwd.logits(), y);
        let p = &self.params;
        let mut grads = p.zeros_like();
        let d_logits = self.loss_gradient(fwd.logits(), y);
        let mut d = self.head.backward(p, &fwd.head, d_logits.view(), &mut grads);
        if let (Some(layer), Some(c)) = (&self.shared, &fwd.shared) {
            d = layer.backward(p, c, d.view(), &mut grads);
        }
        let ffn_width = match self.config.arch {
            Architecture::Ffn => d.ncols(),
            Architecture::Gru => 0,
            Architecture::Mmdl => d.ncols() - self.config.gru_hidden,
        };
        if let (Some(cell), Some(c)) = (&self.gru, &fwd.gru) {
            cell.backward(p, c, d.slice(s![.., ffn_width..]), &mut grads);
        }
        let mut d_ffn = d.slice(s![.., ..ffn_width]).to_owned();
        for (layer, c) in self.ffn.iter().zip(&fwd.ffn).rev() {
            d_ffn = layer.backward(p, c, d_ffn.view(), &mut grads);
        }
        Ok((loss, grads, fwd))
    }

    pub fn absorb_batch_stats(&mut self, fwd: &Forward) {
        for (layer, c) in self.ffn.iter_mut().zip(&fwd.ffn) {
            layer.absorb_batch_stats(c);
        }
        if let (Some(layer), Some(c)) = (&mut self.shared, &fwd.shared) {
            layer.absorb_batch_stats(c);
        }
    }

    fn chunks(n: usize) -> impl Iterator<Item = Vec<usize>> {
        (0..n).step_by(INFERENCE_CHUNK).map(move |a| (a..(a + INFERENCE_CHUNK).min(n)).collect())
    }

    /// Inference-mode logits.
    pub fn logits(&self, input: &NetInput) -> Result<Array2<f64>, NeuralError> {
        if input.n() <= INFERENCE_CHUNK {
            return Ok(self.forward(input, false)?.head.out);
        }
        let mut out = Array2::zeros((input.n(), self.config.n_outputs));
        for rows in Self::chunks(input.n()) {
            let part = self.forward(&input.select(&rows), false)?.head.out;
            out.slice_mut(s![rows[0]..rows[0] + rows.len(), ..]).assign(&part);
        }
        Ok(out)
    }

    /// Probabilities for binary outputs, target units for regression.
    pub fn predict(&self, input: &NetInput) -> Result<Array2<f64>, NeuralError> {
        let z = self.logits(input)?;
        Ok(match self.config.output {
            OutputKind::Binary => z.mapv(sigmoid),
            OutputKind::Regression => z.mapv(|v| v * self.target_scale + self.target_shift),
        })
    }

    /// Inference-mode loss.
    pub fn eval_loss(&self, input: &NetInput, y: &Array2<f64>) -> Result<f64, NeuralError> {
        Ok(self.loss_of(&self.logits(input)?, y))
    }
}

/// Central-difference gradient check over every scalar parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst: String,
    pub n_checked: usize,
}

/// Denominator floor for the relative error, so exactly-zero gradients
/// compare on absolute error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-8;

pub fn gradient_check(net: &Network, input: &NetInput, y: &Array2<f64>, eps: f64) -> Result<GradCheck, NeuralError> {
    let (_, grads, _) = net.loss_and_grad(input, y)?;
    let mut probe = net.clone();
    let mut report = GradCheck { max_rel_error: 0.0, worst: String::new(), n_checked: 0 };
    for (t, grad) in grads.iter().enumerate() {
        for idx in 0..grad.len() {
            let (r, c) = (idx / grad.ncols(), idx % grad.ncols());
            let orig = probe.params.tensors[t][[r, c]];
            probe.params.tensors[t][[r, c]] = orig + eps;
            let up = probe.loss_of(probe.forward(input, true)?.logits(), y);
            probe.params.tensors[t][[r, c]] = orig - eps;
            let down = probe.loss_of(probe.forward(input, true)?.logits(), y);
            probe.params.tensors[t][[r, c]] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grad[[r, c]];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("{}[{r},{c}] analytic {analytic:e} numeric {numeric:e}", net.params.names[t]);
            }
            report.n_checked += 1;
        }
    }
    Ok(report)
}
