//! RMSProp mini-batch training with early stopping on validation loss.

use std::io::Write;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::layers::{Grads, Params};
use super::network::{NetInput, Network, OutputKind};
use super::NeuralError;
use crate::folds::STD_FLOOR;
use crate::types::{derive_seed, rng_from};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn for_output(output: OutputKind, seed: u64) -> Self {
        TrainConfig {
            lr: match output {
                OutputKind::Binary => 0.001,
                OutputKind::Regression => 0.005,
            },
            rho: 0.9,
            eps: 1e-8,
            batch_size: 100,
            max_epochs: 250,
            patience: 10,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if !(self.lr >= 0.0) || self.batch_size == 0 || !(0.0..1.0).contains(&self.rho) {
            return Err(NeuralError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

/// `a ← ρa + (1-ρ)g²; θ ← θ - lr·g/√(a+ε)`.
#[derive(Debug, Clone)]
pub struct Rmsprop {
    pub acc: Vec<Array2<f64>>,
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
}

impl Rmsprop {
    pub fn new(params: &Params, cfg: &TrainConfig) -> Self {
        Rmsprop { acc: params.zeros_like(), lr: cfg.lr, rho: cfg.rho, eps: cfg.eps }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Grads) {
        let (lr, rho, eps) = (self.lr, self.rho, self.eps);
        for ((theta, g), a) in params.tensors.iter_mut().zip(grads).zip(&mut self.acc) {
            ndarray::Zip::from(theta).and(g).and(a).for_each(|t, &g, a| {
                *a = rho * *a + (1.0 - rho) * g * g;
                *t -= lr * g / (*a + eps).sqrt();
            });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were restored.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Mini-batches skipped because the loss was not finite.
    pub skipped_steps: usize,
}

impl TrainHistory {
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "train_loss", "val_loss"])?;
        for r in &self.epochs {
            out.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.val_loss.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Contiguous mini-batches over a shuffled order; a trailing batch of one
/// sample is merged into its predecessor so batch statistics exist.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let k = out.len() - 1;
        out[k] = &order[k * size..];
    }
    out
}

/// Trains in place and leaves the best-validation weights in `net`.
/// Regression targets are standardized on `y_train` first.
pub fn train(
    net: &mut Network,
    train: &NetInput,
    y_train: &Array2<f64>,
    val: &NetInput,
    y_val: &Array2<f64>,
    cfg: &TrainConfig,
) -> Result<TrainHistory, NeuralError> {
    cfg.validate()?;
    if val.n() == 0 {
        return Err(NeuralError::EmptyValidation);
    }
    if train.n() == 0 || y_train.nrows() != train.n() || y_val.nrows() != val.n() {
        return Err(NeuralError::ShapeMismatch(format!("{} inputs vs {} targets", train.n(), y_train.nrows())));
    }
    if net.config.output == OutputKind::Regression {
        let m = y_train.mean().unwrap_or(0.0);
        let sd = (y_train.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / y_train.len() as f64).sqrt();
        net.target_shift = m;
        net.target_scale = sd.max(STD_FLOOR);
    }
    let mut opt = Rmsprop::new(&net.params, cfg);
    let mut order: Vec<usize> = (0..train.n()).collect();
    let mut best = net.clone();
    let mut history = TrainHistory { epochs: Vec::new(), best_epoch: 0, best_val_loss: f64::INFINITY, skipped_steps: 0 };
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_from(derive_seed(cfg.seed, epoch as u64)));
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        for rows in batches(&order, cfg.batch_size) {
            let input = train.select(rows);
            let y = y_train.select(Axis(0), rows);
            let (loss, grads, fwd) = net.loss_and_grad(&input, &y)?;
            if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                history.skipped_steps += 1;
                continue;
            }
            opt.step(&mut net.params, &grads);
            net.absorb_batch_stats(&fwd);
            loss_sum += loss * rows.len() as f64;
            loss_n += rows.len();
        }
        let train_loss = if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN };
        let val_loss = net.eval_loss(val, y_val)?;
        history.epochs.push(EpochRecord { epoch, train_loss, val_loss });
        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best = net.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    if history.best_epoch > 0 {
        *net = best;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auroc;
    use crate::neural::layers::glorot;
    use crate::neural::network::{Architecture, NetConfig};

    fn separable(n: usize, seed: u64) -> (NetInput, Array2<f64>) {
        let x = glorot(n, 2, &mut rng_from(seed)) * 3.0;
        let y = Array2::from_shape_fn((n, 1), |(i, _)| (x[[i, 0]] + 0.5 * x[[i, 1]] > 0.0) as u8 as f64);
        (NetInput::statics_only(x), y)
    }

    #[test]
    fn separable_toy_task_is_learned() {
        let (x, y) = separable(200, 1);
        let (xv, yv) = separable(200, 2);
        let mut cfg = NetConfig::new(Architecture::Ffn, 2, 0, 1, OutputKind::Binary, 3);
        cfg.ffn_hidden = vec![16];
        let mut net = Network::new(cfg);
        let tc = TrainConfig::for_output(OutputKind::Binary, 5);
        let h = train(&mut net, &x, &y, &xv, &yv, &tc).unwrap();
        let p = net.predict(&xv).unwrap();
        let labels: Vec<bool> = yv.iter().map(|&v| v > 0.5).collect();
        let a = auroc(&p.column(0).to_vec(), &labels).unwrap();
        assert!(a >= 0.99, "auroc {a} after {} epochs", h.epochs.len());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (x, y) = separable(60, 1);
        let mut net = Network::new(NetConfig::new(Architecture::Ffn, 2, 0, 1, OutputKind::Binary, 3));
        let before = net.params.clone();
        let mut tc = TrainConfig::for_output(OutputKind::Binary, 5);
        tc.lr = 0.0;
        tc.max_epochs = 5;
        train(&mut net, &x, &y, &x, &y, &tc).unwrap();
        assert_eq!(net.params, before);
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = separable(120, 7);
        let run = || {
            let mut net = Network::new(NetConfig::new(Architecture::Ffn, 2, 0, 1, OutputKind::Binary, 3));
            let mut tc = TrainConfig::for_output(OutputKind::Binary, 5);
            tc.max_epochs = 8;
            let h = train(&mut net, &x, &y, &x, &y, &tc).unwrap();
            (net, h)
        };
        let (n1, h1) = run();
        let (n2, h2) = run();
        assert_eq!(n1, n2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn rmsprop_step_magnitude_tends_to_lr() {
        let mut p = Params::default();
        p.push("theta", Array2::zeros((1, 2)));
        let cfg = TrainConfig::for_output(OutputKind::Binary, 0);
        let mut opt = Rmsprop::new(&p, &cfg);
        let g = vec![ndarray::array![[0.3, -2.0]]];
        let mut last = p.tensors[0].clone();
        for _ in 0..200 {
            opt.step(&mut p, &g);
            let d = &p.tensors[0] - &last;
            last = p.tensors[0].clone();
            assert!(d[[0, 0]] < 0.0 && d[[0, 1]] > 0.0);
        }
        let step = {
            let before = p.tensors[0].clone();
            opt.step(&mut p, &g);
            &p.tensors[0] - &before
        };
        assert!((step[[0, 0]] + cfg.lr).abs() < 1e-6 && (step[[0, 1]] - cfg.lr).abs() < 1e-6, "{step:?}");
    }

    #[test]
    fn empty_validation_is_rejected() {
        let (x, y) = separable(20, 1);
        let mut net = Network::new(NetConfig::new(Architecture::Ffn, 2, 0, 1, OutputKind::Binary, 3));
        let empty = x.select(&[]);
        let tc = TrainConfig::for_output(OutputKind::Binary, 5);
        assert!(matches!(train(&mut net, &x, &y, &empty, &y.select(Axis(0), &[]), &tc), Err(NeuralError::EmptyValidation)));
    }

    #[test]
    fn trailing_singleton_batch_is_merged() {
        let order: Vec<usize> = (0..201).collect();
        let b = batches(&order, 100);
        assert_eq!(b.iter().map(|b| b.len()).collect::<Vec<_>>(), [100, 101]);
    }
}
