//! Dense, batch-norm and GRU kernels over a shared parameter store.
//!
//! Batches are row-major: one sample per row. Every layer keeps indices into
//! [`Params`] rather than owning its weights, so optimizers, checkpoints and
//! gradient checks see a flat list of tensors.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::linalg::sigmoid;

pub const BN_EPS: f64 = 1e-8;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub tensors: Vec<Array2<f64>>,
    pub names: Vec<String>,
}

impl Params {
    pub fn push(&mut self, name: impl Into<String>, t: Array2<f64>) -> usize {
        self.tensors.push(t);
        self.names.push(name.into());
        self.tensors.len() - 1
    }

    pub fn zeros_like(&self) -> Vec<Array2<f64>> {
        self.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn fill(&mut self, v: f64) {
        for t in &mut self.tensors {
            t.fill(v);
        }
    }
}

pub type Grads = Vec<Array2<f64>>;

/// Glorot-uniform `[rows × cols]` matrix.
pub fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (rows + cols).max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Batch normalization of a dense pre-activation. Trainable scale/shift live
/// in the parameter store; running statistics do not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: usize,
    pub beta: usize,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `[out × in]`.
    pub w: usize,
    /// `[1 × out]`; absent under batch norm, whose shift subsumes it.
    pub b: Option<usize>,
    pub act: Activation,
    pub bn: Option<BatchNorm>,
    pub n_in: usize,
    pub n_out: usize,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    pub x: Array2<f64>,
    /// Input to the activation (after batch norm when present).
    pub y: Array2<f64>,
    pub out: Array2<f64>,
    pub bn: Option<BnCache>,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

impl Dense {
    pub fn new<R: Rng>(params: &mut Params, name: &str, n_in: usize, n_out: usize, act: Activation, batch_norm: bool, rng: &mut R) -> Self {
        let w = params.push(format!("{name}.w"), glorot(n_out, n_in, rng));
        let b = (!batch_norm).then(|| params.push(format!("{name}.b"), Array2::zeros((1, n_out))));
        let bn = batch_norm.then(|| BatchNorm {
            gamma: params.push(format!("{name}.bn_gamma"), Array2::ones((1, n_out))),
            beta: params.push(format!("{name}.bn_beta"), Array2::zeros((1, n_out))),
            running_mean: vec![0.0; n_out],
            running_var: vec![1.0; n_out],
        });
        Dense { w, b, act, bn, n_in, n_out }
    }

    /// `s(X Wᵀ + b)`, with batch statistics when `training`, running
    /// statistics otherwise.
    pub fn forward(&self, p: &Params, x: ArrayView2<f64>, training: bool) -> DenseCache {
        let mut z = x.dot(&p.tensors[self.w].t());
        if let Some(b) = self.b {
            z += &p.tensors[b].row(0);
        }
        let (y, bn) = match &self.bn {
            None => (z, None),
            Some(bn) => {
                let n = z.nrows() as f64;
                let (mean, var) = if training {
                    let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
                    let var: Array1<f64> = z.axis_iter(Axis(1)).zip(mean.iter()).map(|(c, m)| c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).collect();
                    (mean, var)
                } else {
                    (Array1::from(bn.running_mean.clone()), Array1::from(bn.running_var.clone()))
                };
                let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                let xhat = (&z - &mean) * &inv_std;
                let y = &xhat * &p.tensors[bn.gamma].row(0) + p.tensors[bn.beta].row(0);
                (y, Some(BnCache { xhat, inv_std, mean, var }))
            }
        };
        let out = y.mapv(|v| self.act.apply(v));
        DenseCache { x: x.to_owned(), y, out, bn }
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the input.
    pub fn backward(&self, p: &Params, cache: &DenseCache, d_out: ArrayView2<f64>, grads: &mut Grads) -> Array2<f64> {
        let mut dy = d_out.to_owned();
        ndarray::Zip::from(&mut dy).and(&cache.y).and(&cache.out).for_each(|d, &y, &o| *d *= self.act.derivative(y, o));
        let dz = match (&self.bn, &cache.bn) {
            (Some(bn), Some(c)) => {
                let n = dy.nrows() as f64;
                grads[bn.gamma].row_mut(0).scaled_add(1.0, &(&dy * &c.xhat).sum_axis(Axis(0)));
                grads[bn.beta].row_mut(0).scaled_add(1.0, &dy.sum_axis(Axis(0)));
                let dxhat = &dy * &p.tensors[bn.gamma].row(0);
                let sum_dxhat = dxhat.sum_axis(Axis(0));
                let sum_dxhat_xhat = (&dxhat * &c.xhat).sum_axis(Axis(0));
                let mut dz = &dxhat * n - &sum_dxhat - &(&c.xhat * &sum_dxhat_xhat);
                dz *= &(&c.inv_std / n);
                dz
            }
            _ => dy,
        };
        grads[self.w].scaled_add(1.0, &dz.t().dot(&cache.x));
        if let Some(b) = self.b {
            grads[b].row_mut(0).scaled_add(1.0, &dz.sum_axis(Axis(0)));
        }
        dz.dot(&p.tensors[self.w])
    }

    /// Folds a training batch's statistics into the running averages.
    pub fn absorb_batch_stats(&mut self, cache: &DenseCache) {
        if let (Some(bn), Some(c)) = (&mut self.bn, &cache.bn) {
            for j in 0..bn.running_mean.len() {
                bn.running_mean[j] = BN_MOMENTUM * bn.running_mean[j] + (1.0 - BN_MOMENTUM) * c.mean[j];
                bn.running_var[j] = BN_MOMENTUM * bn.running_var[j] + (1.0 - BN_MOMENTUM) * c.var[j];
            }
        }
    }
}

/// GRU cell; input weights `[H × P]`, recurrent weights `[H × H]`, biases `[1 × H]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub w_z: usize,
    pub w_r: usize,
    pub w_h: usize,
    pub u_z: usize,
    pub u_r: usize,
    pub u_h: usize,
    pub b_z: usize,
    pub b_r: usize,
    pub b_h: usize,
    pub hidden: usize,
    pub input: usize,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    /// Inputs flattened time-major, `[(T·n) × P]`.
    pub x: Array2<f64>,
    /// `h_0 … h_T`, each `[n × H]`.
    pub h: Vec<Array2<f64>>,
    pub z: Vec<Array2<f64>>,
    pub r: Vec<Array2<f64>>,
    pub h_tilde: Vec<Array2<f64>>,
}

impl GruCell {
    pub fn new<R: Rng>(params: &mut Params, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let w = |params: &mut Params, g: &str, rows: usize, cols: usize, rng: &mut R| params.push(format!("{name}.{g}"), glorot(rows, cols, rng));
        let w_z = w(params, "w_z", hidden, input, rng);
        let w_r = w(params, "w_r", hidden, input, rng);
        let w_h = w(params, "w_h", hidden, input, rng);
        let u_z = w(params, "u_z", hidden, hidden, rng);
        let u_r = w(params, "u_r", hidden, hidden, rng);
        let u_h = w(params, "u_h", hidden, hidden, rng);
        let b_z = params.push(format!("{name}.b_z"), Array2::zeros((1, hidden)));
        let b_r = params.push(format!("{name}.b_r"), Array2::zeros((1, hidden)));
        let b_h = params.push(format!("{name}.b_h"), Array2::zeros((1, hidden)));
        GruCell { w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h, hidden, input }
    }

    /// One update for a batch: `x_t` is `[n × P]`, `h_prev` is `[n × H]`.
    pub fn step(&self, p: &Params, x_t: ArrayView2<f64>, h_prev: ArrayView2<f64>) -> Array2<f64> {
        let t = &p.tensors;
        let gate = |w: usize, u: usize, b: usize, h: ArrayView2<f64>| {
            let mut a = x_t.dot(&t[w].t()) + h.dot(&t[u].t());
            a += &t[b].row(0);
            a
        };
        let z = gate(self.w_z, self.u_z, self.b_z, h_prev).mapv(sigmoid);
        let r = gate(self.w_r, self.u_r, self.b_r, h_prev).mapv(sigmoid);
        let rh = &r * &h_prev;
        let h_tilde = gate(self.w_h, self.u_h, self.b_h, rh.view()).mapv(f64::tanh);
        let keep = z.mapv(|v| 1.0 - v);
        keep * h_prev + &(&z * &h_tilde)
    }

    /// Runs the sequence from `h_0 = 0`. `x` is `[(T·n) × P]`, time-major.
    pub fn forward(&self, p: &Params, x: Array2<f64>, steps: usize) -> GruCache {
        let n = x.nrows().checked_div(steps).unwrap_or(0);
        let hd = self.hidden;
        let t = &p.tensors;
        // Input projections for all steps in one product: [(T·n) × 3H].
        let w_all = ndarray::concatenate(Axis(0), &[t[self.w_z].view(), t[self.w_r].view(), t[self.w_h].view()]).expect("same width");
        let b_all = ndarray::concatenate(Axis(1), &[t[self.b_z].view(), t[self.b_r].view(), t[self.b_h].view()]).expect("same height");
        let mut proj = x.dot(&w_all.t());
        proj += &b_all.row(0);
        let u_zr = ndarray::concatenate(Axis(0), &[t[self.u_z].view(), t[self.u_r].view()]).expect("same width");

        let mut cache =
            GruCache { x, h: vec![Array2::zeros((n, hd))], z: Vec::with_capacity(steps), r: Vec::with_capacity(steps), h_tilde: Vec::with_capacity(steps) };
        for step in 0..steps {
            let rows = s![step * n..(step + 1) * n, ..];
            let pr = proj.slice(rows);
            let h_prev = cache.h.last().unwrap();
            let zr_pre = &pr.slice(s![.., 0..2 * hd]) + &h_prev.dot(&u_zr.t());
            let zr = zr_pre.mapv(sigmoid);
            let z = zr.slice(s![.., 0..hd]).to_owned();
            let r = zr.slice(s![.., hd..]).to_owned();
            let rh = &r * h_prev;
            let h_tilde = (&pr.slice(s![.., 2 * hd..]) + &rh.dot(&t[self.u_h].t())).mapv(f64::tanh);
            let mut h = h_prev.clone();
            ndarray::Zip::from(&mut h).and(&z).and(&h_tilde).for_each(|h, &z, &ht| *h = (1.0 - z) * *h + z * ht);
            cache.z.push(z);
            cache.r.push(r);
            cache.h_tilde.push(h_tilde);
            cache.h.push(h);
        }
        cache
    }

    /// Backpropagation through time from a gradient on the last hidden state.
    pub fn backward(&self, p: &Params, cache: &GruCache, d_last: ArrayView2<f64>, grads: &mut Grads) {
        let steps = cache.z.len();
        if steps == 0 {
            return;
        }
        let n = d_last.nrows();
        let hd = self.hidden;
        let t = &p.tensors;
        let mut d_pre = Array2::<f64>::zeros((steps * n, 3 * hd));
        let mut dh = d_last.to_owned();
        let mut du_z = Array2::<f64>::zeros((hd, hd));
        let mut du_r = Array2::<f64>::zeros((hd, hd));
        let mut du_h = Array2::<f64>::zeros((hd, hd));
        for step in (0..steps).rev() {
            let (z, r, ht, h_prev) = (&cache.z[step], &cache.r[step], &cache.h_tilde[step], &cache.h[step]);
            let mut da_h = &dh * z;
            ndarray::Zip::from(&mut da_h).and(ht).for_each(|d, &v| *d *= 1.0 - v * v);
            let mut da_z = &dh * &(ht - h_prev);
            ndarray::Zip::from(&mut da_z).and(z).for_each(|d, &v| *d *= v * (1.0 - v));
            let rh = r * h_prev;
            du_h += &da_h.t().dot(&rh);
            let d_rh = da_h.dot(&t[self.u_h]);
            let mut da_r = &d_rh * h_prev;
            ndarray::Zip::from(&mut da_r).and(r).for_each(|d, &v| *d *= v * (1.0 - v));
            du_z += &da_z.t().dot(h_prev);
            du_r += &da_r.t().dot(h_prev);

            let mut dh_prev = &dh * &z.mapv(|v| 1.0 - v);
            dh_prev += &(&d_rh * r);
            dh_prev += &da_z.dot(&t[self.u_z]);
            dh_prev += &da_r.dot(&t[self.u_r]);

            let mut block = d_pre.slice_mut(s![step * n..(step + 1) * n, ..]);
            block.slice_mut(s![.., 0..hd]).assign(&da_z);
            block.slice_mut(s![.., hd..2 * hd]).assign(&da_r);
            block.slice_mut(s![.., 2 * hd..]).assign(&da_h);
            dh = dh_prev;
        }
        let dw_all = d_pre.t().dot(&cache.x);
        let db_all = d_pre.sum_axis(Axis(0));
        for (k, (w, b)) in [(self.w_z, self.b_z), (self.w_r, self.b_r), (self.w_h, self.b_h)].into_iter().enumerate() {
            grads[w].scaled_add(1.0, &dw_all.slice(s![k * hd..(k + 1) * hd, ..]));
            grads[b].row_mut(0).scaled_add(1.0, &db_all.slice(s![k * hd..(k + 1) * hd]));
        }
        grads[self.u_z] += &du_z;
        grads[self.u_r] += &du_r;
        grads[self.u_h] += &du_h;
    }
}
