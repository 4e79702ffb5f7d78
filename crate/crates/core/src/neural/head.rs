//! Fully-connected heads: the embedding network (affine, batch norm, tanh,
//! twice; final affine; L2 normalization) and the wordness classifier.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch normalization.
    Train,
    /// Running statistics in batch normalization.
    Eval,
}

/// Named parameter or buffer, used for checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self { name: name.into(), shape, data }
    }
}

/// Gradients in the same order as [`Trainable::params_mut`].
pub type Grads = Vec<Vec<f64>>;

pub trait Trainable {
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = Array2::from_shape_simple_fn((outputs, inputs), || rng.random_range(-a..a));
        Self { w, b: Array1::zeros(outputs) }
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Returns `(dw, db, dx)`.
    fn backward(&self, x: &ArrayView2<f64>, dz: &Array2<f64>) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
        (dz.t().dot(x), dz.sum_axis(Axis(0)), dz.dot(&self.w))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// Intermediate values of one batch-norm application.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
    pub batch_mean: Array1<f64>,
    pub batch_var: Array1<f64>,
    mode: Mode,
}

fn bn_forward(bn: &BatchNorm, z: &Array2<f64>, mode: Mode) -> (Array2<f64>, BnCache) {
    let (mean, var) = match mode {
        Mode::Train => {
            let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
            let var = (z - &mean).mapv(|d| d * d).mean_axis(Axis(0)).expect("non-empty batch");
            (mean, var)
        }
        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    let inv_std = var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
    let xhat = (z - &mean) * &inv_std;
    let y = &xhat * &bn.gamma + &bn.beta;
    (y, BnCache { xhat, inv_std, batch_mean: mean, batch_var: var, mode })
}

/// Returns `(dgamma, dbeta, dz)`.
fn bn_backward(bn: &BatchNorm, c: &BnCache, dy: &Array2<f64>) -> (Array1<f64>, Array1<f64>, Array2<f64>) {
    let dgamma = (dy * &c.xhat).sum_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0));
    let dxhat = dy * &bn.gamma;
    let dz = match c.mode {
        Mode::Eval => dxhat * &c.inv_std,
        Mode::Train => {
            let n = dy.nrows() as f64;
            let sum_d = dxhat.sum_axis(Axis(0));
            let sum_dx = (&dxhat * &c.xhat).sum_axis(Axis(0));
            ((&dxhat * n - &sum_d - &c.xhat * &sum_dx) * &c.inv_std) / n
        }
    };
    (dgamma, dbeta, dz)
}

/// Embedding network mapping region features to unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedHead {
    pub l1: Dense,
    pub bn1: BatchNorm,
    pub l2: Dense,
    pub bn2: BatchNorm,
    pub out: Dense,
}

#[derive(Debug, Clone)]
pub struct EmbedCache {
    pub x: Array2<f64>,
    pub bn1: BnCache,
    pub h1: Array2<f64>,
    pub bn2: BnCache,
    pub h2: Array2<f64>,
    pub norms: Array1<f64>,
    pub y: Array2<f64>,
}

impl EmbedHead {
    pub fn new(inputs: usize, hidden: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            l1: Dense::new(inputs, hidden, rng),
            bn1: BatchNorm::new(hidden),
            l2: Dense::new(hidden, hidden, rng),
            bn2: BatchNorm::new(hidden),
            out: Dense::new(hidden, outputs, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.l1.w.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.l1.w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.out.w.nrows()
    }

    pub fn set_bn_eps(&mut self, eps: f64) {
        self.bn1.eps = eps;
        self.bn2.eps = eps;
    }

    /// Forward pass over a batch (one row per example).
    pub fn forward(&self, x: &Array2<f64>, mode: Mode) -> Result<EmbedCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.ncols() });
        }
        if mode == Mode::Train && x.nrows() < 2 {
            return Err(Error::invalid("train-mode batch normalization needs at least 2 examples"));
        }
        if x.nrows() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let (a1, bn1) = bn_forward(&self.bn1, &self.l1.forward(&x.view()), mode);
        let h1 = a1.mapv(f64::tanh);
        let (a2, bn2) = bn_forward(&self.bn2, &self.l2.forward(&h1.view()), mode);
        let h2 = a2.mapv(f64::tanh);
        let o = self.out.forward(&h2.view());
        let norms = o.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(1e-12));
        let y = &o / &norms.view().insert_axis(Axis(1));
        Ok(EmbedCache { x: x.clone(), bn1, h1, bn2, h2, norms, y })
    }

    /// Eval-mode embedding of a single feature vector.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
        Ok(self.forward(&x, Mode::Eval)?.y.row(0).to_vec())
    }

    /// Pulls `dy` (gradient w.r.t. the unit outputs) back to the parameters
    /// and inputs.
    pub fn backward(&self, c: &EmbedCache, dy: &Array2<f64>) -> (Grads, Array2<f64>) {
        let proj = (dy * &c.y).sum_axis(Axis(1)).insert_axis(Axis(1));
        let d_o = (dy - &(&c.y * &proj)) / &c.norms.view().insert_axis(Axis(1));
        let (dw3, db3, dh2) = self.out.backward(&c.h2.view(), &d_o);
        let da2 = dh2 * &c.h2.mapv(|t| 1.0 - t * t);
        let (dg2, dbt2, dz2) = bn_backward(&self.bn2, &c.bn2, &da2);
        let (dw2, db2, dh1) = self.l2.backward(&c.h1.view(), &dz2);
        let da1 = dh1 * &c.h1.mapv(|t| 1.0 - t * t);
        let (dg1, dbt1, dz1) = bn_backward(&self.bn1, &c.bn1, &da1);
        let (dw1, db1, dx) = self.l1.backward(&c.x.view(), &dz1);
        let flat = |a: Array2<f64>| a.into_iter().collect::<Vec<_>>();
        let grads = vec![
            flat(dw1),
            db1.to_vec(),
            dg1.to_vec(),
            dbt1.to_vec(),
            flat(dw2),
            db2.to_vec(),
            dg2.to_vec(),
            dbt2.to_vec(),
            flat(dw3),
            db3.to_vec(),
        ];
        (grads, dx)
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// estimates.
    pub fn update_running_stats(&mut self, c: &EmbedCache) {
        let n = c.x.nrows() as f64;
        for (bn, cache) in [(&mut self.bn1, &c.bn1), (&mut self.bn2, &c.bn2)] {
            let m = bn.momentum;
            let unbiased = &cache.batch_var * (n / (n - 1.0).max(1.0));
            bn.running_mean = &bn.running_mean * (1.0 - m) + &cache.batch_mean * m;
            bn.running_var = &bn.running_var * (1.0 - m) + unbiased * m;
        }
    }

    pub fn tensors(&self, prefix: &str) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        let mut dense = |name: &str, d: &Dense| {
            out.push(NamedTensor::new(format!("{prefix}.{name}.w"), d.w.shape().to_vec(), d.w.iter().copied().collect()));
            out.push(NamedTensor::new(format!("{prefix}.{name}.b"), vec![d.b.len()], d.b.to_vec()));
        };
        dense("l1", &self.l1);
        dense("l2", &self.l2);
        dense("out", &self.out);
        for (name, bn) in [("bn1", &self.bn1), ("bn2", &self.bn2)] {
            let n = bn.gamma.len();
            for (field, v) in [
                ("gamma", &bn.gamma),
                ("beta", &bn.beta),
                ("running_mean", &bn.running_mean),
                ("running_var", &bn.running_var),
            ] {
                out.push(NamedTensor::new(format!("{prefix}.{name}.{field}"), vec![n], v.to_vec()));
            }
            out.push(NamedTensor::new(format!("{prefix}.{name}.hyper"), vec![2], vec![bn.momentum, bn.eps]));
        }
        out
    }

    pub fn from_tensors(prefix: &str, t: &mut TensorTake) -> Result<Self> {
        let l1 = t.dense(&format!("{prefix}.l1"))?;
        let l2 = t.dense(&format!("{prefix}.l2"))?;
        let out = t.dense(&format!("{prefix}.out"))?;
        let bn1 = t.batch_norm(&format!("{prefix}.bn1"))?;
        let bn2 = t.batch_norm(&format!("{prefix}.bn2"))?;
        let h = l1.w.nrows();
        if l2.w.dim() != (h, h) || out.w.ncols() != h || bn1.gamma.len() != h || bn2.gamma.len() != h {
            return Err(Error::Format("embedding head layer shapes are inconsistent".into()));
        }
        Ok(Self { l1, bn1, l2, bn2, out })
    }
}

impl Trainable for EmbedHead {
    fn params(&self) -> Vec<&[f64]> {
        fn s(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("contiguous")
        }
        vec![
            self.l1.w.as_slice().expect("contiguous"),
            s(&self.l1.b),
            s(&self.bn1.gamma),
            s(&self.bn1.beta),
            self.l2.w.as_slice().expect("contiguous"),
            s(&self.l2.b),
            s(&self.bn2.gamma),
            s(&self.bn2.beta),
            self.out.w.as_slice().expect("contiguous"),
            s(&self.out.b),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.l1.w.as_slice_mut().expect("contiguous"),
            self.l1.b.as_slice_mut().expect("contiguous"),
            self.bn1.gamma.as_slice_mut().expect("contiguous"),
            self.bn1.beta.as_slice_mut().expect("contiguous"),
            self.l2.w.as_slice_mut().expect("contiguous"),
            self.l2.b.as_slice_mut().expect("contiguous"),
            self.bn2.gamma.as_slice_mut().expect("contiguous"),
            self.bn2.beta.as_slice_mut().expect("contiguous"),
            self.out.w.as_slice_mut().expect("contiguous"),
            self.out.b.as_slice_mut().expect("contiguous"),
        ]
    }
}

/// Region classifier producing a wordness logit: affine, tanh, affine.
#[derive(Debug, Clone, PartialEq)]
pub struct WordnessHead {
    pub l1: Dense,
    pub l2: Dense,
}

#[derive(Debug, Clone)]
pub struct WordnessCache {
    pub x: Array2<f64>,
    pub h: Array2<f64>,
    pub logits: Array1<f64>,
}

impl WordnessHead {
    pub fn new(inputs: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self { l1: Dense::new(inputs, hidden, rng), l2: Dense::new(hidden, 1, rng) }
    }

    pub fn input_dim(&self) -> usize {
        self.l1.w.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<WordnessCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.ncols() });
        }
        let h = self.l1.forward(&x.view()).mapv(f64::tanh);
        let logits = self.l2.forward(&h.view()).column(0).to_owned();
        Ok(WordnessCache { x: x.clone(), h, logits })
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        let x = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
        Ok(self.forward(&x)?.logits[0])
    }

    pub fn backward(&self, c: &WordnessCache, dlogits: &Array1<f64>) -> (Grads, Array2<f64>) {
        let dz2 = dlogits.view().insert_axis(Axis(1)).to_owned();
        let (dw2, db2, dh) = self.l2.backward(&c.h.view(), &dz2);
        let dz1 = dh * &c.h.mapv(|t| 1.0 - t * t);
        let (dw1, db1, dx) = self.l1.backward(&c.x.view(), &dz1);
        let flat = |a: Array2<f64>| a.into_iter().collect::<Vec<_>>();
        (vec![flat(dw1), db1.to_vec(), flat(dw2), db2.to_vec()], dx)
    }

    pub fn tensors(&self, prefix: &str) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (name, d) in [("l1", &self.l1), ("l2", &self.l2)] {
            out.push(NamedTensor::new(format!("{prefix}.{name}.w"), d.w.shape().to_vec(), d.w.iter().copied().collect()));
            out.push(NamedTensor::new(format!("{prefix}.{name}.b"), vec![d.b.len()], d.b.to_vec()));
        }
        out
    }

    pub fn from_tensors(prefix: &str, t: &mut TensorTake) -> Result<Self> {
        let l1 = t.dense(&format!("{prefix}.l1"))?;
        let l2 = t.dense(&format!("{prefix}.l2"))?;
        if l2.w.dim() != (1, l1.w.nrows()) {
            return Err(Error::Format("wordness head layer shapes are inconsistent".into()));
        }
        Ok(Self { l1, l2 })
    }
}

impl Trainable for WordnessHead {
    fn params(&self) -> Vec<&[f64]> {
        vec![
            self.l1.w.as_slice().expect("contiguous"),
            self.l1.b.as_slice().expect("contiguous"),
            self.l2.w.as_slice().expect("contiguous"),
            self.l2.b.as_slice().expect("contiguous"),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.l1.w.as_slice_mut().expect("contiguous"),
            self.l1.b.as_slice_mut().expect("contiguous"),
            self.l2.w.as_slice_mut().expect("contiguous"),
            self.l2.b.as_slice_mut().expect("contiguous"),
        ]
    }
}

/// Consumes named tensors while rebuilding layers from a checkpoint.
pub struct TensorTake {
    tensors: Vec<NamedTensor>,
}

impl TensorTake {
    pub fn new(tensors: Vec<NamedTensor>) -> Self {
        Self { tensors }
    }

    pub fn take(&mut self, name: &str) -> Result<NamedTensor> {
        let i = self
            .tensors
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {name:?}")))?;
        Ok(self.tensors.remove(i))
    }

    fn vector(&mut self, name: &str) -> Result<Array1<f64>> {
        let t = self.take(name)?;
        if t.shape.len() != 1 {
            return Err(Error::Format(format!("tensor {name:?} should be 1-d")));
        }
        Ok(Array1::from(t.data))
    }

    fn dense(&mut self, prefix: &str) -> Result<Dense> {
        let w = self.take(&format!("{prefix}.w"))?;
        let b = self.vector(&format!("{prefix}.b"))?;
        if w.shape.len() != 2 || w.shape[0] != b.len() {
            return Err(Error::Format(format!("tensor {prefix}.w has shape {:?}", w.shape)));
        }
        let w = Array2::from_shape_vec((w.shape[0], w.shape[1]), w.data)
            .map_err(|e| Error::Format(format!("{prefix}.w: {e}")))?;
        Ok(Dense { w, b })
    }

    fn batch_norm(&mut self, prefix: &str) -> Result<BatchNorm> {
        let gamma = self.vector(&format!("{prefix}.gamma"))?;
        let beta = self.vector(&format!("{prefix}.beta"))?;
        let running_mean = self.vector(&format!("{prefix}.running_mean"))?;
        let running_var = self.vector(&format!("{prefix}.running_var"))?;
        let hyper = self.vector(&format!("{prefix}.hyper"))?;
        let n = gamma.len();
        if beta.len() != n || running_mean.len() != n || running_var.len() != n || hyper.len() != 2 {
            return Err(Error::Format(format!("batch norm {prefix} has inconsistent shapes")));
        }
        Ok(BatchNorm { gamma, beta, running_mean, running_var, momentum: hyper[0], eps: hyper[1] })
    }

    pub fn finish(self) -> Result<()> {
        match self.tensors.first() {
            None => Ok(()),
            Some(t) => Err(Error::Format(format!("unexpected tensor {:?} in checkpoint", t.name))),
        }
    }
}
