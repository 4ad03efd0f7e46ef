//! Small fully connected networks with hand-written backpropagation.
//!
//! Layers compute `act(x W + b)` on row-major batches. Classifier heads end in
//! a single identity unit whose output is a logit; the loss is binary
//! cross-entropy in nats. The gradient reversal layer is the identity on the
//! forward pass and multiplies the backward signal by `-λ`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkit::{gemm_into, Mat, NumError};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid network: {0}")]
    Spec(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("label {0} is not binary")]
    Label(u8),
    #[error("non-finite {what} in layer {layer} at epoch {epoch}")]
    NonFinite { what: &'static str, layer: usize, epoch: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

/// Layer widths and activations; the input width is fixed up front.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetSpec {
    /// ReLU hidden layers followed by one logit unit.
    pub fn classifier(input_dim: usize, hidden: &[usize]) -> Self {
        let mut layers: Vec<LayerSpec> =
            hidden.iter().map(|&width| LayerSpec { width, activation: Activation::Relu }).collect();
        layers.push(LayerSpec { width: 1, activation: Activation::Identity });
        Self { input_dim, layers }
    }

    /// A stack of ReLU layers; the last width is the representation size.
    pub fn relu_stack(input_dim: usize, widths: &[usize]) -> Self {
        Self {
            input_dim,
            layers: widths.iter().map(|&width| LayerSpec { width, activation: Activation::Relu }).collect(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(NetError::Spec("at least one layer required".into()));
        }
        if self.input_dim == 0 || self.layers.iter().any(|l| l.width == 0) {
            return Err(NetError::Spec("widths must be positive".into()));
        }
        Ok(())
    }

    fn fan(&self, layer: usize) -> (usize, usize) {
        let fan_in = if layer == 0 { self.input_dim } else { self.layers[layer - 1].width };
        (fan_in, self.layers[layer].width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Dense<T> {
    /// `fan_in x fan_out`.
    pub w: Mat<T>,
    pub b: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Params<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Scalar> Params<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: &NetSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let layers = (0..spec.layers.len())
            .map(|l| {
                let (fan_in, fan_out) = spec.fan(l);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w = Mat::from_fn(fan_in, fan_out, |_, _| T::of(rng.gen_range(-limit..limit)));
                Dense { w, b: vec![T::zero(); fan_out] }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(spec: &NetSpec) -> Self {
        let layers = (0..spec.layers.len())
            .map(|l| {
                let (fan_in, fan_out) = spec.fan(l);
                Dense { w: Mat::zeros(fan_in, fan_out), b: vec![T::zero(); fan_out] }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|d| Dense { w: Mat::zeros(d.w.rows(), d.w.cols()), b: vec![T::zero(); d.b.len()] })
                .collect(),
        }
    }

    pub fn matches(&self, spec: &NetSpec) -> bool {
        self.layers.len() == spec.layers.len()
            && self.layers.iter().enumerate().all(|(l, d)| {
                let (fan_in, fan_out) = spec.fan(l);
                d.w.rows() == fan_in && d.w.cols() == fan_out && d.b.len() == fan_out
            })
    }

    pub fn num_values(&self) -> usize {
        self.layers.iter().map(|d| d.w.as_slice().len() + d.b.len()).sum()
    }

    /// All weights then biases, layer by layer.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_values());
        for d in &self.layers {
            out.extend_from_slice(d.w.as_slice());
            out.extend_from_slice(&d.b);
        }
        out
    }

    pub fn set_flat(&mut self, values: &[T]) {
        let mut it = values.iter().copied();
        for d in &mut self.layers {
            for v in d.w.as_mut_slice().iter_mut().chain(d.b.iter_mut()) {
                *v = it.next().expect("flat vector matches parameter count");
            }
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        for (d, o) in self.layers.iter_mut().zip(&other.layers) {
            for (v, &g) in d.w.as_mut_slice().iter_mut().zip(o.w.as_slice()) {
                *v += alpha * g;
            }
            for (v, &g) in d.b.iter_mut().zip(&o.b) {
                *v += alpha * g;
            }
        }
    }

    fn first_non_finite(&self) -> Option<usize> {
        self.layers.iter().position(|d| !d.w.all_finite() || d.b.iter().any(|v| !v.is_finite()))
    }
}

/// Layer inputs and pre-activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache<T> {
    inputs: Vec<Mat<T>>,
    pre: Vec<Mat<T>>,
}

fn check_params<T: Scalar>(spec: &NetSpec, params: &Params<T>) -> Result<()> {
    if !params.matches(spec) {
        return Err(NetError::Shape("parameters do not match the network".into()));
    }
    Ok(())
}

fn affine<T: Scalar>(x: &Mat<T>, d: &Dense<T>) -> Result<Mat<T>> {
    let mut z = Mat::zeros(x.rows(), d.w.cols());
    gemm_into(T::one(), x, false, &d.w, false, T::zero(), &mut z)?;
    for i in 0..z.rows() {
        for (v, &b) in z.row_mut(i).iter_mut().zip(&d.b) {
            *v += b;
        }
    }
    Ok(z)
}

fn activate<T: Scalar>(z: &Mat<T>, act: Activation) -> Mat<T> {
    match act {
        Activation::Identity => z.clone(),
        Activation::Relu => z.map(|v| v.max(T::zero())),
    }
}

/// Forward pass returning the cache and the final layer's activations.
pub fn forward<T: Scalar>(spec: &NetSpec, params: &Params<T>, x: &Mat<T>) -> Result<(Cache<T>, Mat<T>)> {
    check_params(spec, params)?;
    if x.cols() != spec.input_dim {
        return Err(NetError::Shape(format!("input has {} columns, network expects {}", x.cols(), spec.input_dim)));
    }
    let mut cache = Cache { inputs: Vec::with_capacity(spec.layers.len()), pre: Vec::new() };
    let mut h = x.clone();
    for (layer, d) in spec.layers.iter().zip(&params.layers) {
        let z = affine(&h, d)?;
        let out = activate(&z, layer.activation);
        cache.inputs.push(h);
        cache.pre.push(z);
        h = out;
    }
    Ok((cache, h))
}

/// Forward pass without keeping intermediates.
pub fn predict<T: Scalar>(spec: &NetSpec, params: &Params<T>, x: &Mat<T>) -> Result<Mat<T>> {
    check_params(spec, params)?;
    if x.cols() != spec.input_dim {
        return Err(NetError::Shape(format!("input has {} columns, network expects {}", x.cols(), spec.input_dim)));
    }
    let mut h = x.clone();
    for (layer, d) in spec.layers.iter().zip(&params.layers) {
        h = activate(&affine(&h, d)?, layer.activation);
    }
    Ok(h)
}

/// Backpropagates `upstream` (gradient wrt the network output) into parameter
/// gradients and the gradient wrt the network input.
pub fn backward<T: Scalar>(
    spec: &NetSpec,
    params: &Params<T>,
    cache: &Cache<T>,
    upstream: &Mat<T>,
) -> Result<(Params<T>, Mat<T>)> {
    check_params(spec, params)?;
    if cache.inputs.len() != spec.layers.len() {
        return Err(NetError::Shape("cache was produced by a different network".into()));
    }
    let mut grads = params.zeros_like();
    let mut delta = upstream.clone();
    for l in (0..spec.layers.len()).rev() {
        let pre = &cache.pre[l];
        if delta.rows() != pre.rows() || delta.cols() != pre.cols() {
            return Err(NetError::Shape(format!(
                "upstream gradient is {}x{}, layer output is {}x{}",
                delta.rows(),
                delta.cols(),
                pre.rows(),
                pre.cols()
            )));
        }
        if spec.layers[l].activation == Activation::Relu {
            for (g, &z) in delta.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                if z <= T::zero() {
                    *g = T::zero();
                }
            }
        }
        let g = &mut grads.layers[l];
        gemm_into(T::one(), &cache.inputs[l], true, &delta, false, T::zero(), &mut g.w)?;
        for i in 0..delta.rows() {
            for (b, &v) in g.b.iter_mut().zip(delta.row(i)) {
                *b += v;
            }
        }
        let w = &params.layers[l].w;
        let mut below = Mat::zeros(delta.rows(), w.rows());
        gemm_into(T::one(), &delta, false, w, true, T::zero(), &mut below)?;
        delta = below;
    }
    Ok((grads, delta))
}

/// Gradient reversal: the backward signal scaled by `-lambda`.
pub fn grl<T: Scalar>(upstream: &Mat<T>, lambda: T) -> Mat<T> {
    upstream.scale(-lambda)
}

#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Mean binary cross-entropy (nats) of logits against labels, and its
/// gradient wrt each logit.
pub fn bce_loss<T: Scalar>(logits: &[T], labels: &[u8]) -> Result<(T, Vec<T>)> {
    if logits.len() != labels.len() {
        return Err(NetError::Shape(format!("{} logits, {} labels", logits.len(), labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(NetError::Label(bad));
    }
    let n = T::of(logits.len().max(1) as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(labels) {
        let yt = if y == 1 { T::one() } else { T::zero() };
        // max(z, 0) - z y + ln(1 + e^{-|z|})
        loss += z.max(T::zero()) - z * yt + (-z.abs()).exp().ln_1p();
        grad.push((sigmoid(z) - yt) / n);
    }
    Ok((loss / n, grad))
}

/// Optimizer settings; the learning rate is multiplied by `decay` every
/// `decay_period` epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub decay: f64,
    pub decay_period: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-3, momentum: 0.9, epochs: 40, batch_size: 64, decay: 1.0, decay_period: 1000, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(NetError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NetError::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.decay_period == 0 {
            return Err(NetError::Config("epochs, batch_size and decay_period must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return Err(NetError::Config(format!("decay must be positive, got {}", self.decay)));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.decay.powi((epoch / self.decay_period) as i32)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Heavy-ball update `v ← μ v − lr_e g`, `θ ← θ + v`.
pub fn sgd_step<T: Scalar>(
    params: &mut Params<T>,
    grads: &Params<T>,
    velocity: &mut Params<T>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<()> {
    if let Some(layer) = grads.first_non_finite() {
        return Err(NetError::NonFinite { what: "gradient", layer, epoch });
    }
    let mu = T::of(cfg.momentum);
    let lr = T::of(cfg.lr_at(epoch));
    for ((p, g), v) in params.layers.iter_mut().zip(&grads.layers).zip(velocity.layers.iter_mut()) {
        let pairs = p.w.as_mut_slice().iter_mut().chain(p.b.iter_mut());
        let grads = g.w.as_slice().iter().chain(g.b.iter());
        let vels = v.w.as_mut_slice().iter_mut().chain(v.b.iter_mut());
        for ((theta, &grad), vel) in pairs.zip(grads).zip(vels) {
            *vel = mu * *vel - lr * grad;
            *theta += *vel;
        }
    }
    if let Some(layer) = params.first_non_finite() {
        return Err(NetError::NonFinite { what: "parameter", layer, epoch });
    }
    Ok(())
}

/// Seeded per-epoch shuffles of `0..n` cut into mini-batches.
pub struct Batcher {
    order: Vec<usize>,
    batch_size: usize,
}

impl Batcher {
    pub fn new(n: usize, batch_size: usize) -> Self {
        Self { order: (0..n).collect(), batch_size: batch_size.max(1) }
    }

    pub fn epoch(&mut self, rng: &mut impl Rng) -> std::slice::Chunks<'_, usize> {
        self.order.shuffle(rng);
        self.order.chunks(self.batch_size)
    }
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A trained binary classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Classifier<T> {
    pub spec: NetSpec,
    pub params: Params<T>,
}

impl<T: Scalar> Classifier<T> {
    pub fn logits(&self, x: &Mat<T>) -> Result<Vec<T>> {
        Ok(predict(&self.spec, &self.params, x)?.into_vec())
    }

    pub fn predict_proba(&self, x: &Mat<T>) -> Result<Vec<f64>> {
        Ok(self.logits(x)?.into_iter().map(|z| sigmoid(z).as_f64()).collect())
    }

    /// Mean cross-entropy in nats.
    pub fn cross_entropy(&self, x: &Mat<T>, labels: &[u8]) -> Result<f64> {
        Ok(bce_loss(&self.logits(x)?, labels)?.0.as_f64())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome<T> {
    pub classifier: Classifier<T>,
    pub log: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub selected_epoch: usize,
}

pub fn accuracy(probs: &[f64], labels: &[u8]) -> f64 {
    let hits = probs.iter().zip(labels).filter(|(&p, &y)| u8::from(p >= 0.5) == y).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Mini-batch SGD on binary cross-entropy. With a validation set the epoch
/// with the best validation accuracy is kept (earliest on ties), otherwise the
/// final epoch.
pub fn fit_classifier<T: Scalar>(
    spec: &NetSpec,
    x: &Mat<T>,
    y: &[u8],
    cfg: &TrainConfig,
    val: Option<(&Mat<T>, &[u8])>,
) -> Result<FitOutcome<T>> {
    cfg.validate()?;
    spec.validate()?;
    if spec.output_dim() != 1 {
        return Err(NetError::Spec("classifier must end in a single logit".into()));
    }
    if x.rows() != y.len() {
        return Err(NetError::Shape(format!("{} rows, {} labels", x.rows(), y.len())));
    }
    let mut rng = rng_from_seed(cfg.seed);
    let mut params = Params::init(spec, &mut rng)?;
    let mut velocity = params.zeros_like();
    let mut batcher = Batcher::new(x.rows(), cfg.batch_size);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Params<T>)> = None;

    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        let mut seen = 0usize;
        for (b, batch) in batcher.epoch(&mut rng).enumerate() {
            let xb = x.select_rows(batch);
            let yb: Vec<u8> = batch.iter().map(|&i| y[i]).collect();
            let (cache, out) = forward(spec, &params, &xb)?;
            let (loss, grad) = bce_loss(out.as_slice(), &yb)?;
            if !loss.is_finite() {
                return Err(NetError::NonFiniteLoss { epoch, batch: b });
            }
            total += loss.as_f64() * batch.len() as f64;
            seen += batch.len();
            let upstream = Mat::new(batch.len(), 1, grad)?;
            let (grads, _) = backward(spec, &params, &cache, &upstream)?;
            sgd_step(&mut params, &grads, &mut velocity, cfg, epoch)?;
        }
        let val_accuracy = match val {
            Some((xv, yv)) => {
                let clf = Classifier { spec: spec.clone(), params: params.clone() };
                let acc = accuracy(&clf.predict_proba(xv)?, yv);
                if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                    best = Some((acc, epoch, params.clone()));
                }
                Some(acc)
            }
            None => None,
        };
        log.push(EpochRecord { epoch, train_loss: total / seen.max(1) as f64, val_accuracy });
    }

    let (selected_epoch, params) = match best {
        Some((_, e, p)) => (e, p),
        None => (cfg.epochs - 1, params),
    };
    Ok(FitOutcome { classifier: Classifier { spec: spec.clone(), params }, log, selected_epoch })
}

/// Serialized network with everything needed to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct NetArtifact<T> {
    pub format_version: u32,
    pub scalar: String,
    pub spec: NetSpec,
    pub config: TrainConfig,
    pub params: Params<T>,
}

pub const NET_FORMAT_VERSION: u32 = 1;

impl<T: Scalar> NetArtifact<T> {
    pub fn new(spec: NetSpec, config: TrainConfig, params: Params<T>) -> Self {
        Self { format_version: NET_FORMAT_VERSION, scalar: T::NAME.to_string(), spec, config, params }
    }
}
