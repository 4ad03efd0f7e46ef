//! Feature maps released in place of raw data, and the algorithms that fit
//! them: identity, PCA, privacy-aware PLS and LDA, the Laplace mechanism, and
//! adversarially trained networks (single and multiple private attributes).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Split;
use crate::infotheory::smooth_weights;
use crate::nnet::{
    self, backward, bce_loss, forward, grl, predict, sgd_step, Batcher, NetError, NetSpec, Params, TrainConfig,
};
use crate::numkit::{covariance, dot, generalized_eig_with, norm2, sym_eig, Mat, NumError, Ridge};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DefenseError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("degenerate signal: {0}")]
    Degenerate(String),
    #[error("class {class} of {label} is empty")]
    EmptyClass { label: &'static str, class: u8 },
    #[error("{0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Num(#[from] NumError),
}

pub type Result<T> = std::result::Result<T, DefenseError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    NoDef,
    Pca,
    Ppls,
    Plda,
    Dp,
    Grl,
    AltUp,
    MultiHard,
    MultiSmooth,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::NoDef => "no-def",
            Method::Pca => "pca",
            Method::Ppls => "ppls",
            Method::Plda => "plda",
            Method::Dp => "dp",
            Method::Grl => "grl",
            Method::AltUp => "alt-up",
            Method::MultiHard => "multi-hard",
            Method::MultiSmooth => "multi-smooth",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", tag = "kind", rename_all = "lowercase")]
pub enum FeatureKind<T> {
    Identity,
    /// `z = (x - mean) Pᵀ`; `projection` is `out_dim x in_dim`.
    Linear { projection: Mat<T>, mean: Vec<T> },
    /// `z = x + Laplace(0, scales)` per column.
    Laplace { scales: Vec<T>, seed: u64 },
    Network { spec: NetSpec, params: Params<T> },
}

/// Per-epoch record of adversarial training; cross-entropies in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaxEpoch {
    pub epoch: usize,
    pub ce_y: f64,
    pub ce_a: Vec<f64>,
    /// Combination weights applied to the adversaries during this epoch.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: Method,
    pub config: serde_json::Value,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log: Vec<MinimaxEpoch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureMap<T> {
    pub kind: FeatureKind<T>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub provenance: Provenance,
}

impl<T: Scalar> FeatureMap<T> {
    /// Deterministic transform; the Laplace kind draws its noise from the
    /// stored seed.
    pub fn transform(&self, x: &Mat<T>) -> Result<Mat<T>> {
        let seed = match &self.kind {
            FeatureKind::Laplace { seed, .. } => *seed,
            _ => 0,
        };
        self.transform_with_rng(x, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Transform drawing any noise from `rng`.
    pub fn transform_with_rng(&self, x: &Mat<T>, rng: &mut impl Rng) -> Result<Mat<T>> {
        if x.cols() != self.in_dim {
            return Err(DefenseError::Dimension(format!(
                "input has {} columns, feature map expects {}",
                x.cols(),
                self.in_dim
            )));
        }
        Ok(match &self.kind {
            FeatureKind::Identity => x.clone(),
            FeatureKind::Linear { projection, mean } => x.sub_row_vector(mean).matmul_t(projection)?,
            FeatureKind::Laplace { scales, .. } => {
                let mut z = x.clone();
                for i in 0..z.rows() {
                    for (v, &b) in z.row_mut(i).iter_mut().zip(scales) {
                        if b > T::zero() {
                            *v += T::of(laplace_sample(rng, b.as_f64()));
                        }
                    }
                }
                z
            }
            FeatureKind::Network { spec, params } => predict(spec, params, x)?,
        })
    }
}

fn check_labels(x: &Mat<impl Scalar>, labels: &[u8], what: &'static str) -> Result<()> {
    if labels.len() != x.rows() {
        return Err(DefenseError::Validation(format!("{} rows but {} {what} labels", x.rows(), labels.len())));
    }
    if let Some(&v) = labels.iter().find(|&&v| v > 1) {
        return Err(DefenseError::Validation(format!("{what} label {v} is not binary")));
    }
    Ok(())
}

fn check_dim(n: usize, in_dim: usize) -> Result<()> {
    if n == 0 || n > in_dim {
        return Err(DefenseError::Dimension(format!("cannot extract {n} components from {in_dim} features")));
    }
    Ok(())
}

fn provenance(method: Method, config: serde_json::Value, seed: u64) -> Provenance {
    Provenance { method, config, seed, log: Vec::new() }
}

/// Identity map for inputs of width `in_dim`.
pub fn fit_nodef<T: Scalar>(in_dim: usize) -> FeatureMap<T> {
    FeatureMap {
        kind: FeatureKind::Identity,
        in_dim,
        out_dim: in_dim,
        provenance: provenance(Method::NoDef, serde_json::Value::Null, 0),
    }
}

fn linear_map<T: Scalar>(method: Method, rows: Vec<Vec<T>>, mean: Vec<T>, config: serde_json::Value) -> Result<FeatureMap<T>> {
    let in_dim = mean.len();
    let out_dim = rows.len();
    Ok(FeatureMap {
        kind: FeatureKind::Linear { projection: Mat::from_rows(&rows)?, mean },
        in_dim,
        out_dim,
        provenance: provenance(method, config, 0),
    })
}

/// Projection onto the top `n` principal directions of the centered data.
pub fn fit_pca<T: Scalar>(x: &Mat<T>, n: usize) -> Result<FeatureMap<T>> {
    check_dim(n, x.cols())?;
    let eig = sym_eig(&covariance(x, true)?)?;
    let rows = (0..n).map(|i| eig.vector(i)).collect();
    linear_map(Method::Pca, rows, x.col_means(), serde_json::json!({ "dim": n }))
}

fn centered_labels<T: Scalar>(labels: &[u8]) -> Vec<T> {
    let mean = labels.iter().map(|&v| f64::from(v)).sum::<f64>() / labels.len().max(1) as f64;
    labels.iter().map(|&v| T::of(f64::from(v) - mean)).collect()
}

/// `Xcᵀ l / (n - 1)`.
fn cross_cov<T: Scalar>(xc: &Mat<T>, l: &[T]) -> Vec<T> {
    let denom = T::of((xc.rows().max(2) - 1) as f64);
    let mut s = vec![T::zero(); xc.cols()];
    for (i, &li) in l.iter().enumerate() {
        for (acc, &v) in s.iter_mut().zip(xc.row(i)) {
            *acc += v * li;
        }
    }
    s.iter_mut().for_each(|v| *v /= denom);
    s
}

/// Top eigenvector of `m` restricted to the complement of `chosen`, with its
/// eigenvalue.
fn top_in_complement<T: Scalar>(m: &Mat<T>, chosen: &[Vec<T>]) -> Result<(T, Vec<T>)> {
    let d = m.rows();
    let mut p = Mat::<T>::identity(d);
    for v in chosen {
        for i in 0..d {
            for j in 0..d {
                p[(i, j)] -= v[i] * v[j];
            }
        }
    }
    let shift = m.frobenius_norm() + T::one();
    let mut restricted = p.matmul(m)?.matmul(&p)?;
    for i in 0..d {
        for j in 0..d {
            let id = if i == j { T::one() } else { T::zero() };
            restricted[(i, j)] -= shift * (id - p[(i, j)]);
        }
    }
    // restore exact symmetry lost to rounding
    let sym = Mat::from_fn(d, d, |i, j| (restricted[(i, j)] + restricted[(j, i)]) / T::of(2.0));
    let eig = sym_eig(&sym)?;
    Ok((eig.values[0], eig.vector(0)))
}

/// Privacy-aware partial least squares.
///
/// Directions are successive top eigenvectors of `s_y s_yᵀ - rho s_a s_aᵀ`
/// with the data deflated by `X ← X (I - v vᵀ)` after each one. Once the
/// label signal is exhausted the remaining directions are the principal
/// directions of the deflated data.
pub fn fit_ppls<T: Scalar>(x: &Mat<T>, y: &[u8], a: &[u8], n: usize, rho: f64) -> Result<FeatureMap<T>> {
    check_dim(n, x.cols())?;
    check_labels(x, y, "target")?;
    check_labels(x, a, "private")?;
    if !rho.is_finite() || rho < 0.0 {
        return Err(DefenseError::Domain(format!("rho must be finite and non-negative, got {rho}")));
    }
    let mean = x.col_means();
    let mut xc = x.sub_row_vector(&mean);
    let yc = centered_labels::<T>(y);
    let ac = centered_labels::<T>(a);
    let d = x.cols();
    let rho = T::of(rho);
    let mut rows: Vec<Vec<T>> = Vec::with_capacity(n);
    let tiny = T::of(1e-12);

    for k in 0..n {
        let sy = cross_cov(&xc, &yc);
        let sa = cross_cov(&xc, &ac);
        let m = Mat::from_fn(d, d, |i, j| sy[i] * sy[j] - rho * sa[i] * sa[j]);
        let scale = dot(&sy, &sy) + rho * dot(&sa, &sa);
        let (value, v) = top_in_complement(&m, &rows)?;
        let v = if value > tiny * scale.max(T::min_positive_value()) && value > T::zero() {
            v
        } else if k == 0 {
            return Err(DefenseError::Degenerate(
                "no direction has positive target-minus-private covariance".into(),
            ));
        } else {
            top_in_complement(&covariance(&xc, false)?, &rows)?.1
        };
        deflate(&mut xc, &v)?;
        rows.push(v);
    }
    linear_map(Method::Ppls, rows, mean, serde_json::json!({ "dim": n, "rho": rho.as_f64() }))
}

fn deflate<T: Scalar>(xc: &mut Mat<T>, v: &[T]) -> Result<()> {
    let proj = xc.matvec(v)?;
    for (i, &p) in proj.iter().enumerate() {
        for (x, &vj) in xc.row_mut(i).iter_mut().zip(v) {
            *x -= p * vj;
        }
    }
    Ok(())
}

/// Between- and within-class scatter wrt a binary label, each divided by the
/// number of rows.
pub fn scatter<T: Scalar>(x: &Mat<T>, labels: &[u8], label: &'static str) -> Result<(Mat<T>, Mat<T>)> {
    let d = x.cols();
    let n = T::of(x.rows() as f64);
    let mu = x.col_means();
    let mut sb = Mat::zeros(d, d);
    let mut sw = Mat::zeros(d, d);
    for class in 0..2u8 {
        let idx: Vec<usize> = (0..x.rows()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            return Err(DefenseError::EmptyClass { label, class });
        }
        let xs = x.select_rows(&idx);
        let mc = xs.col_means();
        let diff: Vec<T> = mc.iter().zip(&mu).map(|(a, b)| *a - *b).collect();
        let nc = T::of(idx.len() as f64);
        for i in 0..d {
            for j in 0..d {
                sb[(i, j)] += nc * diff[i] * diff[j] / n;
            }
        }
        let centered = xs.sub_row_vector(&mc);
        let within = centered.t_matmul(&centered)?;
        for (s, w) in sw.as_mut_slice().iter_mut().zip(within.as_slice()) {
            *s += *w / n;
        }
    }
    Ok((sb, sw))
}

/// Modified Gram-Schmidt, applied twice; keeps the order of `rows`.
fn orthonormalize<T: Scalar>(rows: &mut [Vec<T>]) -> Result<()> {
    for k in 0..rows.len() {
        for _ in 0..2 {
            for j in 0..k {
                let (done, rest) = rows.split_at_mut(k);
                let c = dot(&rest[0], &done[j]);
                for (v, &u) in rest[0].iter_mut().zip(&done[j]) {
                    *v -= c * u;
                }
            }
        }
        let nrm = norm2(&rows[k]);
        if nrm <= T::of(1e-300).max(T::min_positive_value()) {
            return Err(DefenseError::Degenerate(format!("direction {k} is linearly dependent")));
        }
        rows[k].iter_mut().for_each(|v| *v /= nrm);
    }
    Ok(())
}

/// Privacy-aware linear discriminant analysis with the default ridge.
pub fn fit_plda<T: Scalar>(x: &Mat<T>, y: &[u8], a: &[u8], n: usize, lam: f64) -> Result<FeatureMap<T>> {
    fit_plda_with(x, y, a, n, lam, Ridge::Auto)
}

/// Top `n` generalized eigenvectors of
/// `(S_B^y + lam S_W^a) v = μ (S_W^y + lam S_B^a + ridge) v`, orthonormalized
/// in eigenvalue order.
pub fn fit_plda_with<T: Scalar>(
    x: &Mat<T>,
    y: &[u8],
    a: &[u8],
    n: usize,
    lam: f64,
    ridge: Ridge,
) -> Result<FeatureMap<T>> {
    check_dim(n, x.cols())?;
    check_labels(x, y, "target")?;
    check_labels(x, a, "private")?;
    if !lam.is_finite() || lam < 0.0 {
        return Err(DefenseError::Domain(format!("lam must be finite and non-negative, got {lam}")));
    }
    let (sby, swy) = scatter(x, y, "target")?;
    let (sba, swa) = scatter(x, a, "private")?;
    let l = T::of(lam);
    let lhs = sby.add(&swa.scale(l))?;
    let rhs = swy.add(&sba.scale(l))?;
    let eig = generalized_eig_with(&lhs, &rhs, ridge)?;
    let mut rows: Vec<Vec<T>> = (0..n).map(|i| eig.vector(i)).collect();
    orthonormalize(&mut rows)?;
    linear_map(Method::Plda, rows, x.col_means(), serde_json::json!({ "dim": n, "lam": lam }))
}

/// One Laplace(0, b) draw by inverse CDF.
pub fn laplace_sample(rng: &mut impl Rng, b: f64) -> f64 {
    loop {
        let u: f64 = rng.gen::<f64>() - 0.5;
        if u.abs() < 0.5 {
            return -b * u.signum() * (1.0 - 2.0 * u.abs()).ln();
        }
    }
}

/// Laplace mechanism on the raw features with per-column scale
/// `(max - min) / epsilon` over the training rows.
pub fn fit_dp_laplace<T: Scalar>(x: &Mat<T>, epsilon: f64, seed: u64) -> Result<FeatureMap<T>> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(DefenseError::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    if x.rows() == 0 {
        return Err(DefenseError::Validation("no rows".into()));
    }
    let scales = (0..x.cols())
        .map(|j| {
            let c = x.column(j);
            let lo = c.iter().copied().fold(T::infinity(), T::min);
            let hi = c.iter().copied().fold(T::neg_infinity(), T::max);
            (hi - lo) / T::of(epsilon)
        })
        .collect();
    Ok(FeatureMap {
        kind: FeatureKind::Laplace { scales, seed },
        in_dim: x.cols(),
        out_dim: x.cols(),
        provenance: provenance(Method::Dp, serde_json::json!({ "epsilon": epsilon }), seed),
    })
}

fn default_gamma() -> f64 {
    1.0
}

fn default_feature_widths() -> Vec<usize> {
    vec![100, 100]
}

/// Settings shared by the adversarial defenses. The feature map is a ReLU
/// stack of `feature_widths`; the task head and every adversary are
/// classifiers with the given hidden widths (empty: one linear layer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimaxConfig {
    pub lambda: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_feature_widths")]
    pub feature_widths: Vec<usize>,
    #[serde(default)]
    pub head_hidden: Vec<usize>,
    #[serde(default)]
    pub adversary_hidden: Vec<usize>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub adversary_train: TrainConfig,
}

impl MinimaxConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            gamma: default_gamma(),
            feature_widths: default_feature_widths(),
            head_hidden: Vec::new(),
            adversary_hidden: Vec::new(),
            train: TrainConfig::default(),
            adversary_train: TrainConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(DefenseError::Domain(format!("lambda must be finite and non-negative, got {}", self.lambda)));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(DefenseError::Domain(format!("gamma must be finite and positive, got {}", self.gamma)));
        }
        if self.feature_widths.is_empty() {
            return Err(DefenseError::Validation("feature_widths must be non-empty".into()));
        }
        self.train.validate()?;
        self.adversary_train.validate()?;
        Ok(())
    }

    pub fn nets(&self, in_dim: usize) -> MinimaxNets {
        let f = NetSpec::relu_stack(in_dim, &self.feature_widths);
        let z = f.output_dim();
        MinimaxNets {
            f,
            h: NetSpec::classifier(z, &self.head_hidden),
            adversary: NetSpec::classifier(z, &self.adversary_hidden),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Grl,
    AltUp,
}

/// How the adversaries' feedback is combined before entering the feature map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Combine {
    /// Only the adversary with the smallest running cross-entropy.
    Hard,
    /// Softmax of the negated running cross-entropies at temperature `gamma`.
    Smooth { gamma: f64 },
}

impl Combine {
    pub fn weights(self, eps: &[f64]) -> Vec<f64> {
        match self {
            Combine::Smooth { gamma } => smooth_weights(eps, gamma),
            Combine::Hard => {
                let best = eps
                    .iter()
                    .enumerate()
                    .fold(0, |b, (i, &e)| if e < eps[b] { i } else { b });
                (0..eps.len()).map(|i| if i == best { 1.0 } else { 0.0 }).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaxNets {
    pub f: NetSpec,
    pub h: NetSpec,
    pub adversary: NetSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MinimaxState<T> {
    pub f: Params<T>,
    pub h: Params<T>,
    pub adversaries: Vec<Params<T>>,
}

impl<T: Scalar> MinimaxState<T> {
    /// `f` and `h` from `main` in that order (the same draws as one composed
    /// classifier), the adversaries from `side`.
    pub fn init(nets: &MinimaxNets, k: usize, main: &mut impl Rng, side: &mut impl Rng) -> Result<Self> {
        let f = Params::init(&nets.f, main)?;
        let h = Params::init(&nets.h, main)?;
        let adversaries = (0..k).map(|_| Params::init(&nets.adversary, side)).collect::<nnet::Result<_>>()?;
        Ok(Self { f, h, adversaries })
    }
}

/// Losses (nats) and gradients of one batch.
#[derive(Debug, Clone)]
pub struct MinimaxGrads<T> {
    pub ce_y: T,
    pub ce_a: Vec<T>,
    /// Gradient of `CE_Y - Σ scales_i CE_i` wrt the feature map.
    pub f: Params<T>,
    /// Gradient of `CE_Y` wrt the task head.
    pub h: Params<T>,
    /// Gradient of `CE_i` wrt adversary `i`.
    pub adversaries: Vec<Params<T>>,
}

/// Forward and backward pass of the adversarial objective. Adversary `i`'s
/// input gradient reaches the feature map through a reversal layer of scale
/// `scales[i]`; a zero scale contributes nothing.
pub fn minimax_gradients<T: Scalar>(
    nets: &MinimaxNets,
    state: &MinimaxState<T>,
    x: &Mat<T>,
    y: &[u8],
    attrs: &[&[u8]],
    scales: &[T],
) -> Result<MinimaxGrads<T>> {
    let (f_cache, z) = forward(&nets.f, &state.f, x)?;
    let (h_cache, logits) = forward(&nets.h, &state.h, &z)?;
    let (ce_y, gy) = bce_loss(logits.as_slice(), y)?;
    let (h_grads, mut dz) = backward(&nets.h, &state.h, &h_cache, &Mat::new(y.len(), 1, gy)?)?;
    let mut ce_a = Vec::with_capacity(attrs.len());
    let mut adv_grads = Vec::with_capacity(attrs.len());
    for ((params, a), &s) in state.adversaries.iter().zip(attrs).zip(scales) {
        let (cache, logits) = forward(&nets.adversary, params, &z)?;
        let (ce, ga) = bce_loss(logits.as_slice(), a)?;
        let (g, dza) = backward(&nets.adversary, params, &cache, &Mat::new(a.len(), 1, ga)?)?;
        if s != T::zero() {
            dz = dz.add(&grl(&dza, s))?;
        }
        ce_a.push(ce);
        adv_grads.push(g);
    }
    let (f_grads, _) = backward(&nets.f, &state.f, &f_cache, &dz)?;
    Ok(MinimaxGrads { ce_y, ce_a, f: f_grads, h: h_grads, adversaries: adv_grads })
}

fn check_finite<T: Scalar>(loss: T, epoch: usize, batch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(NetError::NonFiniteLoss { epoch, batch }.into())
    }
}

/// Trained feature map plus the final task head and adversaries.
#[derive(Debug, Clone)]
pub struct MinimaxFit<T> {
    pub map: FeatureMap<T>,
    pub nets: MinimaxNets,
    pub state: MinimaxState<T>,
}

/// Adversarial training against every attribute column in `attrs`.
///
/// The running error `ε_i` of adversary `i` is its mean cross-entropy over the
/// previous epoch (all equal before the first). GRL mode updates every
/// network on each batch; ALT-UP runs one epoch of feature map and head
/// updates followed by one epoch of adversary updates on the frozen map.
pub fn fit_adversarial<T: Scalar>(
    train: &Split<T>,
    attrs: &[&[u8]],
    cfg: &MinimaxConfig,
    mode: Mode,
    combine: Combine,
    method: Method,
) -> Result<MinimaxFit<T>> {
    cfg.validate()?;
    if attrs.is_empty() {
        return Err(DefenseError::Validation("at least one private attribute required".into()));
    }
    check_labels(&train.x, &train.y, "target")?;
    for a in attrs {
        check_labels(&train.x, a, "private")?;
    }
    let nets = cfg.nets(train.x.cols());
    let seed = cfg.train.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut side = ChaCha8Rng::seed_from_u64(seed);
    side.set_stream(1);
    let mut state = MinimaxState::init(&nets, attrs.len(), &mut rng, &mut side)?;
    let mut vel_f = state.f.zeros_like();
    let mut vel_h = state.h.zeros_like();
    let mut vel_adv: Vec<Params<T>> = state.adversaries.iter().map(Params::zeros_like).collect();
    let mut batcher = Batcher::new(train.len(), cfg.train.batch_size);
    let mut adv_batcher = Batcher::new(train.len(), cfg.adversary_train.batch_size);
    let mut eps = vec![std::f64::consts::LN_2; attrs.len()];
    let mut log = Vec::with_capacity(cfg.train.epochs);
    let update_adv_jointly = mode == Mode::Grl;

    for epoch in 0..cfg.train.epochs {
        let weights = combine.weights(&eps);
        let scales: Vec<T> = weights.iter().map(|&w| T::of(cfg.lambda * w)).collect();
        let mut sum_y = 0.0;
        let mut sum_a = vec![0.0; attrs.len()];
        for (b, batch) in batcher.epoch(&mut rng).enumerate() {
            let xb = train.x.select_rows(batch);
            let yb: Vec<u8> = batch.iter().map(|&i| train.y[i]).collect();
            let ab: Vec<Vec<u8>> = attrs.iter().map(|a| batch.iter().map(|&i| a[i]).collect()).collect();
            let ab_refs: Vec<&[u8]> = ab.iter().map(Vec::as_slice).collect();
            let g = minimax_gradients(&nets, &state, &xb, &yb, &ab_refs, &scales)?;
            check_finite(g.ce_y, epoch, b)?;
            let w = batch.len() as f64;
            sum_y += g.ce_y.as_f64() * w;
            for (s, &ce) in sum_a.iter_mut().zip(&g.ce_a) {
                check_finite(ce, epoch, b)?;
                *s += ce.as_f64() * w;
            }
            sgd_step(&mut state.f, &g.f, &mut vel_f, &cfg.train, epoch)?;
            sgd_step(&mut state.h, &g.h, &mut vel_h, &cfg.train, epoch)?;
            if update_adv_jointly {
                for ((p, gr), v) in state.adversaries.iter_mut().zip(&g.adversaries).zip(vel_adv.iter_mut()) {
                    sgd_step(p, gr, v, &cfg.adversary_train, epoch)?;
                }
            }
        }
        if mode == Mode::AltUp {
            let z = predict(&nets.f, &state.f, &train.x)?;
            for (b, batch) in adv_batcher.epoch(&mut side).enumerate() {
                let zb = z.select_rows(batch);
                for (k, a) in attrs.iter().enumerate() {
                    let ab: Vec<u8> = batch.iter().map(|&i| a[i]).collect();
                    let (cache, logits) = forward(&nets.adversary, &state.adversaries[k], &zb)?;
                    let (ce, ga) = bce_loss(logits.as_slice(), &ab)?;
                    check_finite(ce, epoch, b)?;
                    let (gr, _) =
                        backward(&nets.adversary, &state.adversaries[k], &cache, &Mat::new(ab.len(), 1, ga)?)?;
                    sgd_step(&mut state.adversaries[k], &gr, &mut vel_adv[k], &cfg.adversary_train, epoch)?;
                }
            }
        }
        let n = train.len() as f64;
        let ce_a: Vec<f64> = sum_a.iter().map(|s| s / n).collect();
        eps.clone_from(&ce_a);
        log.push(MinimaxEpoch { epoch, ce_y: sum_y / n, ce_a, weights });
    }

    let config = serde_json::to_value(cfg).expect("config serializes");
    let map = FeatureMap {
        out_dim: nets.f.output_dim(),
        in_dim: train.x.cols(),
        kind: FeatureKind::Network { spec: nets.f.clone(), params: state.f.clone() },
        provenance: Provenance { method, config, seed, log },
    };
    Ok(MinimaxFit { map, nets, state })
}

/// Single-attribute adversarial defense against `train.attrs[0]`.
pub fn fit_minimax<T: Scalar>(train: &Split<T>, cfg: &MinimaxConfig, mode: Mode) -> Result<MinimaxFit<T>> {
    let method = match mode {
        Mode::Grl => Method::Grl,
        Mode::AltUp => Method::AltUp,
    };
    let a = train.attrs.first().ok_or_else(|| DefenseError::Validation("no private attribute".into()))?;
    fit_adversarial(train, &[a.as_slice()], cfg, mode, Combine::Hard, method)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultiVersion {
    Hard,
    Smooth,
}

/// Multi-attribute GRL defense against every column of `train.attrs`.
pub fn fit_multi<T: Scalar>(train: &Split<T>, cfg: &MinimaxConfig, version: MultiVersion) -> Result<MinimaxFit<T>> {
    let attrs: Vec<&[u8]> = train.attrs.iter().map(Vec::as_slice).collect();
    let (combine, method) = match version {
        MultiVersion::Hard => (Combine::Hard, Method::MultiHard),
        MultiVersion::Smooth => (Combine::Smooth { gamma: cfg.gamma }, Method::MultiSmooth),
    };
    fit_adversarial(train, &attrs, cfg, Mode::Grl, combine, method)
}

/// A defense and its parameters, as written in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "params", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DefenseConfig {
    NoDef,
    Pca(DimConfig),
    Ppls(PplsConfig),
    Plda(PldaConfig),
    Dp(DpConfig),
    Grl(MinimaxConfig),
    AltUp(MinimaxConfig),
    MultiHard(MinimaxConfig),
    MultiSmooth(MinimaxConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimConfig {
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PplsConfig {
    pub dim: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PldaConfig {
    pub dim: usize,
    pub lam: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    pub epsilon: f64,
}

impl DefenseConfig {
    pub fn method(&self) -> Method {
        match self {
            DefenseConfig::NoDef => Method::NoDef,
            DefenseConfig::Pca(_) => Method::Pca,
            DefenseConfig::Ppls(_) => Method::Ppls,
            DefenseConfig::Plda(_) => Method::Plda,
            DefenseConfig::Dp(_) => Method::Dp,
            DefenseConfig::Grl(_) => Method::Grl,
            DefenseConfig::AltUp(_) => Method::AltUp,
            DefenseConfig::MultiHard(_) => Method::MultiHard,
            DefenseConfig::MultiSmooth(_) => Method::MultiSmooth,
        }
    }

    /// The trade-off knob reported alongside results, if the method has one.
    pub fn tradeoff(&self) -> Option<f64> {
        match self {
            DefenseConfig::NoDef | DefenseConfig::Pca(_) => None,
            DefenseConfig::Ppls(c) => Some(c.rho),
            DefenseConfig::Plda(c) => Some(c.lam),
            DefenseConfig::Dp(c) => Some(c.epsilon),
            DefenseConfig::Grl(c) | DefenseConfig::AltUp(c) | DefenseConfig::MultiHard(c) | DefenseConfig::MultiSmooth(c) => {
                Some(c.lambda)
            }
        }
    }

    /// Copy with every seed the defense uses set from `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        if let DefenseConfig::Grl(m) | DefenseConfig::AltUp(m) | DefenseConfig::MultiHard(m) | DefenseConfig::MultiSmooth(m) =
            &mut c
        {
            m.train.seed = seed;
            m.adversary_train.seed = seed;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DefenseConfig::NoDef => Ok(()),
            DefenseConfig::Pca(c) if c.dim == 0 => Err(DefenseError::Validation("dim must be positive".into())),
            DefenseConfig::Ppls(c) if c.dim == 0 || !(c.rho >= 0.0 && c.rho.is_finite()) => {
                Err(DefenseError::Validation("ppls needs dim > 0 and finite rho >= 0".into()))
            }
            DefenseConfig::Plda(c) if c.dim == 0 || !(c.lam >= 0.0 && c.lam.is_finite()) => {
                Err(DefenseError::Validation("plda needs dim > 0 and finite lam >= 0".into()))
            }
            DefenseConfig::Dp(c) if !(c.epsilon > 0.0 && c.epsilon.is_finite()) => {
                Err(DefenseError::Domain(format!("epsilon must be positive, got {}", c.epsilon)))
            }
            DefenseConfig::Grl(m) | DefenseConfig::AltUp(m) | DefenseConfig::MultiHard(m) | DefenseConfig::MultiSmooth(m) => {
                m.validate()
            }
            _ => Ok(()),
        }
    }

    /// Fits the defense on the training split; `seed` drives any randomness.
    pub fn fit<T: Scalar>(&self, train: &Split<T>, seed: u64) -> Result<FeatureMap<T>> {
        self.validate()?;
        let cfg = self.with_seed(seed);
        let x = &train.x;
        let mut map = match &cfg {
            DefenseConfig::NoDef => fit_nodef(x.cols()),
            DefenseConfig::Pca(c) => fit_pca(x, c.dim)?,
            DefenseConfig::Ppls(c) => fit_ppls(x, &train.y, train.a(), c.dim, c.rho)?,
            DefenseConfig::Plda(c) => fit_plda(x, &train.y, train.a(), c.dim, c.lam)?,
            DefenseConfig::Dp(c) => fit_dp_laplace(x, c.epsilon, seed)?,
            DefenseConfig::Grl(m) => fit_minimax(train, m, Mode::Grl)?.map,
            DefenseConfig::AltUp(m) => fit_minimax(train, m, Mode::AltUp)?.map,
            DefenseConfig::MultiHard(m) => fit_multi(train, m, MultiVersion::Hard)?.map,
            DefenseConfig::MultiSmooth(m) => fit_multi(train, m, MultiVersion::Smooth)?.map,
        };
        map.provenance.config = serde_json::to_value(&cfg).expect("config serializes");
        map.provenance.seed = seed;
        Ok(map)
    }
}
