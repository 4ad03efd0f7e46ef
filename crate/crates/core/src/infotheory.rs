//! Plug-in information measures on discrete distributions (all in bits), the
//! inference-error certificate, and the utility/privacy trade-off bounds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkit::Mat;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InfoError {
    #[error("invalid distribution: {0}")]
    InvalidDist(String),
    #[error("shape mismatch: {0} vs {1}")]
    Shape(usize, usize),
    #[error("KL divergence is infinite: p[{index}] > 0 where q[{index}] = 0")]
    InfiniteDivergence { index: usize },
    #[error("{what} = {value} outside [{lo}, {hi}]")]
    Domain { what: &'static str, value: f64, lo: f64, hi: f64 },
}

pub type Result<T> = std::result::Result<T, InfoError>;

const MASS_TOL: f64 = 1e-9;

/// Probability vector over a finite support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Dist<T>(Vec<T>);

impl<T: Scalar> Dist<T> {
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.is_empty() {
            return Err(InfoError::InvalidDist("empty support".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= T::zero() && **p <= T::one())) {
            return Err(InfoError::InvalidDist(format!("probability {p} outside [0, 1]")));
        }
        let mass: T = probs.iter().copied().sum();
        if (mass - T::one()).abs() > T::of(MASS_TOL) {
            return Err(InfoError::InvalidDist(format!("total mass {mass}")));
        }
        Ok(Self(probs))
    }

    pub fn bernoulli(p1: T) -> Result<Self> {
        Self::new(vec![T::one() - p1, p1])
    }

    /// Normalizes non-negative counts or weights.
    pub fn from_weights(weights: &[T]) -> Result<Self> {
        let total: T = weights.iter().copied().sum();
        if !(total > T::zero()) {
            return Err(InfoError::InvalidDist("weights sum to zero".into()));
        }
        Self::new(weights.iter().map(|&w| w / total).collect())
    }

    pub fn probs(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Distribution of `map(x)` for `x ~ self`, over `0..out_len`.
    pub fn pushforward(&self, map: &[usize], out_len: usize) -> Result<Self> {
        if map.len() != self.0.len() {
            return Err(InfoError::Shape(map.len(), self.0.len()));
        }
        let mut out = vec![T::zero(); out_len];
        for (&p, &z) in self.0.iter().zip(map) {
            if z >= out_len {
                return Err(InfoError::Shape(z, out_len));
            }
            out[z] += p;
        }
        Ok(Self(out))
    }

    pub fn l1_distance(&self, other: &Self) -> Result<T> {
        same_len(self, other)?;
        Ok(self.0.iter().zip(&other.0).map(|(&a, &b)| (a - b).abs()).sum())
    }
}

/// Joint distribution of two discrete variables; rows index the first one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct JointDist<T>(Mat<T>);

impl<T: Scalar> JointDist<T> {
    pub fn new(table: Mat<T>) -> Result<Self> {
        if table.as_slice().is_empty() {
            return Err(InfoError::InvalidDist("empty table".into()));
        }
        if table.as_slice().iter().any(|p| !(*p >= T::zero())) {
            return Err(InfoError::InvalidDist("negative cell".into()));
        }
        let mass: T = table.as_slice().iter().copied().sum();
        if (mass - T::one()).abs() > T::of(MASS_TOL) {
            return Err(InfoError::InvalidDist(format!("total mass {mass}")));
        }
        Ok(Self(table))
    }

    /// Empirical joint of two label vectors taking values in `0..rows` and `0..cols`.
    pub fn from_pairs(first: &[u8], second: &[u8], rows: usize, cols: usize) -> Result<Self> {
        if first.len() != second.len() {
            return Err(InfoError::Shape(first.len(), second.len()));
        }
        if first.is_empty() {
            return Err(InfoError::InvalidDist("no samples".into()));
        }
        let mut counts = Mat::zeros(rows, cols);
        for (&a, &b) in first.iter().zip(second) {
            if a as usize >= rows || b as usize >= cols {
                return Err(InfoError::InvalidDist(format!("label pair ({a}, {b}) out of range")));
            }
            counts[(a as usize, b as usize)] += T::one();
        }
        Self::new(counts.scale(T::one() / T::of(first.len() as f64)))
    }

    pub fn table(&self) -> &Mat<T> {
        &self.0
    }

    pub fn row_marginal(&self) -> Vec<T> {
        (0..self.0.rows()).map(|i| self.0.row(i).iter().copied().sum()).collect()
    }

    pub fn col_marginal(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.0.cols()];
        for i in 0..self.0.rows() {
            for (o, &p) in out.iter_mut().zip(self.0.row(i)) {
                *o += p;
            }
        }
        out
    }
}

fn same_len<T>(p: &Dist<T>, q: &Dist<T>) -> Result<()> {
    if p.0.len() != q.0.len() {
        return Err(InfoError::Shape(p.0.len(), q.0.len()));
    }
    Ok(())
}

/// `-Σ p log₂ p` with `0 log 0 = 0`, over any non-negative weights.
fn plug_in_entropy<T: Scalar>(probs: &[T]) -> T {
    probs.iter().filter(|&&p| p > T::zero()).map(|&p| -p * p.log2()).sum()
}

pub fn entropy<T: Scalar>(p: &Dist<T>) -> T {
    plug_in_entropy(&p.0)
}

/// `H(row | col)` of a joint table, e.g. `H(A | Z)` with `A` on the rows.
pub fn conditional_entropy<T: Scalar>(j: &JointDist<T>) -> T {
    let h = plug_in_entropy(j.0.as_slice()) - plug_in_entropy(&j.col_marginal());
    h.max(T::zero())
}

pub fn mutual_information<T: Scalar>(j: &JointDist<T>) -> T {
    let mi = plug_in_entropy(&j.row_marginal()) + plug_in_entropy(&j.col_marginal())
        - plug_in_entropy(j.0.as_slice());
    mi.max(T::zero())
}

pub fn kl_divergence<T: Scalar>(p: &Dist<T>, q: &Dist<T>) -> Result<T> {
    same_len(p, q)?;
    let mut acc = T::zero();
    for (index, (&pi, &qi)) in p.0.iter().zip(&q.0).enumerate() {
        if pi == T::zero() {
            continue;
        }
        if qi == T::zero() {
            return Err(InfoError::InfiniteDivergence { index });
        }
        acc += pi * (pi / qi).log2();
    }
    Ok(acc.max(T::zero()))
}

pub fn js_divergence<T: Scalar>(p: &Dist<T>, q: &Dist<T>) -> Result<T> {
    same_len(p, q)?;
    let half = T::of(0.5);
    let m = Dist(p.0.iter().zip(&q.0).map(|(&a, &b)| half * (a + b)).collect());
    // m covers both supports, so neither term can be infinite
    let js = half * kl_divergence(p, &m)? + half * kl_divergence(q, &m)?;
    Ok(js.max(T::zero()).min(T::one()))
}

pub fn js_distance<T: Scalar>(p: &Dist<T>, q: &Dist<T>) -> Result<T> {
    Ok(js_divergence(p, q)?.sqrt())
}

/// `H(t) = -t log₂ t - (1-t) log₂ (1-t)`; NaN outside `[0, 1]`.
pub fn binary_entropy<T: Scalar>(t: T) -> T {
    if !(t >= T::zero() && t <= T::one()) {
        return T::nan();
    }
    plug_in_entropy(&[t, T::one() - t])
}

/// The unique `t ∈ [0, ½]` with `binary_entropy(t) = s`, by bisection.
pub fn inv_binary_entropy<T: Scalar>(s: T) -> Result<T> {
    if !(s >= T::zero() && s <= T::one()) {
        return Err(InfoError::Domain { what: "entropy", value: s.as_f64(), lo: 0.0, hi: 1.0 });
    }
    // H is flat at ½, so bisection there only resolves t to ~√ε.
    if s == T::one() {
        return Ok(T::of(0.5));
    }
    let (mut lo, mut hi) = (T::zero(), T::of(0.5));
    let tol = T::of(1e-12).max(T::epsilon());
    while hi - lo > tol {
        let mid = T::of(0.5) * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if binary_entropy(mid) < s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(T::of(0.5) * (lo + hi))
}

/// Lower bound on the error of any attacker given `H(A|Z) = h_star` bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyCertificate {
    /// Conditional entropy `H(A|Z)` in bits.
    pub h_star: f64,
    /// `h_star / (2 log₂(6 / h_star))`, a probability.
    pub bound: f64,
    /// `H₂⁻¹(h_star)`, the tighter intermediate bound.
    pub inverse_entropy_bound: f64,
    pub h_star_units: Units,
    pub bound_units: Units,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Bits,
    Probability,
}

pub fn certificate(h_star: f64) -> Result<PrivacyCertificate> {
    if !(0.0..=1.0).contains(&h_star) {
        return Err(InfoError::Domain { what: "h_star", value: h_star, lo: 0.0, hi: 1.0 });
    }
    let bound = if h_star > 0.0 { h_star / (2.0 * (6.0 / h_star).log2()) } else { 0.0 };
    Ok(PrivacyCertificate {
        h_star,
        bound,
        inverse_entropy_bound: inv_binary_entropy(h_star)?,
        h_star_units: Units::Bits,
        bound_units: Units::Probability,
    })
}

/// `Util₀ + Util₁ + Priv ≤ 3 − D_JS(𝒟₀ʸ, 𝒟₁ʸ) / 3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityPrivacyCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

pub const EXACT_SLACK: f64 = 1e-9;

pub fn thm2_check(util0: f64, util1: f64, privacy: f64, djs_y: f64) -> UtilityPrivacyCheck {
    thm2_check_with_slack(util0, util1, privacy, djs_y, EXACT_SLACK)
}

pub fn thm2_check_with_slack(
    util0: f64,
    util1: f64,
    privacy: f64,
    djs_y: f64,
    slack: f64,
) -> UtilityPrivacyCheck {
    let lhs = util0 + util1 + privacy;
    let rhs = 3.0 - djs_y / 3.0;
    UtilityPrivacyCheck { lhs, rhs, satisfied: lhs <= rhs + slack }
}

/// Floor `½(√D_JS − √(1 − Priv))²` on `Err₀ + Err₁`, or `None` when
/// `Priv < 1 − D_JS` and the bound does not apply.
pub fn thm3_floor(privacy: f64, djs_y: f64) -> Option<f64> {
    if privacy + 1e-12 < 1.0 - djs_y {
        return None;
    }
    let gap = djs_y.max(0.0).sqrt() - (1.0 - privacy).max(0.0).sqrt();
    Some(0.5 * gap * gap)
}

/// Measured utilities and privacy set against both trade-off bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffLedger {
    pub util0: f64,
    pub util1: f64,
    pub privacy: f64,
    /// `D_JS(𝒟₀ʸ, 𝒟₁ʸ)` in bits.
    pub djs_y: f64,
    /// `d_JS = √D_JS`.
    pub d_js: f64,
    pub joint_error: f64,
    pub thm2_lhs: f64,
    pub thm2_rhs: f64,
    pub thm2_satisfied: bool,
    pub thm3_floor: Option<f64>,
    pub thm3_satisfied: Option<bool>,
}

impl TradeoffLedger {
    pub fn evaluate(util0: f64, util1: f64, privacy: f64, djs_y: f64, slack: f64) -> Self {
        let thm2 = thm2_check_with_slack(util0, util1, privacy, djs_y, slack);
        let joint_error = (1.0 - util0) + (1.0 - util1);
        let floor = thm3_floor(privacy, djs_y);
        Self {
            util0,
            util1,
            privacy,
            djs_y,
            d_js: djs_y.max(0.0).sqrt(),
            joint_error,
            thm2_lhs: thm2.lhs,
            thm2_rhs: thm2.rhs,
            thm2_satisfied: thm2.satisfied,
            thm3_floor: floor,
            thm3_satisfied: floor.map(|f| joint_error >= f - slack),
        }
    }
}

/// Hard and smooth maxima over `-ε_i`, and the convex weights the smooth
/// version puts on each term's gradient.
pub fn smooth_max_neg(eps: &[f64], gamma: f64) -> f64 {
    let m = eps.iter().map(|e| -gamma * e).fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = eps.iter().map(|e| (-gamma * e - m).exp()).sum();
    (m + s.ln()) / gamma
}

pub fn hard_max_neg(eps: &[f64]) -> f64 {
    eps.iter().map(|e| -e).fold(f64::NEG_INFINITY, f64::max)
}

/// `w_i = exp(-γ ε_i) / Σ_j exp(-γ ε_j)`.
pub fn smooth_weights(eps: &[f64], gamma: f64) -> Vec<f64> {
    let m = eps.iter().map(|e| -gamma * e).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = eps.iter().map(|e| (-gamma * e - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}
