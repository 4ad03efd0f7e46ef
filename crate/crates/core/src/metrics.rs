//! Utility and privacy of binary predictions.
//!
//! Utility is one minus the mean absolute error. Privacy of a single
//! hypothesis is `1 - |Pr(ŷ=1 | A=1) - Pr(ŷ=1 | A=0)|`, which is insensitive
//! to the marginal of `A`; privacy of a class is the minimum over its members.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no predictions")]
    Empty,
    #[error("length mismatch: {0} predictions, {1} labels")]
    Length(usize, usize),
    #[error("label {0} is not binary")]
    NonBinary(u8),
    #[error("group A={0} is empty")]
    EmptyGroup(u8),
    #[error("attacker pool is empty")]
    EmptyPool,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

fn check_binary(v: &[u8]) -> Result<()> {
    match v.iter().find(|&&x| x > 1) {
        Some(&x) => Err(MetricsError::NonBinary(x)),
        None => Ok(()),
    }
}

/// Predictions aligned with the target and private labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPreds {
    y_hat: Vec<u8>,
    y: Vec<u8>,
    a: Vec<u8>,
}

impl LabeledPreds {
    pub fn new(y_hat: Vec<u8>, y: Vec<u8>, a: Vec<u8>) -> Result<Self> {
        if y_hat.is_empty() {
            return Err(MetricsError::Empty);
        }
        for other in [&y, &a] {
            if other.len() != y_hat.len() {
                return Err(MetricsError::Length(y_hat.len(), other.len()));
            }
        }
        check_binary(&y_hat)?;
        check_binary(&y)?;
        check_binary(&a)?;
        Ok(Self { y_hat, y, a })
    }

    /// An attacker's guesses of `a`; the private label doubles as the target.
    pub fn attack(a_hat: Vec<u8>, a: Vec<u8>) -> Result<Self> {
        Self::new(a_hat, a.clone(), a)
    }

    pub fn y_hat(&self) -> &[u8] {
        &self.y_hat
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn a(&self) -> &[u8] {
        &self.a
    }

    pub fn len(&self) -> usize {
        self.y_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_hat.is_empty()
    }

    /// The complementary hypothesis `1 - ŷ`.
    pub fn complement(&self) -> Self {
        Self { y_hat: self.y_hat.iter().map(|v| 1 - v).collect(), ..self.clone() }
    }
}

/// Thresholds scores at 0.5; a score of exactly 0.5 predicts 1.
pub fn threshold(scores: &[f64]) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s >= 0.5)).collect()
}

fn mean_abs_error<'a>(pairs: impl Iterator<Item = (&'a u8, &'a u8)>) -> Option<f64> {
    let (mut wrong, mut n) = (0usize, 0usize);
    for (a, b) in pairs {
        wrong += usize::from(a != b);
        n += 1;
    }
    (n > 0).then(|| wrong as f64 / n as f64)
}

pub fn utility(p: &LabeledPreds) -> f64 {
    1.0 - mean_abs_error(p.y.iter().zip(&p.y_hat)).unwrap_or(1.0)
}

/// Error rate restricted to rows with `a == a_value`.
pub fn conditional_error(p: &LabeledPreds, a_value: u8) -> Result<f64> {
    let rows = p.y.iter().zip(&p.y_hat).zip(&p.a).filter(|(_, &a)| a == a_value).map(|(pair, _)| pair);
    mean_abs_error(rows).ok_or(MetricsError::EmptyGroup(a_value))
}

/// `Pr(ŷ = 1 | A = a_value)`.
pub fn positive_rate(p: &LabeledPreds, a_value: u8) -> Result<f64> {
    let (mut pos, mut n) = (0usize, 0usize);
    for (&yh, &a) in p.y_hat.iter().zip(&p.a) {
        if a == a_value {
            pos += usize::from(yh);
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::EmptyGroup(a_value));
    }
    Ok(pos as f64 / n as f64)
}

pub fn privacy_of_hypothesis(p: &LabeledPreds) -> Result<f64> {
    Ok(1.0 - (positive_rate(p, 1)? - positive_rate(p, 0)?).abs())
}

/// Confusion matrix of an attacker: rows are the true `A`, columns the guess.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tp: usize,
}

impl Confusion {
    pub fn from_preds(p: &LabeledPreds) -> Self {
        let mut c = Self::default();
        for (&guess, &truth) in p.y_hat.iter().zip(&p.a) {
            match (truth, guess) {
                (0, 0) => c.tn += 1,
                (0, _) => c.fp += 1,
                (_, 0) => c.fn_ += 1,
                _ => c.tp += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tn + self.fp + self.fn_ + self.tp
    }

    pub fn fnr(&self) -> Result<f64> {
        let pos = self.fn_ + self.tp;
        if pos == 0 {
            return Err(MetricsError::EmptyGroup(1));
        }
        Ok(self.fn_ as f64 / pos as f64)
    }

    pub fn fpr(&self) -> Result<f64> {
        let neg = self.fp + self.tn;
        if neg == 0 {
            return Err(MetricsError::EmptyGroup(0));
        }
        Ok(self.fp as f64 / neg as f64)
    }

    pub fn accuracy(&self) -> f64 {
        (self.tn + self.tp) as f64 / self.total().max(1) as f64
    }
}

/// `FNR + FPR` of an attacker.
pub fn privacy_fnr_fpr(c: &Confusion) -> Result<f64> {
    Ok(c.fnr()? + c.fpr()?)
}

/// Minimum privacy over a pool of attackers.
pub fn privacy_of_class(attackers: &[LabeledPreds]) -> Result<f64> {
    if attackers.is_empty() {
        return Err(MetricsError::EmptyPool);
    }
    attackers.iter().try_fold(f64::INFINITY, |m, p| Ok(m.min(privacy_of_hypothesis(p)?)))
}

/// Minimum `FNR + FPR` over a pool closed under complement.
pub fn privacy_of_symmetric_class(attackers: &[LabeledPreds]) -> Result<f64> {
    if attackers.is_empty() {
        return Err(MetricsError::EmptyPool);
    }
    let mut best = f64::INFINITY;
    for p in attackers {
        for q in [p.clone(), p.complement()] {
            best = best.min(privacy_fnr_fpr(&Confusion::from_preds(&q))?);
        }
    }
    Ok(best)
}
