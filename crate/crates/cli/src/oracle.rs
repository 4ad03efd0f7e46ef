//! Exact population quantities of a finite synthetic joint, with `Z = X`.

use serde::Serialize;
use veilkit::data::JointSpec;
use veilkit::infotheory::{certificate, conditional_entropy, entropy, thm2_check, thm3_floor, Dist, JointDist, PrivacyCertificate};
use veilkit::numkit::Mat;

/// Classifiers of `X` are enumerated only up to this many inputs.
pub const MAX_ENUM_X: usize = 16;

#[derive(Debug, Serialize)]
pub struct AttributeOracle {
    pub attribute: String,
    pub rate: f64,
    pub h_a_bits: f64,
    /// `H(A | X)`, the best possible H* for any representation of `X`.
    pub h_a_given_x_bits: f64,
    pub certificate: PrivacyCertificate,
    /// Error of the Bayes-optimal attacker that sees `X`.
    pub bayes_error: f64,
    /// `1 - TV(X | A=0, X | A=1)`, the privacy of all classifiers of `X`.
    pub privacy: f64,
    /// `D_JS(Y | A=0, Y | A=1)` in bits.
    pub djs_y: f64,
    pub enumerated: Option<Enumeration>,
}

/// Checks over every deterministic classifier `X -> {0, 1}`.
#[derive(Debug, Serialize)]
pub struct Enumeration {
    pub classifiers: usize,
    /// Minimum over attackers of `FNR + FPR`; equals `privacy`.
    pub min_fnr_fpr: f64,
    /// Largest `Util0 + Util1 + Priv` against its ceiling.
    pub thm2_max_lhs: f64,
    pub thm2_rhs: f64,
    pub thm2_holds: bool,
    pub min_joint_error: f64,
    pub thm3_floor: Option<f64>,
    pub thm3_holds: Option<bool>,
}

#[derive(Debug, Serialize)]
pub struct Oracle {
    pub x_card: usize,
    pub num_attrs: usize,
    pub attributes: Vec<AttributeOracle>,
}

/// `m[x][y][a]` for attribute `k`.
fn marginal(spec: &JointSpec, k: usize) -> Vec<[[f64; 2]; 2]> {
    let mut m = vec![[[0.0; 2]; 2]; spec.x_card];
    for (idx, &p) in spec.probs.iter().enumerate() {
        let (x, y, a) = spec.cell(idx);
        m[x][usize::from(y)][usize::from(a[k])] += p;
    }
    m
}

pub fn evaluate(spec: &JointSpec) -> Result<Oracle, String> {
    spec.validate().map_err(|e| e.to_string())?;
    let mut attributes = Vec::with_capacity(spec.num_attrs);
    for k in 0..spec.num_attrs {
        let m = marginal(spec, k);
        let rate = spec.attr_rate(k);
        if rate <= 0.0 || rate >= 1.0 {
            return Err(format!("attribute a{} takes a single value", k + 1));
        }
        // p(a, x) with A on the rows
        let ax = Mat::from_fn(2, spec.x_card, |a, x| m[x][0][a] + m[x][1][a]);
        let h_a = entropy(&Dist::new(vec![1.0 - rate, rate]).map_err(|e| e.to_string())?);
        let h_ax = conditional_entropy(&JointDist::new(ax.clone()).map_err(|e| e.to_string())?).min(h_a);
        let bayes_error = (0..spec.x_card).map(|x| ax[(0, x)].min(ax[(1, x)])).sum();
        let tv: f64 = (0..spec.x_card).map(|x| (ax[(1, x)] / rate - ax[(0, x)] / (1.0 - rate)).abs()).sum::<f64>() / 2.0;
        let privacy = 1.0 - tv;
        let djs_y = spec.djs_y(k).map_err(|e| e.to_string())?;
        let enumerated = (spec.x_card <= MAX_ENUM_X).then(|| enumerate(&m, rate, privacy, djs_y));
        attributes.push(AttributeOracle {
            attribute: format!("a{}", k + 1),
            rate,
            h_a_bits: h_a,
            h_a_given_x_bits: h_ax,
            certificate: certificate(h_ax.clamp(0.0, 1.0)).map_err(|e| e.to_string())?,
            bayes_error,
            privacy,
            djs_y,
            enumerated,
        });
    }
    Ok(Oracle { x_card: spec.x_card, num_attrs: spec.num_attrs, attributes })
}

fn enumerate(m: &[[[f64; 2]; 2]], rate: f64, privacy: f64, djs_y: f64) -> Enumeration {
    let mass = [1.0 - rate, rate];
    let n = 1usize << m.len();
    let (mut min_fnr_fpr, mut max_lhs, mut min_joint) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY);
    for h in 0..n {
        let mut err = [0.0; 2];
        let mut pos = [0.0; 2];
        for (x, cell) in m.iter().enumerate() {
            let pred = (h >> x) & 1;
            for (y, row) in cell.iter().enumerate() {
                for a in 0..2 {
                    if pred != y {
                        err[a] += row[a];
                    }
                    if pred == 1 {
                        pos[a] += row[a];
                    }
                }
            }
        }
        // As an attacker, h predicts A: FNR = P(h=0 | A=1), FPR = P(h=1 | A=0).
        let fnr_fpr = (1.0 - pos[1] / mass[1]) + pos[0] / mass[0];
        min_fnr_fpr = min_fnr_fpr.min(fnr_fpr.min(2.0 - fnr_fpr));
        let (e0, e1) = (err[0] / mass[0], err[1] / mass[1]);
        max_lhs = max_lhs.max(thm2_check(1.0 - e0, 1.0 - e1, privacy, djs_y).lhs);
        min_joint = min_joint.min(e0 + e1);
    }
    let rhs = thm2_check(0.0, 0.0, 0.0, djs_y).rhs;
    let floor = thm3_floor(privacy, djs_y);
    Enumeration {
        classifiers: n,
        min_fnr_fpr,
        thm2_max_lhs: max_lhs,
        thm2_rhs: rhs,
        thm2_holds: max_lhs <= rhs + 1e-9,
        min_joint_error: min_joint,
        thm3_floor: floor,
        thm3_holds: floor.map(|f| min_joint >= f - 1e-9),
    }
}
