//! End-to-end experiments: fit a defense, train a target classifier and a pool
//! of fresh attackers on the released features, and score everything.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    load_adult_cached, synth_joint, synth_leaky, AdultConfig, DataError, JointSpec, LeakySpec, PrivateAttr, Split,
    SplitDataset, SplitSizes,
};
use crate::defenses::{DefenseConfig, DefenseError, FeatureMap, Method};
use crate::infotheory::{binary_entropy, certificate, PrivacyCertificate, TradeoffLedger};
use crate::metrics::{conditional_error, threshold, utility, Confusion, LabeledPreds, MetricsError};
use crate::nnet::{accuracy, fit_classifier, NetError, NetSpec, TrainConfig};
use crate::numkit::{Mat, NumError};
use crate::scalar::Scalar;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SLACK: f64 = 0.02;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{stage} failed for seed {seed}: {msg}")]
    Stage { stage: Stage, seed: u64, numerical: bool, msg: String },
    #[error("report: {0}")]
    Report(String),
}

impl HarnessError {
    /// Divergence or other non-finite arithmetic, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, HarnessError::Stage { numerical: true, .. })
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Defense,
    Transform,
    Target,
    Attack,
    Metrics,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Defense => "defense",
            Stage::Transform => "transform",
            Stage::Target => "target",
            Stage::Attack => "attack",
            Stage::Metrics => "metrics",
        })
    }
}

fn net_numerical(e: &NetError) -> bool {
    matches!(e, NetError::NonFinite { .. } | NetError::NonFiniteLoss { .. } | NetError::Num(_))
}

fn num_numerical(e: &NumError) -> bool {
    matches!(e, NumError::NonFinite { .. } | NumError::NoConvergence { .. } | NumError::Singular { .. })
}

trait StageErr<T> {
    fn at(self, stage: Stage, seed: u64) -> Result<T>;
}

impl<T> StageErr<T> for std::result::Result<T, DefenseError> {
    fn at(self, stage: Stage, seed: u64) -> Result<T> {
        self.map_err(|e| {
            let numerical = match &e {
                DefenseError::Net(n) => net_numerical(n),
                DefenseError::Num(n) => num_numerical(n),
                _ => false,
            };
            HarnessError::Stage { stage, seed, numerical, msg: e.to_string() }
        })
    }
}

impl<T> StageErr<T> for std::result::Result<T, NetError> {
    fn at(self, stage: Stage, seed: u64) -> Result<T> {
        self.map_err(|e| HarnessError::Stage { stage, seed, numerical: net_numerical(&e), msg: e.to_string() })
    }
}

impl<T> StageErr<T> for std::result::Result<T, MetricsError> {
    fn at(self, stage: Stage, seed: u64) -> Result<T> {
        self.map_err(|e| HarnessError::Stage { stage, seed, numerical: false, msg: e.to_string() })
    }
}

/// Where the data of an experiment comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    Adult {
        private_attr: PrivateAttr,
        /// Directory holding `adult.data` and `adult.test`.
        dir: PathBuf,
        #[serde(default)]
        split_seed: u64,
    },
    SynthJoint {
        joint: JointSpec,
        train_size: usize,
        #[serde(default)]
        seed: u64,
    },
    SynthLeaky {
        leaky: LeakySpec,
        train_size: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl DatasetSpec {
    pub fn load<T: Scalar>(&self, cache_dir: Option<&Path>) -> Result<SplitDataset<T>> {
        Ok(match self {
            DatasetSpec::Adult { private_attr, dir, split_seed } => {
                let cfg = AdultConfig { seed: *split_seed, ..AdultConfig::in_dir(dir, *private_attr) };
                load_adult_cached::<f64>(&cfg, cache_dir)?.cast()
            }
            DatasetSpec::SynthJoint { joint, train_size, seed } => {
                synth_joint(joint, SplitSizes::from_train(*train_size), *seed)?
            }
            DatasetSpec::SynthLeaky { leaky, train_size, seed } => {
                synth_leaky(leaky, SplitSizes::from_train(*train_size), *seed)?
            }
        })
    }

    pub fn attr_names(&self) -> Vec<String> {
        match self {
            DatasetSpec::Adult { private_attr, .. } => vec![private_attr.name().to_string()],
            DatasetSpec::SynthJoint { joint, .. } => (1..=joint.num_attrs).map(|k| format!("a{k}")).collect(),
            DatasetSpec::SynthLeaky { leaky, .. } => (1..=leaky.thresholds.len()).map(|k| format!("a{k}")).collect(),
        }
    }
}

/// A classifier architecture and how to train it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// ReLU hidden widths; empty is logistic regression.
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ModelSpec {
    pub fn new(hidden: &[usize]) -> Self {
        Self { hidden: hidden.to_vec(), train: TrainConfig::default() }
    }

    pub fn name(&self) -> String {
        if self.hidden.is_empty() {
            "logistic".into()
        } else {
            let w: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
            format!("mlp-{}", w.join("x"))
        }
    }
}

pub fn default_pool() -> Vec<ModelSpec> {
    vec![ModelSpec::new(&[]), ModelSpec::new(&[100]), ModelSpec::new(&[100, 100])]
}

fn default_target() -> ModelSpec {
    ModelSpec::new(&[100])
}

fn default_slack() -> f64 {
    DEFAULT_SLACK
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub defense: DefenseConfig,
    #[serde(default = "default_target")]
    pub target: ModelSpec,
    #[serde(default = "default_pool")]
    pub pool: Vec<ModelSpec>,
    pub repetitions: usize,
    pub seeds: Vec<u64>,
    /// Allowance for sampling error in the empirical checks.
    #[serde(default = "default_slack")]
    pub slack: f64,
}

impl ExperimentConfig {
    /// Default target and pool, seeds `0..repetitions`.
    pub fn new(dataset: DatasetSpec, defense: DefenseConfig, repetitions: usize) -> Self {
        Self {
            dataset,
            defense,
            target: default_target(),
            pool: default_pool(),
            repetitions,
            seeds: (0..repetitions as u64).collect(),
            slack: DEFAULT_SLACK,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(HarnessError::Config("repetitions must be at least 1".into()));
        }
        if self.repetitions != self.seeds.len() {
            return Err(HarnessError::Config(format!(
                "repetitions is {} but {} seeds are listed",
                self.repetitions,
                self.seeds.len()
            )));
        }
        if self.pool.is_empty() {
            return Err(HarnessError::Config("attacker pool is empty".into()));
        }
        if !(self.slack >= 0.0 && self.slack.is_finite()) {
            return Err(HarnessError::Config(format!("slack must be finite and non-negative, got {}", self.slack)));
        }
        for m in std::iter::once(&self.target).chain(&self.pool) {
            m.train.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        self.defense.validate().map_err(|e| HarnessError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackerResult {
    pub name: String,
    pub accuracy: f64,
    pub fnr: f64,
    pub fpr: f64,
    pub fnr_fpr: f64,
    pub ce_nats: f64,
    pub ce_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attribute: String,
    pub attackers: Vec<AttackerResult>,
    /// Majority-class rate of the attribute on the test split.
    pub majority: f64,
    /// Over the pool and each attacker's complement.
    pub min_fnr_fpr: f64,
    /// Over the pool and each attacker's complement.
    pub max_accuracy: f64,
    /// Smallest pool cross-entropy in bits, capped at `H(A)`.
    pub h_star_bits: f64,
}

impl AttackReport {
    /// Smallest inference error over the pool and complements.
    pub fn min_error(&self) -> f64 {
        1.0 - self.max_accuracy
    }
}

/// Score trained attackers' test-set outputs `(name, probabilities, CE nats)`.
pub fn attack_report(attribute: &str, a: &[u8], outputs: &[(String, Vec<f64>, f64)]) -> std::result::Result<AttackReport, MetricsError> {
    if outputs.is_empty() {
        return Err(MetricsError::EmptyPool);
    }
    let ones = a.iter().filter(|&&v| v == 1).count() as f64 / a.len().max(1) as f64;
    let h_a = binary_entropy(ones);
    let mut attackers = Vec::with_capacity(outputs.len());
    for (name, probs, ce) in outputs {
        let preds = LabeledPreds::attack(threshold(probs), a.to_vec())?;
        let c = Confusion::from_preds(&preds);
        let (fnr, fpr) = (c.fnr()?, c.fpr()?);
        attackers.push(AttackerResult {
            name: name.clone(),
            accuracy: c.accuracy(),
            fnr,
            fpr,
            fnr_fpr: fnr + fpr,
            ce_nats: *ce,
            ce_bits: ce / std::f64::consts::LN_2,
        });
    }
    let min_fnr_fpr = attackers.iter().map(|r| r.fnr_fpr.min(2.0 - r.fnr_fpr)).fold(f64::INFINITY, f64::min);
    let max_accuracy = attackers.iter().map(|r| r.accuracy.max(1.0 - r.accuracy)).fold(0.0, f64::max);
    let h_star_bits = attackers.iter().map(|r| r.ce_bits).fold(f64::INFINITY, f64::min).min(h_a).max(0.0);
    Ok(AttackReport {
        attribute: attribute.to_string(),
        attackers,
        majority: ones.max(1.0 - ones),
        min_fnr_fpr,
        max_accuracy,
        h_star_bits,
    })
}

/// Certificate from the pool's best cross-entropy. The pool can only
/// overestimate `H(A|Z)`, so the bound is a proxy for the true one.
pub fn certify(report: &AttackReport) -> std::result::Result<PrivacyCertificate, crate::infotheory::InfoError> {
    certificate(report.h_star_bits)
}

/// Target utilities conditioned on the attribute against both trade-off bounds,
/// with `D_JS` taken from the dataset's `(A, Y)` count table.
pub fn ledger(target: &TargetOutcome, attack: &AttackReport, counts: [usize; 4], slack: f64) -> TradeoffLedger {
    let djs = crate::data::djs_from_counts(counts);
    TradeoffLedger::evaluate(1.0 - target.err0, 1.0 - target.err1, attack.min_fnr_fpr, djs, slack)
}

/// Target-task results conditioned on one attribute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetOutcome {
    pub err0: f64,
    pub err1: f64,
    pub joint_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeReport {
    pub attack: AttackReport,
    pub target: TargetOutcome,
    pub certificate: PrivacyCertificate,
    /// The smallest pool error is at least `bound - slack`.
    pub certificate_consistent: bool,
    pub ledger: TradeoffLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionReport {
    pub seed: u64,
    pub utility: f64,
    pub target_accuracy: f64,
    pub selected_epoch: usize,
    pub attributes: Vec<AttributeReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; zero for one repetition.
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSummary {
    pub attribute: String,
    pub err0: Stat,
    pub err1: Stat,
    pub joint_error: Stat,
    pub min_fnr_fpr: Stat,
    pub max_attacker_accuracy: Stat,
    pub h_star_bits: Stat,
    pub bound: Stat,
    pub certificate_consistent: bool,
    pub thm2_satisfied: bool,
    /// `None` when the floor never applied.
    pub thm3_satisfied: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub utility: Stat,
    pub target_accuracy: Stat,
    pub attributes: Vec<AttributeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub method: Method,
    /// λ, ε, ρ or the like when the method has one.
    pub tradeoff: Option<f64>,
    pub dataset: String,
    pub pool: Vec<String>,
    /// Set for methods without a representation-learning guarantee (DP).
    pub certificate_is_heuristic: bool,
    pub config: ExperimentConfig,
    pub repetitions: Vec<RepetitionReport>,
    pub summary: Summary,
}

/// Seed for a sub-stage of one repetition.
pub fn derive_seed(seed: u64, stage: u64) -> u64 {
    let mut z = seed ^ stage.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0xd1b5_4a32_d192_ed03);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const TARGET_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 10;
const ATTACKER_STREAM: u64 = 100;

pub struct Released<T> {
    pub train: Mat<T>,
    pub val: Mat<T>,
    pub test: Mat<T>,
}

/// Apply a fitted map to every split. Noisy maps draw independent noise per split.
pub fn release<T: Scalar>(map: &FeatureMap<T>, ds: &SplitDataset<T>, seed: u64) -> std::result::Result<Released<T>, DefenseError> {
    let go = |s: &Split<T>, k: u64| map.transform_with_rng(&s.x, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, NOISE_STREAM + k)));
    Ok(Released { train: go(&ds.train, 0)?, val: go(&ds.val, 1)?, test: go(&ds.test, 2)? })
}

/// Train the pool on `(z_train, a_train)` and score it on the test split.
pub fn run_attack<T: Scalar>(
    pool: &[ModelSpec],
    z_train: &Mat<T>,
    a_train: &[u8],
    z_test: &Mat<T>,
    a_test: &[u8],
    attribute: &str,
    seed: u64,
) -> Result<AttackReport> {
    let mut outputs = Vec::with_capacity(pool.len());
    for (i, m) in pool.iter().enumerate() {
        let spec = NetSpec::classifier(z_train.cols(), &m.hidden);
        let tc = m.train.with_seed(derive_seed(seed, ATTACKER_STREAM + i as u64));
        let clf = fit_classifier(&spec, z_train, a_train, &tc, None).at(Stage::Attack, seed)?.classifier;
        let p = clf.predict_proba(z_test).at(Stage::Attack, seed)?;
        let ce = clf.cross_entropy(z_test, a_test).at(Stage::Attack, seed)?;
        outputs.push((m.name(), p, ce));
    }
    attack_report(attribute, a_test, &outputs).at(Stage::Attack, seed)
}

/// One seed of an experiment on already-loaded data.
pub fn run_repetition<T: Scalar>(cfg: &ExperimentConfig, ds: &SplitDataset<T>, names: &[String], seed: u64) -> Result<RepetitionReport> {
    let map = cfg.defense.fit(&ds.train, seed).at(Stage::Defense, seed)?;
    score_map(cfg, ds, names, seed, &map)
}

/// Everything in a repetition after the defense has been fitted.
pub fn score_map<T: Scalar>(
    cfg: &ExperimentConfig,
    ds: &SplitDataset<T>,
    names: &[String],
    seed: u64,
    map: &FeatureMap<T>,
) -> Result<RepetitionReport> {
    let z = release(map, ds, seed).at(Stage::Transform, seed)?;

    let spec = NetSpec::classifier(z.train.cols(), &cfg.target.hidden);
    let tc = cfg.target.train.with_seed(derive_seed(seed, TARGET_STREAM));
    let fit = fit_classifier(&spec, &z.train, &ds.train.y, &tc, Some((&z.val, &ds.val.y))).at(Stage::Target, seed)?;
    let p = fit.classifier.predict_proba(&z.test).at(Stage::Target, seed)?;
    let y_hat = threshold(&p);

    let mut attributes = Vec::with_capacity(ds.num_attrs());
    let mut util = None;
    for (k, name) in names.iter().enumerate() {
        let a_test = &ds.test.attrs[k];
        let preds = LabeledPreds::new(y_hat.clone(), ds.test.y.clone(), a_test.clone()).at(Stage::Metrics, seed)?;
        util.get_or_insert_with(|| utility(&preds));
        let err0 = conditional_error(&preds, 0).at(Stage::Metrics, seed)?;
        let err1 = conditional_error(&preds, 1).at(Stage::Metrics, seed)?;
        let target = TargetOutcome { err0, err1, joint_error: err0 + err1 };

        let attack = run_attack(&cfg.pool, &z.train, &ds.train.attrs[k], &z.test, a_test, name, derive_seed(seed, k as u64))?;
        let cert = certify(&attack).map_err(|e| HarnessError::Stage {
            stage: Stage::Metrics,
            seed,
            numerical: false,
            msg: e.to_string(),
        })?;
        let ledger = ledger(&target, &attack, ds.joint_counts(k), cfg.slack);
        attributes.push(AttributeReport {
            certificate_consistent: attack.min_error() >= cert.bound - cfg.slack,
            attack,
            target,
            certificate: cert,
            ledger,
        });
    }
    Ok(RepetitionReport {
        seed,
        utility: util.unwrap_or(f64::NAN),
        target_accuracy: accuracy(&p, &ds.test.y),
        selected_epoch: fit.selected_epoch,
        attributes,
    })
}

pub fn summarize(reps: &[RepetitionReport], names: &[String]) -> Summary {
    let col = |f: &dyn Fn(&RepetitionReport) -> f64| Stat::of(&reps.iter().map(f).collect::<Vec<_>>());
    let attributes = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let at = |f: &dyn Fn(&AttributeReport) -> f64| col(&|r: &RepetitionReport| f(&r.attributes[k]));
            let thm3: Vec<bool> = reps.iter().filter_map(|r| r.attributes[k].ledger.thm3_satisfied).collect();
            AttributeSummary {
                attribute: name.clone(),
                err0: at(&|a| a.target.err0),
                err1: at(&|a| a.target.err1),
                joint_error: at(&|a| a.target.joint_error),
                min_fnr_fpr: at(&|a| a.attack.min_fnr_fpr),
                max_attacker_accuracy: at(&|a| a.attack.max_accuracy),
                h_star_bits: at(&|a| a.attack.h_star_bits),
                bound: at(&|a| a.certificate.bound),
                certificate_consistent: reps.iter().all(|r| r.attributes[k].certificate_consistent),
                thm2_satisfied: reps.iter().all(|r| r.attributes[k].ledger.thm2_satisfied),
                thm3_satisfied: (!thm3.is_empty()).then(|| thm3.iter().all(|&b| b)),
            }
        })
        .collect();
    Summary { utility: col(&|r| r.utility), target_accuracy: col(&|r| r.target_accuracy), attributes }
}

/// Execution knobs that do not change results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub jobs: usize,
    pub cache_dir: Option<PathBuf>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    run_experiment_with(cfg, &RunOptions::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    let ds: SplitDataset<f64> = cfg.dataset.load(opts.cache_dir.as_deref())?;
    run_on(cfg, &ds, opts.jobs)
}

/// Run every seed of `cfg` on `ds`, up to `jobs` seeds at a time.
pub fn run_on<T: Scalar>(cfg: &ExperimentConfig, ds: &SplitDataset<T>, jobs: usize) -> Result<RunReport> {
    run_on_with_maps(cfg, ds, jobs).map(|(report, _)| report)
}

/// [`run_on`], also returning the fitted feature map of every seed.
pub fn run_on_with_maps<T: Scalar>(
    cfg: &ExperimentConfig,
    ds: &SplitDataset<T>,
    jobs: usize,
) -> Result<(RunReport, Vec<FeatureMap<T>>)> {
    cfg.validate()?;
    let names = cfg.dataset.attr_names();
    if names.len() != ds.num_attrs() {
        return Err(HarnessError::Config(format!("dataset has {} attributes, spec names {}", ds.num_attrs(), names.len())));
    }
    let jobs = jobs.clamp(1, cfg.seeds.len());
    let one = |seed: u64| -> Result<(RepetitionReport, FeatureMap<T>)> {
        let map = cfg.defense.fit(&ds.train, seed).at(Stage::Defense, seed)?;
        Ok((score_map(cfg, ds, &names, seed, &map)?, map))
    };
    let mut results: Vec<Option<Result<(RepetitionReport, FeatureMap<T>)>>> = (0..cfg.seeds.len()).map(|_| None).collect();
    if jobs == 1 {
        for (slot, &seed) in results.iter_mut().zip(&cfg.seeds) {
            *slot = Some(one(seed));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let out = std::sync::Mutex::new(&mut results);
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= cfg.seeds.len() {
                        break;
                    }
                    let r = one(cfg.seeds[i]);
                    out.lock().expect("no panics while holding the lock")[i] = Some(r);
                });
            }
        });
    }
    let (reps, maps): (Vec<_>, Vec<_>) =
        results.into_iter().map(|r| r.expect("every seed ran")).collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let method = cfg.defense.method();
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        method,
        tradeoff: cfg.defense.tradeoff(),
        dataset: ds.name.clone(),
        pool: cfg.pool.iter().map(ModelSpec::name).collect(),
        certificate_is_heuristic: method == Method::Dp,
        config: cfg.clone(),
        summary: summarize(&reps, &names),
        repetitions: reps,
    };
    Ok((report, maps))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format {other:?} (json|csv)")),
        }
    }
}

/// Columns of the per-repetition CSV, one row per (seed, attribute).
pub const CSV_COLUMNS: [&str; 17] = [
    "schema_version",
    "method",
    "tradeoff",
    "dataset",
    "seed",
    "attribute",
    "utility",
    "err0",
    "err1",
    "joint_error",
    "min_fnr_fpr",
    "max_attacker_accuracy",
    "h_star_bits",
    "bound",
    "thm2_lhs",
    "thm2_rhs",
    "thm3_floor",
];

/// Columns of the long-format summary CSV.
pub const SUMMARY_COLUMNS: [&str; 7] = ["method", "tradeoff", "attribute", "metric", "mean", "std", "bound"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Report(e.to_string())
}

pub fn emit(report: &RunReport, format: Format) -> Result<Vec<u8>> {
    if report.repetitions.is_empty() {
        return Err(HarnessError::Report("report has no repetitions".into()));
    }
    match format {
        Format::Json => {
            let mut out = serde_json::to_vec_pretty(report).map_err(csv_err)?;
            out.push(b'\n');
            Ok(out)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_COLUMNS).map_err(csv_err)?;
            for rep in &report.repetitions {
                for a in &rep.attributes {
                    w.write_record([
                        report.schema_version.to_string(),
                        report.method.name().to_string(),
                        opt(report.tradeoff),
                        report.dataset.clone(),
                        rep.seed.to_string(),
                        a.attack.attribute.clone(),
                        rep.utility.to_string(),
                        a.target.err0.to_string(),
                        a.target.err1.to_string(),
                        a.target.joint_error.to_string(),
                        a.attack.min_fnr_fpr.to_string(),
                        a.attack.max_accuracy.to_string(),
                        a.attack.h_star_bits.to_string(),
                        a.certificate.bound.to_string(),
                        a.ledger.thm2_lhs.to_string(),
                        a.ledger.thm2_rhs.to_string(),
                        opt(a.ledger.thm3_floor),
                    ])
                    .map_err(csv_err)?;
                }
            }
            w.into_inner().map_err(csv_err)
        }
    }
}

/// Long-format summary of several runs: one row per metric with its mean,
/// standard deviation and the mean certificate bound.
pub fn emit_summary_csv(reports: &[RunReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_COLUMNS).map_err(csv_err)?;
    for r in reports {
        for a in &r.summary.attributes {
            let rows: [(&str, Stat); 8] = [
                ("utility", r.summary.utility),
                ("err0", a.err0),
                ("err1", a.err1),
                ("joint_error", a.joint_error),
                ("min_fnr_fpr", a.min_fnr_fpr),
                ("max_attacker_accuracy", a.max_attacker_accuracy),
                ("min_attacker_error", Stat { mean: 1.0 - a.max_attacker_accuracy.mean, std: a.max_attacker_accuracy.std }),
                ("h_star_bits", a.h_star_bits),
            ];
            for (metric, s) in rows {
                w.write_record([
                    r.method.name().to_string(),
                    opt(r.tradeoff),
                    a.attribute.clone(),
                    metric.to_string(),
                    s.mean.to_string(),
                    s.std.to_string(),
                    a.bound.mean.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.into_inner().map_err(csv_err)
}

pub fn parse_report(bytes: &[u8]) -> Result<RunReport> {
    let r: RunReport = serde_json::from_slice(bytes).map_err(csv_err)?;
    if r.schema_version != REPORT_SCHEMA_VERSION {
        return Err(HarnessError::Report(format!(
            "schema version {} is not supported (expected {REPORT_SCHEMA_VERSION})",
            r.schema_version
        )));
    }
    Ok(r)
}
