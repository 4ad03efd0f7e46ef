//! UCI Adult ingestion and synthetic datasets.
//!
//! Adult rows with a missing field are dropped. The official training file is
//! split by a seeded shuffle into 24130 training and 6032 validation rows; the
//! official test file is the test split. Categorical fields are one-hot
//! encoded against the vocabularies of `adult.names`, age is one-hot encoded
//! into eleven bands and the remaining numeric fields are min-max scaled with
//! ranges fitted on the training split. The private attribute's source column
//! is removed before encoding.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::infotheory::{js_divergence, Dist};
use crate::nnet::rng_from_seed;
use crate::numkit::Mat;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("encoded width {got}, expected {expected}")]
    Dim { expected: usize, got: usize },
    #[error("expected {expected} rows in {what}, found {got}")]
    Size { what: &'static str, expected: usize, got: usize },
    #[error("invalid joint: {0}")]
    InvalidJoint(String),
    #[error("cache: {0}")]
    Cache(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

pub const ADULT_TRAIN: usize = 24130;
pub const ADULT_VAL: usize = 6032;
pub const ADULT_TEST: usize = 15060;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrivateAttr {
    Gender,
    Age,
    Education,
}

impl PrivateAttr {
    pub const ALL: [PrivateAttr; 3] = [PrivateAttr::Gender, PrivateAttr::Age, PrivateAttr::Education];

    pub fn expected_dim(self) -> usize {
        match self {
            PrivateAttr::Gender => 113,
            PrivateAttr::Age => 104,
            PrivateAttr::Education => 99,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PrivateAttr::Gender => "gender",
            PrivateAttr::Age => "age",
            PrivateAttr::Education => "education",
        }
    }

    fn source_field(self) -> usize {
        match self {
            PrivateAttr::Gender => SEX,
            PrivateAttr::Age => AGE,
            PrivateAttr::Education => EDUCATION,
        }
    }
}

impl std::str::FromStr for PrivateAttr {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gender" => Ok(PrivateAttr::Gender),
            "age" => Ok(PrivateAttr::Age),
            "education" => Ok(PrivateAttr::Education),
            other => Err(format!("unknown private attribute {other:?} (gender|age|education)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdultConfig {
    pub private_attr: PrivateAttr,
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    /// Seed of the train/validation shuffle.
    #[serde(default)]
    pub seed: u64,
}

impl AdultConfig {
    /// Files named `adult.data` and `adult.test` inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>, private_attr: PrivateAttr) -> Self {
        let dir = dir.as_ref();
        Self { private_attr, train_path: dir.join("adult.data"), test_path: dir.join("adult.test"), seed: 0 }
    }
}

/// Features, target and one or more private attributes for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Split<T> {
    pub x: Mat<T>,
    pub y: Vec<u8>,
    /// One vector per private attribute.
    pub attrs: Vec<Vec<u8>>,
}

impl<T: Scalar> Split<T> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// The first private attribute.
    pub fn a(&self) -> &[u8] {
        &self.attrs[0]
    }

    /// Counts `[(A=0,Y=0), (A=0,Y=1), (A=1,Y=0), (A=1,Y=1)]` for attribute `k`.
    pub fn joint_counts(&self, k: usize) -> [usize; 4] {
        let mut c = [0; 4];
        for (&y, &a) in self.y.iter().zip(&self.attrs[k]) {
            c[usize::from(a) * 2 + usize::from(y)] += 1;
        }
        c
    }

    pub fn with_features(&self, x: Mat<T>) -> Self {
        Self { x, y: self.y.clone(), attrs: self.attrs.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SplitDataset<T> {
    pub name: String,
    pub feature_names: Vec<String>,
    pub train: Split<T>,
    pub val: Split<T>,
    pub test: Split<T>,
}

impl<T: Scalar> SplitDataset<T> {
    pub fn input_dim(&self) -> usize {
        self.train.x.cols()
    }

    pub fn num_attrs(&self) -> usize {
        self.train.attrs.len()
    }

    /// Joint `(A, Y)` counts over all three splits.
    pub fn joint_counts(&self, k: usize) -> [usize; 4] {
        let mut c = [0; 4];
        for s in [&self.train, &self.val, &self.test] {
            for (t, v) in c.iter_mut().zip(s.joint_counts(k)) {
                *t += v;
            }
        }
        c
    }

    /// JS divergence (bits) between `Y | A=0` and `Y | A=1` over all splits.
    pub fn djs_y(&self, k: usize) -> f64 {
        djs_from_counts(self.joint_counts(k))
    }

    pub fn cast<U: Scalar>(&self) -> SplitDataset<U> {
        let c = |s: &Split<T>| Split { x: s.x.cast(), y: s.y.clone(), attrs: s.attrs.clone() };
        SplitDataset {
            name: self.name.clone(),
            feature_names: self.feature_names.clone(),
            train: c(&self.train),
            val: c(&self.val),
            test: c(&self.test),
        }
    }
}

/// JS divergence between the two conditionals of a `[(0,0),(0,1),(1,0),(1,1)]`
/// `(A, Y)` count table.
pub fn djs_from_counts(c: [usize; 4]) -> f64 {
    let cond = |n0: usize, n1: usize| {
        let tot = (n0 + n1).max(1) as f64;
        Dist::<f64>::bernoulli(n1 as f64 / tot).expect("count ratio is a probability")
    };
    js_divergence(&cond(c[0], c[1]), &cond(c[2], c[3])).expect("two bernoullis")
}

const AGE: usize = 0;
const EDUCATION: usize = 3;
const SEX: usize = 9;

enum Field {
    Categorical(&'static [&'static str]),
    AgeBands,
    Numeric,
}

const FIELDS: [(&str, Field); 14] = [
    ("age", Field::AgeBands),
    (
        "workclass",
        Field::Categorical(&[
            "Private",
            "Self-emp-not-inc",
            "Self-emp-inc",
            "Federal-gov",
            "Local-gov",
            "State-gov",
            "Without-pay",
            "Never-worked",
        ]),
    ),
    ("fnlwgt", Field::Numeric),
    (
        "education",
        Field::Categorical(&[
            "Bachelors",
            "Some-college",
            "11th",
            "HS-grad",
            "Prof-school",
            "Assoc-acdm",
            "Assoc-voc",
            "9th",
            "7th-8th",
            "12th",
            "Masters",
            "1st-4th",
            "10th",
            "Doctorate",
            "5th-6th",
            "Preschool",
        ]),
    ),
    ("education-num", Field::Numeric),
    (
        "marital-status",
        Field::Categorical(&[
            "Married-civ-spouse",
            "Divorced",
            "Never-married",
            "Separated",
            "Widowed",
            "Married-spouse-absent",
            "Married-AF-spouse",
        ]),
    ),
    (
        "occupation",
        Field::Categorical(&[
            "Tech-support",
            "Craft-repair",
            "Other-service",
            "Sales",
            "Exec-managerial",
            "Prof-specialty",
            "Handlers-cleaners",
            "Machine-op-inspct",
            "Adm-clerical",
            "Farming-fishing",
            "Transport-moving",
            "Priv-house-serv",
            "Protective-serv",
            "Armed-Forces",
        ]),
    ),
    (
        "relationship",
        Field::Categorical(&["Wife", "Own-child", "Husband", "Not-in-family", "Other-relative", "Unmarried"]),
    ),
    ("race", Field::Categorical(&["White", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other", "Black"])),
    ("sex", Field::Categorical(&["Female", "Male"])),
    ("capital-gain", Field::Numeric),
    ("capital-loss", Field::Numeric),
    ("hours-per-week", Field::Numeric),
    (
        "native-country",
        Field::Categorical(&[
            "United-States",
            "Cambodia",
            "England",
            "Puerto-Rico",
            "Canada",
            "Germany",
            "Outlying-US(Guam-USVI-etc)",
            "India",
            "Japan",
            "Greece",
            "South",
            "China",
            "Cuba",
            "Iran",
            "Honduras",
            "Philippines",
            "Italy",
            "Poland",
            "Jamaica",
            "Vietnam",
            "Mexico",
            "Portugal",
            "Ireland",
            "France",
            "Dominican-Republic",
            "Laos",
            "Ecuador",
            "Taiwan",
            "Haiti",
            "Columbia",
            "Hungary",
            "Guatemala",
            "Nicaragua",
            "Scotland",
            "Thailand",
            "Yugoslavia",
            "El-Salvador",
            "Trinadad&Tobago",
            "Peru",
            "Hong",
            "Holand-Netherlands",
        ]),
    ),
];

/// Lower edges of the age bands after the first (`< 25`).
const AGE_EDGES: [u32; 10] = [25, 30, 35, 40, 45, 50, 55, 60, 65, 70];

const COLLEGE: [&str; 4] = ["Some-college", "Bachelors", "Masters", "Doctorate"];

fn age_band(age: u32) -> usize {
    AGE_EDGES.iter().take_while(|&&e| age >= e).count()
}

fn age_band_name(band: usize) -> String {
    match band {
        0 => "age=<25".into(),
        b if b == AGE_EDGES.len() => format!("age=>={}", AGE_EDGES[b - 1]),
        b => format!("age={}-{}", AGE_EDGES[b - 1], AGE_EDGES[b] - 1),
    }
}

/// One cleaned Adult record.
#[derive(Debug, Clone, PartialEq)]
pub struct AdultRecord {
    pub age: u32,
    /// Indices into each categorical vocabulary, by field position.
    categories: [usize; 14],
    numeric: [f64; 14],
    pub income_over_50k: bool,
}

impl AdultRecord {
    pub fn is_female(&self) -> bool {
        self.categories[SEX] == 0
    }

    pub fn education(&self) -> &'static str {
        match &FIELDS[EDUCATION].1 {
            Field::Categorical(v) => v[self.categories[EDUCATION]],
            _ => unreachable!(),
        }
    }

    pub fn attr(&self, attr: PrivateAttr) -> u8 {
        u8::from(match attr {
            PrivateAttr::Gender => self.is_female(),
            PrivateAttr::Age => self.age > 35,
            PrivateAttr::Education => COLLEGE.contains(&self.education()),
        })
    }
}

/// Parses an Adult file, dropping rows with a missing field. Blank lines and
/// the `|` header of the test file are skipped.
pub fn parse_adult(path: &Path) -> Result<Vec<AdultRecord>> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    parse_adult_str(&text, path)
}

fn parse_adult_str(text: &str, path: &Path) -> Result<Vec<AdultRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('|') {
            continue;
        }
        let err = |msg: String| DataError::Parse { path: path.to_path_buf(), line: i + 1, msg };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 15 {
            return Err(err(format!("expected 15 fields, found {}", fields.len())));
        }
        if fields.contains(&"?") {
            continue;
        }
        let mut categories = [0usize; 14];
        let mut numeric = [0f64; 14];
        let mut age = 0;
        for (j, ((name, kind), raw)) in FIELDS.iter().zip(&fields).enumerate() {
            match kind {
                Field::Categorical(vocab) => {
                    categories[j] = vocab
                        .iter()
                        .position(|v| v == raw)
                        .ok_or_else(|| err(format!("unknown {name} value {raw:?}")))?;
                }
                Field::AgeBands => {
                    age = raw.parse().map_err(|_| err(format!("bad age {raw:?}")))?;
                }
                Field::Numeric => {
                    let v: f64 = raw.parse().map_err(|_| err(format!("bad {name} {raw:?}")))?;
                    if !v.is_finite() {
                        return Err(err(format!("non-finite {name}")));
                    }
                    numeric[j] = v;
                }
            }
        }
        let income_over_50k = match fields[14].trim_end_matches('.') {
            ">50K" => true,
            "<=50K" => false,
            other => return Err(err(format!("bad income label {other:?}"))),
        };
        out.push(AdultRecord { age, categories, numeric, income_over_50k });
    }
    Ok(out)
}

/// Column layout and numeric ranges fitted on the training rows.
struct Encoder {
    drop: usize,
    ranges: HashMap<usize, (f64, f64)>,
}

impl Encoder {
    fn fit(drop: usize, train: &[&AdultRecord]) -> Self {
        let mut ranges = HashMap::new();
        for (j, (_, kind)) in FIELDS.iter().enumerate() {
            if matches!(kind, Field::Numeric) && j != drop {
                let lo = train.iter().map(|r| r.numeric[j]).fold(f64::INFINITY, f64::min);
                let hi = train.iter().map(|r| r.numeric[j]).fold(f64::NEG_INFINITY, f64::max);
                ranges.insert(j, (lo, hi));
            }
        }
        Self { drop, ranges }
    }

    fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (j, (name, kind)) in FIELDS.iter().enumerate() {
            if j == self.drop {
                continue;
            }
            match kind {
                Field::Categorical(vocab) => names.extend(vocab.iter().map(|v| format!("{name}={v}"))),
                Field::AgeBands => names.extend((0..=AGE_EDGES.len()).map(age_band_name)),
                Field::Numeric => names.push((*name).to_string()),
            }
        }
        names
    }

    fn encode_into(&self, r: &AdultRecord, row: &mut [f64]) {
        let mut c = 0;
        for (j, (_, kind)) in FIELDS.iter().enumerate() {
            if j == self.drop {
                continue;
            }
            match kind {
                Field::Categorical(vocab) => {
                    row[c + r.categories[j]] = 1.0;
                    c += vocab.len();
                }
                Field::AgeBands => {
                    row[c + age_band(r.age)] = 1.0;
                    c += AGE_EDGES.len() + 1;
                }
                Field::Numeric => {
                    let (lo, hi) = self.ranges[&j];
                    row[c] = if hi > lo { ((r.numeric[j] - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
                    c += 1;
                }
            }
        }
    }

    fn encode<T: Scalar>(&self, rows: &[&AdultRecord], attr: PrivateAttr, width: usize) -> Split<T> {
        let mut data = vec![0.0; rows.len() * width];
        for (r, chunk) in rows.iter().zip(data.chunks_mut(width)) {
            self.encode_into(r, chunk);
        }
        let x = Mat::new(rows.len(), width, data).expect("encoded values are finite").cast();
        Split {
            x,
            y: rows.iter().map(|r| u8::from(r.income_over_50k)).collect(),
            attrs: vec![rows.iter().map(|r| r.attr(attr)).collect()],
        }
    }
}

/// Loads, cleans, splits and encodes Adult for one private attribute.
pub fn load_adult<T: Scalar>(cfg: &AdultConfig) -> Result<SplitDataset<T>> {
    let train_file = parse_adult(&cfg.train_path)?;
    let test_file = parse_adult(&cfg.test_path)?;
    if train_file.len() != ADULT_TRAIN + ADULT_VAL {
        return Err(DataError::Size {
            what: "cleaned training file",
            expected: ADULT_TRAIN + ADULT_VAL,
            got: train_file.len(),
        });
    }
    if test_file.len() != ADULT_TEST {
        return Err(DataError::Size { what: "cleaned test file", expected: ADULT_TEST, got: test_file.len() });
    }
    encode_adult(&train_file, &test_file, cfg.private_attr, cfg.seed)
}

/// Splits and encodes already parsed records; the split sizes follow the
/// 24130/6032 ratio when the file is not the full Adult training file.
pub fn encode_adult<T: Scalar>(
    train_file: &[AdultRecord],
    test_file: &[AdultRecord],
    attr: PrivateAttr,
    seed: u64,
) -> Result<SplitDataset<T>> {
    let mut order: Vec<usize> = (0..train_file.len()).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let n_train = if train_file.len() == ADULT_TRAIN + ADULT_VAL {
        ADULT_TRAIN
    } else {
        train_file.len() * ADULT_TRAIN / (ADULT_TRAIN + ADULT_VAL)
    };
    let (tr, va) = order.split_at(n_train);
    let train_rows: Vec<&AdultRecord> = tr.iter().map(|&i| &train_file[i]).collect();
    let val_rows: Vec<&AdultRecord> = va.iter().map(|&i| &train_file[i]).collect();
    let test_rows: Vec<&AdultRecord> = test_file.iter().collect();

    let enc = Encoder::fit(attr.source_field(), &train_rows);
    let feature_names = enc.names();
    if feature_names.len() != attr.expected_dim() {
        return Err(DataError::Dim { expected: attr.expected_dim(), got: feature_names.len() });
    }
    let width = feature_names.len();
    Ok(SplitDataset {
        name: format!("adult-{}", attr.name()),
        feature_names,
        train: enc.encode(&train_rows, attr, width),
        val: enc.encode(&val_rows, attr, width),
        test: enc.encode(&test_rows, attr, width),
    })
}

/// A distribution over `(X, Y, A_1..A_K)` with `X` in `0..x_card`.
///
/// `probs` is indexed by `(x * 2 + y) * 2^K + bits`, where bit `k` of `bits`
/// (most significant first) is `A_{k+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub x_card: usize,
    pub num_attrs: usize,
    pub probs: Vec<f64>,
}

impl JointSpec {
    pub fn new(x_card: usize, num_attrs: usize, probs: Vec<f64>) -> Result<Self> {
        let spec = Self { x_card, num_attrs, probs };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds the table from a mass function `p(x, y, attrs)`.
    pub fn from_fn(x_card: usize, num_attrs: usize, p: impl Fn(usize, u8, &[u8]) -> f64) -> Result<Self> {
        let mut probs = Vec::with_capacity(x_card * 2 << num_attrs);
        for x in 0..x_card {
            for y in 0..2u8 {
                for bits in 0..1usize << num_attrs {
                    probs.push(p(x, y, &Self::bits_to_attrs(bits, num_attrs)));
                }
            }
        }
        Self::new(x_card, num_attrs, probs)
    }

    fn bits_to_attrs(bits: usize, k: usize) -> Vec<u8> {
        (0..k).map(|i| ((bits >> (k - 1 - i)) & 1) as u8).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_card == 0 || self.num_attrs == 0 {
            return Err(DataError::InvalidJoint("need at least one X value and one attribute".into()));
        }
        let want = (self.x_card * 2) << self.num_attrs;
        if self.probs.len() != want {
            return Err(DataError::InvalidJoint(format!("{} cells, expected {want}", self.probs.len())));
        }
        if self.probs.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(DataError::InvalidJoint("negative or non-finite mass".into()));
        }
        let mass: f64 = self.probs.iter().sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(DataError::InvalidJoint(format!("total mass {mass}")));
        }
        Ok(())
    }

    /// Decodes a flat cell index into `(x, y, attrs)`.
    pub fn cell(&self, idx: usize) -> (usize, u8, Vec<u8>) {
        let per_xy = 1usize << self.num_attrs;
        let bits = idx % per_xy;
        let xy = idx / per_xy;
        (xy / 2, (xy % 2) as u8, Self::bits_to_attrs(bits, self.num_attrs))
    }

    /// Exact `[(A=0,Y=0), (A=0,Y=1), (A=1,Y=0), (A=1,Y=1)]` masses for attribute `k`.
    pub fn ay_table(&self, k: usize) -> [f64; 4] {
        let mut t = [0.0; 4];
        for (idx, &p) in self.probs.iter().enumerate() {
            let (_, y, a) = self.cell(idx);
            t[usize::from(a[k]) * 2 + usize::from(y)] += p;
        }
        t
    }

    /// Exact JS divergence (bits) between `Y | A_k = 0` and `Y | A_k = 1`.
    pub fn djs_y(&self, k: usize) -> Result<f64> {
        let t = self.ay_table(k);
        let cond = |p0: f64, p1: f64| {
            if p0 + p1 <= 0.0 {
                return Err(DataError::InvalidJoint(format!("attribute {k} takes a single value")));
            }
            Ok(Dist::<f64>::bernoulli(p1 / (p0 + p1)).expect("ratio is a probability"))
        };
        Ok(js_divergence(&cond(t[0], t[1])?, &cond(t[2], t[3])?).expect("two bernoullis"))
    }

    /// Mass of `A_k = 1`.
    pub fn attr_rate(&self, k: usize) -> f64 {
        let t = self.ay_table(k);
        t[2] + t[3]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    /// `n` training rows, a quarter as many validation and half as many test rows.
    pub fn from_train(n: usize) -> Self {
        Self { train: n, val: n.div_ceil(4), test: n.div_ceil(2) }
    }
}

/// I.i.d. samples from `spec`, `X` one-hot encoded.
pub fn synth_joint<T: Scalar>(spec: &JointSpec, sizes: SplitSizes, seed: u64) -> Result<SplitDataset<T>> {
    spec.validate()?;
    let dist = WeightedIndex::new(&spec.probs).map_err(|e| DataError::InvalidJoint(e.to_string()))?;
    let mut rng = rng_from_seed(seed);
    let mut draw = |n: usize| {
        let mut x = Mat::zeros(n, spec.x_card);
        let mut y = Vec::with_capacity(n);
        let mut attrs = vec![Vec::with_capacity(n); spec.num_attrs];
        for i in 0..n {
            let (xv, yv, a) = spec.cell(dist.sample(&mut rng));
            x[(i, xv)] = T::one();
            y.push(yv);
            for (col, v) in attrs.iter_mut().zip(a) {
                col.push(v);
            }
        }
        Split { x, y, attrs }
    };
    let train = draw(sizes.train);
    let val = draw(sizes.val);
    let test = draw(sizes.test);
    Ok(SplitDataset {
        name: "synthetic".into(),
        feature_names: (0..spec.x_card).map(|v| format!("x={v}")).collect(),
        train,
        val,
        test,
    })
}

/// Continuous instance where each private attribute is a threshold of its own
/// input coordinate.
///
/// `Y ~ Bernoulli(1/2)`, `x_0 = 2Y - 1 + U(-noise, noise)`, and for each
/// attribute `x_k ~ U(-1, 1)`, `A_k = 1[x_k > thresholds[k]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeakySpec {
    pub thresholds: Vec<f64>,
    pub target_noise: f64,
}

impl LeakySpec {
    /// `P(A_k = 1)`.
    pub fn attr_rate(&self, k: usize) -> f64 {
        (1.0 - self.thresholds[k].clamp(-1.0, 1.0)) / 2.0
    }
}

pub fn synth_leaky<T: Scalar>(spec: &LeakySpec, sizes: SplitSizes, seed: u64) -> Result<SplitDataset<T>> {
    if spec.thresholds.is_empty() {
        return Err(DataError::InvalidJoint("need at least one attribute".into()));
    }
    if !(spec.target_noise >= 0.0 && spec.target_noise.is_finite()) {
        return Err(DataError::InvalidJoint(format!("bad target noise {}", spec.target_noise)));
    }
    let k = spec.thresholds.len();
    let mut rng = rng_from_seed(seed);
    let mut draw = |n: usize| {
        let mut x = Mat::zeros(n, 1 + k);
        let mut y = Vec::with_capacity(n);
        let mut attrs = vec![Vec::with_capacity(n); k];
        for i in 0..n {
            let yy: u8 = rng.gen_range(0..2);
            let jitter = if spec.target_noise > 0.0 { rng.gen_range(-spec.target_noise..spec.target_noise) } else { 0.0 };
            x[(i, 0)] = T::of(2.0 * f64::from(yy) - 1.0 + jitter);
            for (j, col) in attrs.iter_mut().enumerate() {
                let v: f64 = rng.gen_range(-1.0..1.0);
                x[(i, 1 + j)] = T::of(v);
                col.push(u8::from(v > spec.thresholds[j]));
            }
            y.push(yy);
        }
        Split { x, y, attrs }
    };
    let train = draw(sizes.train);
    let val = draw(sizes.val);
    let test = draw(sizes.test);
    let mut feature_names = vec!["x_y".to_string()];
    feature_names.extend((1..=k).map(|j| format!("x_a{j}")));
    Ok(SplitDataset { name: "synthetic-leaky".into(), feature_names, train, val, test })
}

pub const CACHE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct DatasetCache<T> {
    pub format_version: u32,
    pub scalar: String,
    /// SHA-256 over the configuration and the raw input files.
    pub config_hash: String,
    pub dataset: SplitDataset<T>,
}

/// Key identifying an Adult configuration together with its input bytes.
pub fn adult_config_hash(cfg: &AdultConfig) -> Result<String> {
    let mut h = Sha256::new();
    h.update(format!("v{CACHE_FORMAT_VERSION};attr={};seed={};", cfg.private_attr.name(), cfg.seed));
    for p in [&cfg.train_path, &cfg.test_path] {
        let bytes = fs::read(p).map_err(|source| DataError::Io { path: p.clone(), source })?;
        h.update(Sha256::digest(&bytes));
    }
    Ok(hex::encode(h.finalize()))
}

pub fn write_cache<T: Scalar>(path: &Path, config_hash: &str, ds: &SplitDataset<T>) -> Result<()> {
    let cache = DatasetCache {
        format_version: CACHE_FORMAT_VERSION,
        scalar: T::NAME.into(),
        config_hash: config_hash.into(),
        dataset: ds.clone(),
    };
    let bytes = serde_json::to_vec(&cache).map_err(|e| DataError::Cache(e.to_string()))?;
    crate::io::write_atomic(path, &bytes).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

/// Reads a cache file; `Ok(None)` when it belongs to another configuration,
/// version or scalar type.
pub fn read_cache<T: Scalar>(path: &Path, config_hash: &str) -> Result<Option<SplitDataset<T>>> {
    let bytes = fs::read(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    let cache: DatasetCache<T> = serde_json::from_slice(&bytes).map_err(|e| DataError::Cache(e.to_string()))?;
    let fresh = cache.format_version == CACHE_FORMAT_VERSION && cache.scalar == T::NAME && cache.config_hash == config_hash;
    Ok(fresh.then_some(cache.dataset))
}

/// Cache file for `cfg` under `dir`, and the configuration hash it is keyed by.
pub fn adult_cache_path<T: Scalar>(cfg: &AdultConfig, dir: &Path) -> Result<(PathBuf, String)> {
    let hash = adult_config_hash(cfg)?;
    Ok((dir.join(format!("adult-{}-{}-{}.json", cfg.private_attr.name(), T::NAME, &hash[..16])), hash))
}

/// Loads Adult through a cache directory, writing the cache on a miss.
pub fn load_adult_cached<T: Scalar>(cfg: &AdultConfig, cache_dir: Option<&Path>) -> Result<SplitDataset<T>> {
    let Some(dir) = cache_dir else { return load_adult(cfg) };
    let (path, hash) = adult_cache_path::<T>(cfg, dir)?;
    if path.exists() {
        if let Some(ds) = read_cache(&path, &hash)? {
            return Ok(ds);
        }
    }
    let ds = load_adult(cfg)?;
    fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?;
    write_cache(&path, &hash, &ds)?;
    Ok(ds)
}
