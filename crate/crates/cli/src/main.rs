//! `veilkit`: prepare Adult, train defenses, attack released features,
//! certify, and run the reproduction suites.

mod oracle;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use veilkit::data::{adult_cache_path, load_adult_cached, AdultConfig, JointSpec, PrivateAttr, SplitDataset};
use veilkit::defenses::FeatureMap;
use veilkit::harness::{
    certify, default_pool, derive_seed, emit, emit_summary_csv, release, run_attack, run_on, run_on_with_maps, AttackReport,
    DatasetSpec, ExperimentConfig, Format, HarnessError, ModelSpec, RunReport,
};
use veilkit::infotheory::PrivacyCertificate;
use veilkit::io::{sha256_hex, write_atomic};
use veilkit::suite::Suite;

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const CACHE_ENV: &str = "VEILKIT_CACHE_DIR";

#[derive(Parser)]
#[command(name = "veilkit", version, about = "Attribute-privacy defenses, attacks and certificates")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    global: Global,
}

#[derive(Args)]
struct Global {
    /// JSON configuration file; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed; overrides the seeds in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repetitions to run at once.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true, default_value = "json")]
    format: Format,
    /// Log progress to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Cmd {
    /// Encode and cache Adult, then print its (Y, A) count table.
    Prepare {
        /// Directory with adult.data and adult.test.
        #[arg(long, default_value = "data/adult")]
        data_dir: PathBuf,
        /// gender, age or education.
        #[arg(long)]
        attr: PrivateAttr,
    },
    /// Fit a defense for every seed and write the feature maps and the report.
    Train,
    /// Train the attacker pool on features released by a saved map.
    Attack {
        #[arg(long)]
        featuremap: PathBuf,
    },
    /// Certificate for a conditional entropy, or re-derived from a report.
    Certify {
        /// H(A|Z) in bits.
        #[arg(long, conflicts_with = "report")]
        h_star: Option<f64>,
        /// A run report from `train` or an attack report from `attack`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run every defense of a suite, or a JSON list of experiment configs
    /// given with --config, and write a report bundle.
    Reproduce {
        #[arg(long, required_unless_present = "config")]
        suite: Option<Suite>,
        #[arg(long, default_value = "data/adult")]
        data_dir: PathBuf,
    },
    /// Exact quantities of a synthetic joint distribution.
    SynthOracle,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    msg: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, msg: msg.into() }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        Self { code: if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_USAGE }, msg: e.to_string() }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// What `attack` needs besides the feature map.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttackConfig {
    dataset: DatasetSpec,
    #[serde(default = "default_pool")]
    pool: Vec<ModelSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AttackFile {
    featuremap_sha256: String,
    seed: u64,
    dataset: String,
    attributes: Vec<AttackedAttribute>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AttackedAttribute {
    attack: AttackReport,
    certificate: PrivacyCertificate,
    certificate_consistent: bool,
}

#[derive(Debug, Serialize)]
struct Failure {
    config: String,
    exit_code: u8,
    error: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if g.jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    match &cli.cmd {
        Cmd::Prepare { data_dir, attr } => prepare(g, data_dir, *attr),
        Cmd::Train => train(g),
        Cmd::Attack { featuremap } => attack(g, featuremap),
        Cmd::Certify { h_star, report } => certify_cmd(g, *h_star, report.as_deref()),
        Cmd::Reproduce { suite, data_dir } => reproduce(g, *suite, data_dir),
        Cmd::SynthOracle => synth_oracle(g),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn require_config(g: &Global) -> Result<&Path> {
    g.config.as_deref().ok_or_else(|| CliError::usage("--config is required"))
}

fn only_json(g: &Global, what: &str) -> Result<()> {
    match g.format {
        Format::Json => Ok(()),
        Format::Csv => Err(CliError::usage(format!("{what} only writes json"))),
    }
}

fn out_dir(g: &Global) -> Result<PathBuf> {
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(|e| CliError::usage(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("reports serialize");
    bytes.push(b'\n');
    bytes
}

fn prepare(g: &Global, data_dir: &Path, attr: PrivateAttr) -> Result<()> {
    only_json(g, "prepare")?;
    let dir = g.out.clone().or_else(cache_dir).unwrap_or_else(|| PathBuf::from(".veilkit-cache"));
    let cfg = AdultConfig::in_dir(data_dir, attr);
    let ds: SplitDataset<f64> = load_adult_cached(&cfg, Some(&dir)).map_err(|e| CliError::usage(e.to_string()))?;
    let (path, hash) = adult_cache_path::<f64>(&cfg, &dir).map_err(|e| CliError::usage(e.to_string()))?;
    let bytes = fs::read(&path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let c = ds.joint_counts(0);
    println!("{}: train {} / val {} / test {}, {} features", ds.name, ds.train.len(), ds.val.len(), ds.test.len(), ds.feature_names.len());
    println!("{:>8} {:>8} {:>8}", "", "Y=0", "Y=1");
    println!("{:>8} {:>8} {:>8}", "A=0", c[0], c[1]);
    println!("{:>8} {:>8} {:>8}", "A=1", c[2], c[3]);
    println!("config {hash}");
    println!("cache {} sha256 {}", path.display(), sha256_hex(&bytes));
    Ok(())
}

fn load(spec: &DatasetSpec) -> Result<SplitDataset<f64>> {
    Ok(spec.load(cache_dir().as_deref())?)
}

fn train(g: &Global) -> Result<()> {
    let mut cfg: ExperimentConfig = read_json(require_config(g)?)?;
    if let Some(s) = g.seed {
        cfg.seeds = (s..s + cfg.repetitions as u64).collect();
    }
    cfg.validate()?;
    let out = out_dir(g)?;
    let ds = load(&cfg.dataset)?;
    info!("{} on {}, seeds {:?}", cfg.defense.method().name(), ds.name, cfg.seeds);
    let (report, maps) = run_on_with_maps(&cfg, &ds, g.jobs)?;
    for (seed, map) in cfg.seeds.iter().zip(&maps) {
        write(&out.join(format!("featuremap-seed{seed}.json")), &to_json(map))?;
    }
    let name = match g.format {
        Format::Json => "report.json",
        Format::Csv => "report.csv",
    };
    write(&out.join(name), &emit(&report, g.format)?)?;
    for a in &report.summary.attributes {
        println!(
            "{} {}: utility {:.4}, min FNR+FPR {:.4}, bound {:.4}, certificate {}",
            report.method.name(),
            a.attribute,
            report.summary.utility.mean,
            a.min_fnr_fpr.mean,
            a.bound.mean,
            if a.certificate_consistent { "consistent" } else { "VIOLATED" }
        );
    }
    Ok(())
}

fn attack(g: &Global, featuremap: &Path) -> Result<()> {
    only_json(g, "attack")?;
    let cfg: AttackConfig = read_json(require_config(g)?)?;
    if cfg.pool.is_empty() {
        return Err(CliError::usage("attacker pool is empty"));
    }
    let bytes = fs::read(featuremap).map_err(|e| CliError::usage(format!("{}: {e}", featuremap.display())))?;
    let map: FeatureMap<f64> =
        serde_json::from_slice(&bytes).map_err(|e| CliError::usage(format!("{}: {e}", featuremap.display())))?;
    let ds = load(&cfg.dataset)?;
    if map.in_dim != ds.input_dim() {
        return Err(CliError::usage(format!("feature map expects {} inputs, {} has {}", map.in_dim, ds.name, ds.input_dim())));
    }
    let seed = g.seed.unwrap_or(map.provenance.seed);
    let z = release(&map, &ds, seed).map_err(|e| CliError::usage(e.to_string()))?;
    let names = cfg.dataset.attr_names();
    let mut attributes = Vec::with_capacity(names.len());
    for (k, name) in names.iter().enumerate() {
        let report = run_attack(&cfg.pool, &z.train, &ds.train.attrs[k], &z.test, &ds.test.attrs[k], name, derive_seed(seed, k as u64))?;
        let cert = certify(&report).map_err(|e| CliError::usage(e.to_string()))?;
        let consistent = report.min_error() >= cert.bound - veilkit::harness::DEFAULT_SLACK;
        print_certificate(name, &cert, report.min_error(), consistent);
        attributes.push(AttackedAttribute { attack: report, certificate: cert, certificate_consistent: consistent });
    }
    let file = AttackFile { featuremap_sha256: sha256_hex(&bytes), seed, dataset: ds.name.clone(), attributes };
    write(&out_dir(g)?.join("attack.json"), &to_json(&file))
}

fn print_certificate(attr: &str, c: &PrivacyCertificate, min_error: f64, consistent: bool) {
    println!(
        "certificate {attr}: H* = {:.4} bits, every attacker errs >= {:.4}; observed min error {:.4} ({})",
        c.h_star,
        c.bound,
        min_error,
        if consistent { "consistent" } else { "VIOLATED" }
    );
}

fn certify_cmd(g: &Global, h_star: Option<f64>, report: Option<&Path>) -> Result<()> {
    only_json(g, "certify")?;
    let certs: Vec<PrivacyCertificate> = match (h_star, report) {
        (Some(h), None) => vec![veilkit::infotheory::certificate(h).map_err(|e| CliError::usage(e.to_string()))?],
        (None, Some(path)) => {
            let bytes = fs::read(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            let attacks: Vec<AttackReport> = if let Ok(run) = veilkit::harness::parse_report(&bytes) {
                run.repetitions.into_iter().flat_map(|r| r.attributes.into_iter().map(|a| a.attack)).collect()
            } else {
                let file: AttackFile = serde_json::from_slice(&bytes)
                    .map_err(|e| CliError::usage(format!("{}: neither a run nor an attack report: {e}", path.display())))?;
                file.attributes.into_iter().map(|a| a.attack).collect()
            };
            let mut out = Vec::with_capacity(attacks.len());
            for a in &attacks {
                let c = certify(a).map_err(|e| CliError::usage(e.to_string()))?;
                print_certificate(&a.attribute, &c, a.min_error(), a.min_error() >= c.bound - veilkit::harness::DEFAULT_SLACK);
                out.push(c);
            }
            out
        }
        _ => return Err(CliError::usage("give exactly one of --h-star or --report")),
    };
    if let Some(dir) = &g.out {
        fs::create_dir_all(dir).map_err(|e| CliError::usage(format!("{}: {e}", dir.display())))?;
        write(&dir.join("certificate.json"), &to_json(&certs))?;
    } else if report.is_none() {
        print!("{}", String::from_utf8(to_json(&certs[0])).expect("json is utf-8"));
    }
    Ok(())
}

fn config_label(cfg: &ExperimentConfig) -> String {
    let m = cfg.defense.method().name();
    match cfg.defense.tradeoff() {
        Some(t) => format!("{m}-{t}"),
        None => m.to_string(),
    }
}

fn reproduce(g: &Global, suite: Option<Suite>, data_dir: &Path) -> Result<()> {
    let (out, cfgs) = match (suite, &g.config) {
        (Some(suite), None) => (out_dir(g)?.join(suite.name()), suite.configs(data_dir, g.seed.unwrap_or(0))),
        (None, Some(path)) => {
            let mut cfgs: Vec<ExperimentConfig> = read_json(path)?;
            if let Some(s) = g.seed {
                for c in &mut cfgs {
                    c.seeds = (s..s + c.repetitions as u64).collect();
                }
            }
            (out_dir(g)?, cfgs)
        }
        _ => return Err(CliError::usage("give exactly one of --suite or --config")),
    };
    if cfgs.is_empty() {
        return Err(CliError::usage("no experiments to run"));
    }
    fs::create_dir_all(&out).map_err(|e| CliError::usage(format!("{}: {e}", out.display())))?;
    let mut loaded: Vec<(DatasetSpec, SplitDataset<f64>)> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let mut reports: Vec<RunReport> = Vec::new();
    let mut failures = Vec::new();
    for cfg in &cfgs {
        let base = config_label(cfg);
        let dup = labels.iter().filter(|l| **l == base).count();
        let label = if dup > 0 { format!("{base}-{}", dup + 1) } else { base.clone() };
        labels.push(base);
        info!("{label}");
        if !loaded.iter().any(|(spec, _)| spec == &cfg.dataset) {
            loaded.push((cfg.dataset.clone(), load(&cfg.dataset)?));
        }
        let ds = &loaded.iter().find(|(spec, _)| spec == &cfg.dataset).expect("just loaded").1;
        match run_on(cfg, ds, g.jobs) {
            Ok(r) => {
                let ext = if g.format == Format::Json { "json" } else { "csv" };
                write(&out.join(format!("{label}.{ext}")), &emit(&r, g.format)?)?;
                println!("{label}: utility {:.4}, min FNR+FPR {:.4}", r.summary.utility.mean, r.summary.attributes[0].min_fnr_fpr.mean);
                reports.push(r);
            }
            Err(e) => {
                let e = CliError::from(e);
                eprintln!("{label} failed: {}", e.msg);
                failures.push(Failure { config: label, exit_code: e.code, error: e.msg });
            }
        }
    }
    if !reports.is_empty() {
        let mut runs = Vec::new();
        for (i, r) in reports.iter().enumerate() {
            let csv = emit(r, Format::Csv)?;
            // keep the header of the first report only
            let body = if i == 0 { &csv[..] } else { &csv[csv.iter().position(|&b| b == b'\n').map_or(0, |p| p + 1)..] };
            runs.extend_from_slice(body);
        }
        write(&out.join("runs.csv"), &runs)?;
        write(&out.join("summary.csv"), &emit_summary_csv(&reports)?)?;
    }
    if failures.is_empty() {
        return Ok(());
    }
    write(&out.join("failures.json"), &to_json(&failures))?;
    let code = failures.iter().map(|f| f.exit_code).max().unwrap_or(EXIT_USAGE);
    Err(CliError { code, msg: format!("{} of {} configurations failed", failures.len(), cfgs.len()) })
}

fn synth_oracle(g: &Global) -> Result<()> {
    only_json(g, "synth-oracle")?;
    let spec: JointSpec = read_json(require_config(g)?)?;
    let o = oracle::evaluate(&spec).map_err(CliError::usage)?;
    let bytes = to_json(&o);
    match &g.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| CliError::usage(format!("{}: {e}", dir.display())))?;
            write(&dir.join("oracle.json"), &bytes)
        }
        None => {
            print!("{}", String::from_utf8(bytes).expect("json is utf-8"));
            Ok(())
        }
    }
}
