//! `rba`: dataset generation, scoring, privacy sweeps and limit extraction.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 infeasible evaluation.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rba_privacy::attack::{load_blocklist, AttackError, AttackSampler, GeoMap};
use rba_privacy::codec::{CodecChain, FeatureKind, HashPolicy};
use rba_privacy::dataset::{self, DatasetError, DatasetProfile, World};
use rba_privacy::eval::{
    extract_sweep_limits, run_sweep, Enhancement, EvalConfig, EvalError, Replayer,
};
use rba_privacy::io::{self, DatasetFile, EncodingMeta, IoError};
use rba_privacy::model::{classify_value, score_values, Decision, RiskConfig, Smoothing};
use rba_privacy::store::{HistoryStore, KAnonymityPolicy, StoreConfig};
use rba_privacy::FeatureVector;

use config::{ConfigFile, Models, Steps};

#[derive(Parser, Debug)]
#[command(name = "rba", version, about = "Risk-based authentication with privacy enhancements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Seed for all random choices.
    #[arg(long)]
    seed: Option<u64>,
    /// `key = value` file; flags take precedence over its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CodecArgs {
    /// Hash every feature value with this salt.
    #[arg(long)]
    hash_salt: Option<String>,
    #[arg(long)]
    hash_iterations: Option<u32>,
    /// Cut user agent versions to their major component.
    #[arg(long)]
    coarse_ua: bool,
}

#[derive(Args, Debug)]
struct RiskArgs {
    /// `add-alpha` or `none`.
    #[arg(long)]
    smoothing: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    unseen_floor: Option<f64>,
    #[arg(long)]
    attack_prior: Option<f64>,
    #[arg(long)]
    legit_prior: Option<f64>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Raw (unencoded) dataset file.
    #[arg(long)]
    dataset: PathBuf,
    /// Attacker addresses, one IP or CIDR per line.
    #[arg(long)]
    blocklist: PathBuf,
    /// `cidr,region` CSV.
    #[arg(long)]
    geomap: PathBuf,
    #[arg(long)]
    target_tpr: Option<f64>,
    /// Attack attempts per victim login and attacker model.
    #[arg(long)]
    attempts: Option<usize>,
    /// Comma-separated subset of naive, vpn, targeted.
    #[arg(long)]
    models: Option<Models>,
    /// Larger blocklist ranges are sampled down to this many addresses.
    #[arg(long)]
    range_cap: Option<u64>,
    #[arg(long)]
    rsr_limit_delta: Option<f64>,
    #[command(flatten)]
    codec: CodecArgs,
    #[command(flatten)]
    risk: RiskArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic login dataset with matching blocklist and geo map.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        logins: Option<usize>,
        /// Share of users living in the home city.
        #[arg(long)]
        concentration: Option<f64>,
        /// Share of logins from random addresses worldwide.
        #[arg(long)]
        outlier_rate: Option<f64>,
        #[arg(long)]
        blocklist_size: Option<usize>,
        /// Defaults to `<out stem>.blocklist.txt`.
        #[arg(long)]
        blocklist: Option<PathBuf>,
        /// Defaults to `<out stem>.geomap.csv`.
        #[arg(long)]
        geomap: Option<PathBuf>,
    },
    /// Score one login attempt against the history of a dataset.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(long)]
        ip: String,
        #[arg(long)]
        user_agent: String,
        #[arg(long)]
        threshold: Option<f64>,
        /// Truncate IP addresses by this many bits.
        #[arg(long)]
        bits: Option<u32>,
        /// Pad the IP feature to k-anonymity while building the history.
        #[arg(long)]
        k: Option<u32>,
        #[command(flatten)]
        codec: CodecArgs,
        #[command(flatten)]
        risk: RiskArgs,
    },
    /// Sweep IP truncation widths.
    SweepTruncation {
        #[command(flatten)]
        sweep: SweepArgs,
        /// Steps such as `0..24` or `0,8,16`.
        #[arg(long)]
        bits: Option<Steps>,
    },
    /// Sweep k-anonymity levels of the IP feature.
    SweepK {
        #[command(flatten)]
        sweep: SweepArgs,
        /// Steps such as `1..6`.
        #[arg(long)]
        k: Option<Steps>,
    },
    /// Extract TPR, RSR and combined limits from a sweep result.
    Limits {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sweep: PathBuf,
        /// Tolerated relative RSR decrease; defaults to the sweep's own value.
        #[arg(long)]
        rsr_limit_delta: Option<f64>,
    },
    /// Write plot-ready relative TPR/RSR series of a sweep result.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sweep: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Infeasible(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Infeasible(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Infeasible(m) => m,
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<AttackError> for Failure {
    fn from(e: AttackError) -> Self {
        match e {
            AttackError::NoMaterial(_) => Failure::Infeasible(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        Failure::Infeasible(e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Attack(a) => a.into(),
            EvalError::EmptyScores | EvalError::DegenerateBaseline(_) => Failure::Infeasible(e.to_string()),
            EvalError::TargetTpr(_) | EvalError::MissingBaseline(_) | EvalError::Config(_) | EvalError::Model(_) => {
                Failure::Usage(e.to_string())
            }
            EvalError::Store(_) => Failure::Usage(e.to_string()),
            EvalError::Unordered(_) | EvalError::Codec(_) => Failure::Data(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

const COMMON_KEYS: [&str; 1] = ["seed"];
const CODEC_KEYS: [&str; 3] = ["hash-salt", "hash-iterations", "coarse-ua"];
const RISK_KEYS: [&str; 5] = ["smoothing", "alpha", "unseen-floor", "attack-prior", "legit-prior"];
const SWEEP_KEYS: [&str; 5] = ["target-tpr", "attempts", "models", "range-cap", "rsr-limit-delta"];

fn load_config(common: &Common, extra: &[&[&str]]) -> Result<ConfigFile, Failure> {
    let Some(path) = &common.config else {
        return Ok(ConfigFile::default());
    };
    let cfg = ConfigFile::load(path).map_err(Failure::Usage)?;
    let known: Vec<&str> = COMMON_KEYS.iter().chain(extra.iter().flat_map(|k| k.iter())).copied().collect();
    cfg.check_keys(&known).map_err(Failure::Usage)?;
    Ok(cfg)
}

fn seed_of(common: &Common, cfg: &ConfigFile) -> Result<u64, Failure> {
    cfg.pick_or(common.seed, "seed", 0).map_err(Failure::Usage)
}

fn risk_config(args: &RiskArgs, cfg: &ConfigFile) -> Result<RiskConfig, Failure> {
    let d = RiskConfig::default();
    let usage = Failure::Usage;
    let alpha = cfg.pick_or(args.alpha, "alpha", 1.0).map_err(usage)?;
    let smoothing = match cfg
        .pick_or(args.smoothing.clone(), "smoothing", "add-alpha".to_string())
        .map_err(usage)?
        .as_str()
    {
        "add-alpha" => Smoothing::AddAlpha(alpha),
        "none" => Smoothing::None,
        other => return Err(Failure::Usage(format!("unknown smoothing `{other}`"))),
    };
    let risk = RiskConfig {
        attack_prior: cfg.pick_or(args.attack_prior, "attack-prior", d.attack_prior).map_err(usage)?,
        legit_prior: cfg.pick_or(args.legit_prior, "legit-prior", d.legit_prior).map_err(usage)?,
        smoothing,
        unseen_floor: cfg.pick_or(args.unseen_floor, "unseen-floor", d.unseen_floor).map_err(usage)?,
    };
    risk.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(risk)
}

fn hash_policy(args: &CodecArgs, cfg: &ConfigFile) -> Result<Option<HashPolicy>, Failure> {
    let salt: Option<String> = cfg.pick(args.hash_salt.clone(), "hash-salt").map_err(Failure::Usage)?;
    let iterations = cfg.pick_or(args.hash_iterations, "hash-iterations", 1).map_err(Failure::Usage)?;
    salt.map(|s| HashPolicy::new(s.into_bytes(), iterations).map_err(|e| Failure::Usage(e.to_string())))
        .transpose()
}

fn coarse_ua(args: &CodecArgs, cfg: &ConfigFile) -> Result<bool, Failure> {
    Ok(args.coarse_ua || cfg.pick_or(None, "coarse-ua", false).map_err(Failure::Usage)?)
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    out.with_file_name(format!("{stem}{suffix}"))
}

fn write_text(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

#[allow(clippy::too_many_arguments)]
fn generate(
    common: &Common,
    users: Option<usize>,
    logins: Option<usize>,
    concentration: Option<f64>,
    outlier_rate: Option<f64>,
    blocklist_size: Option<usize>,
    blocklist: Option<PathBuf>,
    geomap: Option<PathBuf>,
) -> Outcome {
    let cfg = load_config(
        common,
        &[&["users", "logins", "concentration", "outlier-rate", "blocklist-size"]],
    )?;
    let seed = seed_of(common, &cfg)?;
    let d = DatasetProfile::default();
    let usage = Failure::Usage;
    let profile = DatasetProfile {
        n_users: cfg.pick_or(users, "users", d.n_users).map_err(usage)?,
        total_logins: cfg.pick_or(logins, "logins", d.total_logins).map_err(usage)?,
        region_concentration: cfg.pick_or(concentration, "concentration", d.region_concentration).map_err(usage)?,
        outlier_rate: cfg.pick_or(outlier_rate, "outlier-rate", d.outlier_rate).map_err(usage)?,
        seed,
        ..d
    };
    let blocklist_size = cfg.pick_or(blocklist_size, "blocklist-size", 2000).map_err(usage)?;
    let world = World::generate(seed);
    eprintln!("rba: generating {} logins for {} users", profile.total_logins, profile.n_users);
    let events = dataset::generate(&profile, &world)?;
    let file = DatasetFile {
        schema: dataset::schema(),
        encoding: EncodingMeta::default(),
        events,
    };
    io::write_dataset(&common.out, &file)?;
    let blocklist = blocklist.unwrap_or_else(|| sibling(&common.out, ".blocklist.txt"));
    let geomap = geomap.unwrap_or_else(|| sibling(&common.out, ".geomap.csv"));
    write_text(&blocklist, &world.synthetic_blocklist(blocklist_size, seed))?;
    write_text(&geomap, &world.geomap().to_csv())?;
    eprintln!(
        "rba: wrote {}, {}, {}",
        common.out.display(),
        blocklist.display(),
        geomap.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn score(
    common: &Common,
    dataset_path: &Path,
    user: &str,
    ip: &str,
    user_agent: &str,
    threshold: Option<f64>,
    bits: Option<u32>,
    k: Option<u32>,
    codec_args: &CodecArgs,
    risk_args: &RiskArgs,
) -> Outcome {
    let cfg = load_config(common, &[&CODEC_KEYS, &RISK_KEYS, &["threshold", "bits", "k"]])?;
    let risk = risk_config(risk_args, &cfg)?;
    let seed = seed_of(common, &cfg)?;
    let usage = Failure::Usage;
    let threshold: Option<f64> = cfg.pick(threshold, "threshold").map_err(usage)?;
    let codec = CodecChain {
        truncation_bits: cfg.pick_or(bits, "bits", 0).map_err(Failure::Usage)?,
        coarse_user_agent: coarse_ua(codec_args, &cfg)?,
        hash: hash_policy(codec_args, &cfg)?,
    };
    let k: Option<u32> = cfg.pick(k, "k").map_err(Failure::Usage)?;

    let file = io::read_dataset(dataset_path)?;
    if file.encoding != EncodingMeta::default() && !codec.is_identity() {
        return Err(Failure::Usage(
            "dataset is already encoded; codec flags only apply to raw datasets".into(),
        ));
    }
    let kinds: Vec<FeatureKind> = file.schema.ids().iter().map(|id| FeatureKind::of(id)).collect();
    let encode = |values: &[String]| -> Result<FeatureVector, Failure> {
        let tokens = values
            .iter()
            .zip(&kinds)
            .map(|(v, kind)| codec.encode(*kind, v))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Failure::Data(e.to_string()))?;
        FeatureVector::new(tokens).map_err(|e| Failure::Data(e.to_string()))
    };
    let store_config = StoreConfig {
        k_anonymity: k
            .map(KAnonymityPolicy::ip)
            .transpose()
            .map_err(|e| Failure::Usage(e.to_string()))?,
        seed,
        ..StoreConfig::default()
    };
    let mut store =
        HistoryStore::new(file.schema.clone(), store_config).map_err(|e| Failure::Usage(e.to_string()))?;
    for e in &file.events {
        store
            .record_login(&e.user, &encode(e.features.values())?, e.timestamp)
            .map_err(|e| Failure::Data(e.to_string()))?;
    }

    let mut raw = vec![String::new(); file.schema.len()];
    for (slot, id) in raw.iter_mut().zip(file.schema.ids()) {
        *slot = match FeatureKind::of(id) {
            FeatureKind::Ip => ip.to_string(),
            FeatureKind::UserAgent => user_agent.to_string(),
            FeatureKind::Other => {
                return Err(Failure::Data(format!("no flag supplies feature `{id}`")));
            }
        };
    }
    let query = encode(&raw)?;
    let values: Vec<&str> = query.values().iter().map(String::as_str).collect();
    let result = score_values(&store, &risk, user, &values);
    let ratios: serde_json::Map<String, serde_json::Value> = file
        .schema
        .ids()
        .iter()
        .cloned()
        .zip(result.per_feature_ratios.iter().map(|r| serde_json::json!(r)))
        .collect();
    let mut report = serde_json::json!({
        "user": user,
        "known_user": store.has_history(user),
        "score": result.value,
        "per_feature_ratios": ratios,
    });
    if let Some(t) = threshold {
        let decision = match classify_value(result.value, t) {
            Decision::Grant => "grant",
            Decision::Challenge => "challenge",
        };
        report["threshold"] = serde_json::json!(t);
        report["decision"] = serde_json::json!(decision);
    }
    let text = serde_json::to_string_pretty(&report).expect("serializable report");
    write_text(&common.out, &(text + "\n"))
}

fn sweep(args: &SweepArgs, enhancement_of: impl FnOnce(&ConfigFile) -> Result<Enhancement, Failure>, step_key: &str) -> Outcome {
    let common = &args.common;
    let cfg = load_config(common, &[&CODEC_KEYS, &RISK_KEYS, &SWEEP_KEYS, &[step_key]])?;
    let enhancement = enhancement_of(&cfg)?;
    let d = EvalConfig::default();
    let usage = Failure::Usage;
    let config = EvalConfig {
        target_tpr: cfg.pick_or(args.target_tpr, "target-tpr", d.target_tpr).map_err(usage)?,
        attacker_models: cfg
            .pick(args.models.clone(), "models")
            .map_err(usage)?
            .map_or(d.attacker_models.clone(), |m| m.0),
        attempts_per_victim: cfg.pick_or(args.attempts, "attempts", d.attempts_per_victim).map_err(usage)?,
        rsr_limit_delta: cfg.pick_or(args.rsr_limit_delta, "rsr-limit-delta", d.rsr_limit_delta).map_err(usage)?,
        seed: seed_of(common, &cfg)?,
        risk: risk_config(&args.risk, &cfg)?,
        hash: hash_policy(&args.codec, &cfg)?,
        coarse_user_agent: coarse_ua(&args.codec, &cfg)?,
        ..d
    };
    config.validate()?;
    let range_cap = cfg.pick_or(args.range_cap, "range-cap", 256).map_err(Failure::Usage)?;

    let file = io::read_dataset(&args.dataset)?;
    if file.encoding != EncodingMeta::default() {
        return Err(Failure::Data("sweeps need a raw dataset (no truncation or hashing)".into()));
    }
    let blocklist = load_blocklist(&args.blocklist, range_cap, config.seed)?;
    let geo_text = std::fs::read_to_string(&args.geomap)
        .map_err(|e| Failure::Data(format!("{}: {e}", args.geomap.display())))?;
    let geomap = GeoMap::parse_csv(&geo_text)?;

    let started = Instant::now();
    let sampler = AttackSampler::new(&file.schema, &file.events, &blocklist, &geomap)?;
    let replayer = Replayer::new(&file.schema, &file.events, &sampler, &config)?;
    eprintln!(
        "rba: {} logins, {} attack attempts, {} steps",
        file.events.len(),
        replayer.planned_attempts(),
        enhancement.steps().len()
    );
    let result = run_sweep(&replayer, &config, &enhancement)?;
    io::write_sweep(&common.out, &result)?;
    eprintln!("rba: sweep finished in {:.1?}", started.elapsed());
    if result.has_invalid_steps() {
        return Err(Failure::Infeasible(format!(
            "degenerate steps flagged invalid in {}",
            common.out.display()
        )));
    }
    Ok(())
}

fn limits(common: &Common, sweep_path: &Path, delta: Option<f64>) -> Outcome {
    let cfg = load_config(common, &[&["rsr-limit-delta"]])?;
    let sweep = io::read_sweep(sweep_path)?;
    let delta = cfg
        .pick_or(delta, "rsr-limit-delta", sweep.meta.rsr_limit_delta)
        .map_err(Failure::Usage)?;
    if sweep.records.is_empty() {
        return Err(Failure::Data("sweep has no records".into()));
    }
    let limits = extract_sweep_limits(&sweep, delta);
    io::write_limits(&common.out, &limits)?;
    Ok(())
}

fn export(common: &Common, sweep_path: &Path) -> Outcome {
    load_config(common, &[])?;
    let sweep = io::read_sweep(sweep_path)?;
    io::export_plot_data(&sweep, &common.out)?;
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Generate {
            common,
            users,
            logins,
            concentration,
            outlier_rate,
            blocklist_size,
            blocklist,
            geomap,
        } => generate(&common, users, logins, concentration, outlier_rate, blocklist_size, blocklist, geomap),
        Command::Score {
            common,
            dataset,
            user,
            ip,
            user_agent,
            threshold,
            bits,
            k,
            codec,
            risk,
        } => score(&common, &dataset, &user, &ip, &user_agent, threshold, bits, k, &codec, &risk),
        Command::SweepTruncation { sweep: args, bits } => sweep(
            &args,
            |cfg| {
                let steps = cfg.pick(bits, "bits").map_err(Failure::Usage)?;
                Ok(Enhancement::Truncation(steps.map_or(EvalConfig::default().truncation_bits, |s| s.0)))
            },
            "bits",
        ),
        Command::SweepK { sweep: args, k } => sweep(
            &args,
            |cfg| {
                let steps = cfg.pick(k, "k").map_err(Failure::Usage)?;
                Ok(Enhancement::KAnonymity(steps.map_or(EvalConfig::default().k_values, |s| s.0)))
            },
            "k",
        ),
        Command::Limits {
            common,
            sweep,
            rsr_limit_delta,
        } => limits(&common, &sweep, rsr_limit_delta),
        Command::Export { common, sweep } => export(&common, &sweep),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("rba: error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
