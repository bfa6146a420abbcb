//! Subcommands of the `banditqa` binary.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use banditqa_core::checkpoint::{fingerprint, load_checkpoint, save_checkpoint};
use banditqa_core::corpus::bundle;
use banditqa_core::datastore::{load_squad2, load_tydiqa, load_topic_pool, write_squad2, Dataset, JsonlLog};
use banditqa_core::simulator::SensitivityReport;
use banditqa_core::types::DEFAULT_MAX_CONTEXT_LEN;
use banditqa_core::{
    evaluate, initialize, resample_sensitivity, run_deployment, AnnotatedExample, Interaction, Metrics, PolicyMode,
    RoundRecord, Variant,
};
use banditqa_service::{DeployedSnapshot, Service};

pub use config::Config;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, files or configuration.
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<banditqa_core::Error> for CliError {
    fn from(e: banditqa_core::Error) -> Self {
        if e.is_input() {
            CliError::Input(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "banditqa", version, about = "Extractive QA that learns from user feedback")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an initial policy on labeled examples.
    Init(InitArgs),
    /// Run simulated deploy/learn rounds against an oracle user.
    Simulate(SimulateArgs),
    /// Score a checkpoint on a test set.
    Evaluate(EvaluateArgs),
    /// Retrain on resampled subsets of a feedback log and report the spread.
    Sensitivity(SensitivityArgs),
    /// Per-round CSV from a simulation output directory.
    Report(ReportArgs),
    /// Run the live feedback service.
    Serve(ServeArgs),
    /// Write the bundled synthetic data files.
    GenData(GenDataArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataFormat {
    Squad2,
    Tydiqa,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    /// Labeled training data.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "squad2")]
    pub format: DataFormat,
    /// Examples sampled from the data.
    #[arg(long, default_value_t = 512)]
    pub n_examples: usize,
    /// Weight of the answerability loss; overrides the config.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Seeds example sampling, weight init and batch order.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train a span-only policy with a sentinel "unanswerable" span.
    #[arg(long)]
    pub span_only: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub init_checkpoint: PathBuf,
    /// Examples the simulated users ask about (SQuAD 2.0 JSON).
    #[arg(long)]
    pub pool: PathBuf,
    /// Held-out evaluation set (SQuAD 2.0 JSON).
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Overrides the deployment, oracle and trainer seeds.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_enum, default_value = "squad2")]
    pub format: DataFormat,
    #[arg(long, default_value_t = banditqa_core::policy::DEFAULT_MAX_ANSWER_LEN)]
    pub max_answer_len: usize,
    /// Also write the metrics as a one-row CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    /// Interaction log (`interactions.jsonl` from simulate or `feedback.jsonl` from serve).
    #[arg(long)]
    pub pool_log: PathBuf,
    /// Use only the first N logged interactions.
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub init_checkpoint: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Number of resampled sets.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Interactions per set.
    #[arg(long, default_value_t = 200)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trainer settings are read from `[deployment.trainer]`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the full report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub log_dir: PathBuf,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Snapshot to deploy. Repeat for an A/B comparison; the first is trained by advances.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    /// Topic pool JSON.
    #[arg(long)]
    pub topics: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Overrides `[service] test_branch_prob`.
    #[arg(long)]
    pub test_branch_prob: Option<f64>,
    /// Overrides `[service] seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Where logs and new checkpoints go.
    #[arg(long, default_value = "service-logs")]
    pub log_dir: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Init(a) => cmd_init(&a).map(|_| ()),
        Command::Simulate(a) => cmd_simulate(&a).map(|_| ()),
        Command::Evaluate(a) => {
            let m = cmd_evaluate(&a)?;
            println!("{}", serde_json::to_string_pretty(&m).map_err(|e| CliError::Runtime(e.to_string()))?);
            Ok(())
        }
        Command::Sensitivity(a) => {
            let r = cmd_sensitivity(&a)?;
            print!("{}", sensitivity_table(&r));
            Ok(())
        }
        Command::Report(a) => {
            let csv = cmd_report(&a.log_dir)?;
            match &a.out {
                Some(p) => fs::write(p, csv).map_err(io_err(p)),
                None => std::io::stdout().write_all(csv.as_bytes()).map_err(|e| CliError::Runtime(e.to_string())),
            }
        }
        Command::Serve(a) => cmd_serve(&a),
        Command::GenData(a) => cmd_gen_data(&a),
    }
}

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Dataset> {
    let ds = match format {
        DataFormat::Squad2 => load_squad2(path, DEFAULT_MAX_CONTEXT_LEN)?,
        DataFormat::Tydiqa => load_tydiqa(path, DEFAULT_MAX_CONTEXT_LEN)?,
    };
    if ds.skipped > 0 {
        log::warn!("{}: skipped {} unusable entries", path.display(), ds.skipped);
    }
    Ok(ds)
}

fn load_examples(path: &Path) -> Result<Vec<AnnotatedExample>> {
    let ds = load_dataset(path, DataFormat::Squad2)?;
    if ds.is_empty() {
        return Err(CliError::Input(format!("{} has no usable examples", path.display())));
    }
    Ok(ds.examples)
}

/// `n` examples drawn without replacement, kept in file order.
pub fn sample_examples(examples: &[AnnotatedExample], n: usize, seed: u64) -> Result<Vec<AnnotatedExample>> {
    if n == 0 {
        return Err(CliError::Input("--n-examples must be positive".into()));
    }
    if n > examples.len() {
        return Err(CliError::Input(format!("--n-examples {n} exceeds the {} available examples", examples.len())));
    }
    let mut idx: Vec<usize> = (0..examples.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n);
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| examples[i].clone()).collect())
}

pub fn cmd_init(a: &InitArgs) -> Result<banditqa_core::PolicyParams> {
    let cfg = Config::load(a.config.as_deref())?;
    let ds = load_dataset(&a.data, a.format)?;
    let examples = sample_examples(&ds.examples, a.n_examples, a.seed)?;
    let mut trainer = cfg.supervised.clone();
    trainer.seed = a.seed;
    if let Some(l) = a.lambda {
        trainer.lambda = l;
    }
    trainer.validate()?;
    let mode = if a.span_only || cfg.deployment.variant == Variant::SpanOnly {
        PolicyMode::SpanOnly
    } else {
        PolicyMode::TwoHead
    };
    log::info!("training {} policy on {} examples", mode.as_str(), examples.len());
    let (params, losses) = initialize(&examples, cfg.policy, mode, &trainer)?;
    log::info!("epoch losses: {losses:.3?}");
    save_checkpoint(&a.out, &params, 0, &fingerprint(&trainer)?)?;
    Ok(params)
}

fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.flush().map_err(io_err(path))
}

fn csv_string(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Runtime(e.to_string()))
}

pub const ROUNDS_JSONL: &str = "rounds.jsonl";
pub const ROUNDS_CSV: &str = "rounds.csv";
pub const INTERACTIONS_JSONL: &str = "interactions.jsonl";
pub const EXPERIMENT_JSON: &str = "experiment.json";

/// Outputs in `out_dir`: `rounds.jsonl`, `rounds.csv`, `interactions.jsonl`,
/// `experiment.json`, `config.toml` and `checkpoints/round-N.bqac`.
pub fn cmd_simulate(a: &SimulateArgs) -> Result<banditqa_core::ExperimentLog> {
    let mut cfg = Config::load(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.deployment.seed = s;
        cfg.deployment.oracle.seed = s;
        cfg.deployment.trainer.seed = s;
    }
    let (init, _) = load_checkpoint(&a.init_checkpoint)?;
    let pool = load_examples(&a.pool)?;
    let test = load_examples(&a.test)?;
    let dir = &a.out_dir;
    fs::create_dir_all(dir.join("checkpoints")).map_err(io_err(dir))?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?).map_err(io_err(dir))?;
    let fp = fingerprint(&cfg.deployment)?;
    let rounds_path = dir.join(ROUNDS_JSONL);
    if rounds_path.exists() {
        fs::remove_file(&rounds_path).map_err(io_err(&rounds_path))?;
    }
    let log = run_deployment(&init, &pool, &test, &cfg.deployment, |round, params| {
        save_checkpoint(dir.join(format!("checkpoints/round-{round}.bqac")), params, round, &fp)
    })?;

    let rounds = JsonlLog::<RoundRecord>::open(&rounds_path)?;
    for r in &log.rounds {
        rounds.append(r)?;
    }
    write_csv(&dir.join(ROUNDS_CSV), &RoundRecord::csv_header(), log.rounds.iter().map(RoundRecord::csv_row))?;
    let interactions_path = dir.join(INTERACTIONS_JSONL);
    if interactions_path.exists() {
        fs::remove_file(&interactions_path).map_err(io_err(&interactions_path))?;
    }
    let interactions = JsonlLog::<Interaction>::open(&interactions_path)?.without_sync();
    for x in &log.interactions {
        interactions.append(x)?;
    }
    let json = serde_json::to_string_pretty(&log).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(dir.join(EXPERIMENT_JSON), json).map_err(io_err(dir))?;
    for r in &log.rounds {
        log::info!(
            "round {}: mean reward {:.3}, test F1 {:.1}",
            r.round,
            r.stats.mean_reward,
            r.metrics.f1
        );
    }
    log::info!("final test F1 {:.1}", log.final_metrics.f1);
    Ok(log)
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<Metrics> {
    let (params, _) = load_checkpoint(&a.checkpoint)?;
    let ds = load_dataset(&a.test, a.format)?;
    let m = evaluate(&params, &ds.examples, a.max_answer_len)?;
    if let Some(p) = &a.csv {
        let header: Vec<String> = Metrics::CSV_HEADER.iter().map(|s| s.to_string()).collect();
        write_csv(p, &header, [m.csv_row()])?;
    }
    Ok(m)
}

pub fn cmd_sensitivity(a: &SensitivityArgs) -> Result<SensitivityReport> {
    let cfg = Config::load(a.config.as_deref())?;
    let (init, _) = load_checkpoint(&a.init_checkpoint)?;
    if !a.pool_log.exists() {
        return Err(CliError::Input(format!("{} does not exist", a.pool_log.display())));
    }
    let mut pool = JsonlLog::<Interaction>::load(&a.pool_log)?.records;
    if let Some(n) = a.pool_size {
        if n > pool.len() {
            return Err(CliError::Input(format!("--pool-size {n} exceeds the {} logged interactions", pool.len())));
        }
        pool.truncate(n);
    }
    if a.size > pool.len() {
        return Err(CliError::Input(format!("--size {} exceeds the {} logged interactions", a.size, pool.len())));
    }
    let test = load_examples(&a.test)?;
    let report = resample_sensitivity(
        &init,
        &pool,
        a.k,
        a.size,
        &cfg.deployment.trainer,
        &test,
        cfg.deployment.max_answer_len,
        a.seed,
    )?;
    if let Some(p) = &a.out {
        let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
        fs::write(p, json).map_err(io_err(p))?;
    }
    Ok(report)
}

pub fn sensitivity_table(r: &SensitivityReport) -> String {
    let mut out = format!("{:<16}{:>10}{:>10}\n", "metric", "mean", "std");
    for s in &r.summary {
        out.push_str(&format!("{:<16}{:>10.2}{:>10.2}\n", s.name, s.mean, s.std));
    }
    out
}

/// Per-round CSV rebuilt from `rounds.jsonl`.
pub fn cmd_report(log_dir: &Path) -> Result<String> {
    let path = log_dir.join(ROUNDS_JSONL);
    if !path.exists() {
        return Err(CliError::Input(format!("no {ROUNDS_JSONL} in {}", log_dir.display())));
    }
    let loaded = JsonlLog::<RoundRecord>::load(&path)?;
    if loaded.records.is_empty() {
        return Err(CliError::Input(format!("{} has no rounds", path.display())));
    }
    csv_string(&RoundRecord::csv_header(), loaded.records.iter().map(RoundRecord::csv_row))
}

pub fn build_service(a: &ServeArgs) -> Result<Service> {
    let cfg = Config::load(a.config.as_deref())?;
    let mut svc_cfg = cfg.service.clone();
    if let Some(p) = a.test_branch_prob {
        svc_cfg.test_branch_prob = p;
    }
    if let Some(s) = a.seed {
        svc_cfg.seed = s;
    }
    svc_cfg.validate()?;
    let topics = load_topic_pool(&a.topics)?;
    let arms = a
        .checkpoint
        .iter()
        .map(|p| load_checkpoint(p).map(|(params, h)| DeployedSnapshot::new(params, h.round)))
        .collect::<banditqa_core::Result<Vec<_>>>()?;
    Ok(Service::new(svc_cfg, topics, arms, &a.log_dir)?)
}

pub fn cmd_serve(a: &ServeArgs) -> Result<()> {
    let service = Arc::new(build_service(a)?);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .map_err(|e| CliError::Input(format!("cannot listen on {}:{}: {e}", a.host, a.port)))?;
        let addr = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
        log::info!("serving {} on http://{addr}", service.status().model_id);
        println!("listening on http://{addr}");
        tokio::select! {
            r = banditqa_service::serve(listener, service) => r.map_err(|e| CliError::Runtime(e.to_string())),
            _ = tokio::signal::ctrl_c() => Ok(()),
        }
    })
}

pub fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    let b = bundle(a.seed)?;
    let dir = &a.out_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, examples) in [("init", &b.init), ("pool", &b.pool), ("test", &b.test)] {
        let path = dir.join(format!("{name}.json"));
        fs::write(&path, write_squad2(examples, &format!("synthetic-{name}"))?).map_err(io_err(&path))?;
    }
    let path = dir.join("topics.json");
    fs::write(&path, b.topics.to_json()?).map_err(io_err(&path))?;
    Ok(())
}
