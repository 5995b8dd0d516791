use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fedrap::analysis::compare_variants;
use fedrap::checkpoint;
use fedrap::config::ExperimentConfig;
use fedrap::experiment::{self, CONFIG_FILE, ROUNDS_FILE};
use fedrap::matrix::{DumpFormat, Matrix};
use fedrap::runtime::evaluate_clients;

#[derive(Parser)]
#[command(name = "fedrap", version, about = "Federated recommendation with additive personalization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, binarize and split a ratings file; write the split manifest.
    Ingest(ExperimentArgs),
    /// Train one variant and write its round stream and final tables.
    Train(ExperimentArgs),
    /// Score every client against a checkpoint.
    Evaluate(CheckpointArgs),
    /// Tabulate final and best rounds of several runs.
    Compare(CompareArgs),
    /// Dump C, U and selected local tables from a checkpoint.
    ExportEmbeddings(ExportArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// Flat TOML file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// `tab` or `double-colon`.
    #[arg(long)]
    format: Option<String>,
    /// fedrap, fedrap-c, fedrap-d, fedrap-no, fedrap-l2, centrap.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    local_epochs: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    v1: Option<f64>,
    #[arg(long)]
    v2: Option<f64>,
    /// tanh, fixed, sin, square, frac.
    #[arg(long)]
    schedule: Option<String>,
    /// encourage-difference or penalize-difference.
    #[arg(long)]
    reg_sign: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    clients_per_round: Option<usize>,
    #[arg(long)]
    exclude_previous: bool,
    #[arg(long)]
    dp: bool,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    z: Option<f64>,
    #[arg(long)]
    min_interactions: Option<usize>,
    #[arg(long)]
    eval_negatives: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    full_eval_every: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        self.apply(base)
    }

    fn apply(&self, mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            )*};
        }
        set!(seed, rounds, local_epochs, dim, eta, v1, v2, batch_size, clients_per_round, tau, z);
        set!(min_interactions, eval_negatives, workers, full_eval_every, checkpoint_every);
        if self.dataset.is_some() {
            cfg.dataset = self.dataset.clone();
        }
        if self.format.is_some() {
            cfg.format = self.format.clone();
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        if let Some(v) = &self.variant {
            cfg.variant = v.parse()?;
        }
        if let Some(s) = &self.schedule {
            cfg.schedule = s.parse()?;
        }
        if let Some(s) = &self.reg_sign {
            cfg.reg_sign = s.parse()?;
        }
        cfg.exclude_previous |= self.exclude_previous;
        cfg.dp |= self.dp;
        cfg.rating_format()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct CheckpointArgs {
    /// Run directory written by `train`; its newest checkpoint and its
    /// config are used unless overridden.
    #[arg(long)]
    run: Option<PathBuf>,
    /// A specific `round_NNNN` checkpoint directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    experiment: ExperimentArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// Run directories, each holding a round stream.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// CSV destination; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    source: CheckpointArgs,
    /// Client indices whose local tables are dumped, e.g. `0,3,17`.
    #[arg(long, value_delimiter = ',')]
    clients: Vec<usize>,
    /// `text` or `binary`.
    #[arg(long, default_value = "text")]
    dump_format: String,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Ingest(args) => ingest(&args),
        Command::Train(args) => train(&args),
        Command::Evaluate(args) => evaluate(&args),
        Command::Compare(args) => compare(&args),
        Command::ExportEmbeddings(args) => export(&args),
    }
}

fn ingest(args: &ExperimentArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let data = experiment::load_data(&cfg)?;
    let stats = data.stats();
    println!("{}", serde_json::to_string_pretty(&stats)?);
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        data.manifest().save(&out.join(experiment::SPLIT_FILE))?;
        fs::write(out.join("stats.json"), serde_json::to_string_pretty(&stats)?)?;
        fs::write(out.join(CONFIG_FILE), cfg.to_toml())?;
    }
    Ok(())
}

fn train(args: &ExperimentArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let data = experiment::load_data(&cfg)?;
    log::info!(
        "{} clients, {} items; training {} for {} rounds",
        data.meta.n(),
        data.meta.m(),
        cfg.variant_spec().label(),
        cfg.rounds
    );
    let (_, summary) = experiment::run(&cfg, &data, cfg.out.as_deref())?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

/// Config and checkpoint directory for `evaluate` and `export-embeddings`.
fn locate(args: &CheckpointArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let file = args
        .experiment
        .config
        .clone()
        .or_else(|| args.run.as_ref().map(|r| r.join(CONFIG_FILE)));
    let base = match file {
        Some(path) => ExperimentConfig::load(&path)?,
        None => ExperimentConfig::default(),
    };
    let mut cfg = args.experiment.apply(base)?;
    let ck = match (&args.checkpoint, &args.run) {
        (Some(ck), _) => ck.clone(),
        (None, Some(run)) => experiment::latest_checkpoint(run)?
            .with_context(|| format!("no checkpoint under {}", run.display()))?,
        (None, None) => bail!("pass --run or --checkpoint"),
    };
    cfg.out = args.experiment.out.clone();
    Ok((cfg, ck))
}

fn evaluate(args: &CheckpointArgs) -> Result<()> {
    let (cfg, ck) = locate(args)?;
    let data = experiment::load_data(&cfg)?;
    let (manifest, server, clients) = checkpoint::load(&ck, data.clients)?;
    if manifest.config_hash != cfg.config_hash() {
        log::warn!("checkpoint was written under a different config");
    }
    let summary = evaluate_clients(&clients, &server.c, fedrap::eval::DEFAULT_CUTOFF)?;
    let json = serde_json::json!({
        "checkpoint": ck,
        "round": manifest.round,
        "variant": manifest.variant,
        "hr10": summary.hr_at_k,
        "ndcg10": summary.ndcg_at_k,
        "n_users": summary.n_users,
    });
    println!("{}", serde_json::to_string_pretty(&json)?);
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("evaluation.json"), serde_json::to_string_pretty(&json)?)?;
    }
    Ok(())
}

fn compare(args: &CompareArgs) -> Result<()> {
    let mut grouped: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for run in &args.runs {
        let path = run.join(ROUNDS_FILE);
        let reports = experiment::read_rounds(&path)?;
        let label = reports
            .first()
            .map(|r| r.variant.clone())
            .with_context(|| format!("{} is empty", path.display()))?;
        grouped.entry(label).or_default().push(reports);
    }
    let csv = compare_variants(&grouped)?.to_csv();
    match &args.out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, &csv)?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn export(args: &ExportArgs) -> Result<()> {
    let format: DumpFormat = args.dump_format.parse()?;
    let (cfg, ck) = locate(&args.source)?;
    let out = cfg.out.clone().context("pass --out")?;
    let data = experiment::load_data(&cfg)?;
    let (_, server, clients) = checkpoint::load(&ck, data.clients)?;
    fs::create_dir_all(&out)?;
    let ext = format.extension();
    server.c.save(&out.join(format!("C.{ext}")), format)?;
    let k = server.c.cols();
    let users = Matrix::from_vec(
        clients.len(),
        k,
        clients.iter().flat_map(|c| c.u.iter().copied()).collect(),
    )?;
    users.save(&out.join(format!("U.{ext}")), format)?;
    for &i in &args.clients {
        let client = clients.get(i).with_context(|| format!("no client {i}"))?;
        match &client.d {
            Some(d) => d.save(&out.join(format!("D_{i}.{ext}")), format)?,
            None => bail!("variant has no local tables"),
        }
    }
    write_ids(&out.join("user_ids.txt"), &data.meta.user_ids)?;
    write_ids(&out.join("item_ids.txt"), &data.meta.item_ids)?;
    Ok(())
}

fn write_ids(path: &Path, ids: &[String]) -> Result<()> {
    let mut text = ids.join("\n");
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
