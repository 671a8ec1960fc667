use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mldep::experiment::{fit_rate, run_with_manifest, ExperimentConfig, ExperimentKind};
use mldep::Error;

#[derive(Parser)]
#[command(
    name = "mldep",
    version,
    about = "Multilevel local dependence experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Distance to the Gaussian against system size.
    CltRate(Common),
    /// Stein solution certificates.
    SteinCertify(Common),
    /// Explicit error-bound calculator.
    BoundCalc(Common),
    /// Concentration bounds against empirical tails.
    Tails(Common),
    /// Moderate-deviation grouping checks.
    Moderate(Common),
    /// Brute-force law against Monte Carlo.
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    /// Key/value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; the manifest goes to the same stem with `.manifest.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Policy constant override, repeatable.
    #[arg(long, value_name = "KEY=VAL")]
    policy: Vec<String>,
    /// Any config key override, repeatable.
    #[arg(long, value_name = "KEY=VAL")]
    set: Vec<String>,
}

fn build_config(kind: ExperimentKind, c: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::new(kind),
    };
    cfg.experiment = kind;
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected KEY=VAL, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    for kv in &c.policy {
        cfg.policy
            .apply(kv)
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    if let Some(s) = c.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output_path = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(kind: ExperimentKind, c: &Common) -> Result<(), Error> {
    let cfg = build_config(kind, c)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(c.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    let (table, manifest) = pool.install(|| run_with_manifest(&cfg))?;
    if cfg.output_path.is_none() {
        print!("{}", table.to_csv());
    }
    if kind == ExperimentKind::CltRate && table.rows.len() >= 3 {
        match fit_rate(&table) {
            Ok(fit) => eprintln!(
                "slope {} intercept {} r2 {} ({} rows)",
                fit.slope, fit.intercept, fit.r2, fit.used
            ),
            Err(e) => log::warn!("rate fit: {e}"),
        }
    }
    log::info!(
        "{} rows in {:.2}s",
        manifest.rows,
        manifest.wallclock_seconds
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (kind, common) = match &cli.command {
        Command::CltRate(c) => (ExperimentKind::CltRate, c),
        Command::SteinCertify(c) => (ExperimentKind::SteinCertify, c),
        Command::BoundCalc(c) => (ExperimentKind::BoundCalc, c),
        Command::Tails(c) => (ExperimentKind::Tails, c),
        Command::Moderate(c) => (ExperimentKind::Moderate, c),
        Command::Oracle(c) => (ExperimentKind::Oracle, c),
    };
    match run(kind, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
