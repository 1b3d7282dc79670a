use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mowe_cli::{commands, CliError, RunConfig, EXIT_OK};

/// Mixture-of-weather-experts restoration: data generation, training and evaluation.
#[derive(Parser)]
#[command(name = "mowe", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for data, initialization and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Model preset: desk, tiny, n4-k0, n4-k1 or n16-k4.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Router kind: plain or weather.
    #[arg(long, global = true)]
    router: Option<String>,
    /// Keep a fixed class id for mixed-weather images.
    #[arg(long, global = true)]
    no_random_label: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and its manifest.
    GenData,
    /// Train on the generated dataset.
    Train {
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Write per-image and per-weather metric CSVs.
    Eval {
        /// Score the degraded inputs unchanged instead of the trained model.
        #[arg(long)]
        passthrough: bool,
    },
    /// Write the per-weather routing-score table of every MoE layer.
    RouteAnalyze,
    /// Finite-difference gradient checks of every op and the tiny model.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Perception metric against recognizer error over a degradation sweep.
    MetricSweep,
}

fn resolve(o: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = match &o.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(out) = &o.out {
        cfg.out = out.clone();
    }
    if let Some(p) = &o.preset {
        cfg.model.preset = p.clone();
    }
    if let Some(r) = &o.router {
        cfg.model.router = Some(r.clone());
    }
    if o.no_random_label {
        cfg.train.random_label = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::GradCheck { seeds } = cli.command {
        return commands::grad_check(seeds).map(|_| ());
    }
    let cfg = resolve(&cli.overrides)?;
    match cli.command {
        Command::GenData => commands::gen_data(&cfg).map(|_| ()),
        Command::Train { resume } => commands::train(&cfg, resume).map(|_| ()),
        Command::Eval { passthrough } => commands::eval(&cfg, passthrough).map(|_| ()),
        Command::RouteAnalyze => commands::route_analyze(&cfg).map(|_| ()),
        Command::MetricSweep => commands::metric_sweep(&cfg).map(|_| ()),
        Command::GradCheck { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
