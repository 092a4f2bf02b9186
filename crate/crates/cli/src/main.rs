mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "narl", version, about = "Noise-aware robust loss experiments")]
struct Cli {
    /// Directory that receives every output file.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a clean Gaussian-mixture dataset.
    GenData(GenData),
    /// Corrupt the labels of a dataset CSV.
    InjectNoise(InjectNoise),
    /// Train a classifier with fixed loss hyperparameters.
    Train(Train),
    /// Train a classifier and a hyperparameter adjuster together.
    MetaTrain(ConfigArg),
    /// Train a classifier on a new task with frozen adjuster snapshots.
    MetaTest(MetaTest),
    /// Bound constants and gaps over a range of class counts.
    Bounds(Bounds),
    /// Per-sample margins and predicted hyperparameters.
    Diagnose(Diagnose),
}

#[derive(Debug, Args)]
struct GenData {
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 1250)]
    per_class: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// File name inside the output directory.
    #[arg(long, default_value = "data.csv")]
    output: String,
}

#[derive(Debug, Args)]
struct InjectNoise {
    #[arg(long)]
    input: PathBuf,
    /// symmetric, pair, group or instance
    #[arg(long, default_value = "symmetric")]
    kind: String,
    #[arg(long)]
    rate: f64,
    /// Flip pairs for `pair`, e.g. "0:1,2:3".
    #[arg(long, default_value = "")]
    pairs: String,
    /// Class groups for `group`, e.g. "0,1;2,3".
    #[arg(long, default_value = "")]
    groups: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "noisy.csv")]
    output: String,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// TOML experiment file; defaults apply to everything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Train {
    #[command(flatten)]
    config: ConfigArg,
    /// Overrides the loss kind from the config.
    #[arg(long)]
    loss: Option<String>,
}

#[derive(Debug, Args)]
struct MetaTest {
    #[command(flatten)]
    config: ConfigArg,
    /// Where the snapshot files live; defaults to the output directory.
    #[arg(long)]
    snapshots: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Bounds {
    /// gce, js or polysoft; all three when omitted.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long, default_value_t = 0.7)]
    q: f64,
    #[arg(long, default_value_t = 8.0)]
    lambda: f64,
    #[arg(long, default_value_t = 2.0)]
    d: f64,
    #[arg(long, default_value_t = 0.5)]
    pi1: f64,
    /// Inclusive class range such as "2..100".
    #[arg(long, default_value = "2..100")]
    c: String,
    #[arg(long, default_value = "bounds.csv")]
    output: String,
}

#[derive(Debug, Args)]
struct Diagnose {
    #[arg(long)]
    classifier: PathBuf,
    #[arg(long)]
    adjuster: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "diagnostics.csv")]
    output: String,
}

/// Bad input from the user (exit 2) or a failure while running (exit 1).
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<narl_core::Error> for Failure {
    fn from(e: narl_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
