//! `ctwin`: learn, check and exercise a causal twin of a control process.

mod artifact;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "ctwin", version, about = "Causal digital twin for industrial control time series")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Seed for every random stage; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON config with flat keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic plant bundle with ground truth.
    Synth(SynthArgs),
    /// Learn a lagged causal graph from a dataset.
    Discover(DiscoverArgs),
    /// Fit structural equations on a graph.
    Fit(FitArgs),
    /// Calibrate the detector and score a dataset.
    Detect(DetectArgs),
    /// Rank root causes of an alarm.
    Explain(ExplainArgs),
    /// Answer a counterfactual query on an observed window.
    Whatif(WhatifArgs),
    /// Run the full evaluation protocol on a synthetic plant.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Plant template: swat51, wadi123 or hai78.
    #[arg(long)]
    pub template: Option<String>,
    /// Attack manifest to inject; only `suite-v1` is defined.
    #[arg(long)]
    pub attacks: Option<String>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// JSON schema describing the CSV columns.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiscoverArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Constraint catalog; discovery is unconstrained without one.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub graph: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub scm: Option<PathBuf>,
    /// Attack-free data for threshold calibration.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// Emit one JSON line per input row on stdout.
    #[arg(long)]
    pub stream: bool,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub scm: Option<PathBuf>,
    /// Detector state written by `detect`.
    #[arg(long)]
    pub detector: Option<PathBuf>,
    /// Row of the alarm to explain; the first alarm when omitted.
    #[arg(long)]
    pub row: Option<usize>,
    /// Row where the anomalous episode began.
    #[arg(long)]
    pub onset: Option<usize>,
}

#[derive(Debug, Args)]
pub struct WhatifArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub scm: Option<PathBuf>,
    /// Intervention `NAME=VALUE`; repeatable.
    #[arg(long = "set", required = true)]
    pub set: Vec<String>,
    /// First row the intervention applies to.
    #[arg(long)]
    pub from: usize,
    /// End of the window (exclusive); defaults to `from + 60`.
    #[arg(long)]
    pub to: Option<usize>,
    /// Variable whose counterfactual value is reported.
    #[arg(long)]
    pub outcome: String,
    /// Report the indicator `outcome > threshold` instead of the value.
    #[arg(long)]
    pub above: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Tables,
    Json,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Tables)]
    pub report: ReportFormat,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = commands::Context::new(&cli.common).and_then(|ctx| match &cli.command {
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Discover(a) => commands::discover(&ctx, a),
        Command::Fit(a) => commands::fit(&ctx, a),
        Command::Detect(a) => commands::detect(&ctx, a),
        Command::Explain(a) => commands::explain(&ctx, a),
        Command::Whatif(a) => commands::whatif(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
