//! `pce`: data generation, training, grid search, evaluation, ablation tables,
//! in-context evaluation and inspection of single samples.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pce_core::evaluation::Protocol;
use pce_core::llm::Setup;
use pce_core::models::ModelKind;

use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "pce", version, about = "Perception-guided crossmodal entailment experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// JSON run configuration; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// lstm, transformer, pgmt or ensemble
    #[arg(long, global = true)]
    model: Option<ModelKind>,
    /// 3class or 2class
    #[arg(long, global = true)]
    protocol: Option<Protocol>,
    /// Transition bias weight
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// zero, fix or one
    #[arg(long, global = true)]
    setup: Option<Setup>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset directory written by `gen`
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    max_epochs: Option<usize>,
    /// Generator signal strength in [0, 1]
    #[arg(long, global = true)]
    signal: Option<f64>,
    /// Number of samples to generate
    #[arg(long, global = true)]
    samples: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with stimulus features
    Gen,
    /// Train one model and evaluate it on the test split
    Train,
    /// Train every hyperparameter combination and rank them
    Grid,
    /// Evaluate a checkpoint on one split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// train, val or test
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train the alignment-signal variants and tabulate them
    Ablation,
    /// Ask a chat-completion endpoint for verdicts on the test split
    Incontext {
        /// Answer every prompt with this text instead of calling the endpoint
        #[arg(long)]
        mock: Option<String>,
    },
    /// Print a sample's fixations, transition matrix and amplified bias
    Inspect {
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    let overrides = Overrides {
        seed: g.seed,
        model: g.model,
        protocol: g.protocol,
        lambda: g.lambda,
        setup: g.setup,
        data: g.data.clone(),
        max_epochs: g.max_epochs,
        signal: g.signal,
        samples: g.samples,
    };
    let cfg = RunConfig::resolve(g.config.as_deref(), &overrides)?;
    let out = || g.out.clone().ok_or_else(|| usage("--out <dir> is required"));
    match cli.command {
        Command::Gen => commands::gen(&cfg, &out()?),
        Command::Train => commands::train(&cfg, &out()?),
        Command::Grid => commands::grid(&cfg, &out()?),
        Command::Eval { checkpoint, split } => commands::eval(&cfg, &checkpoint, &split, &out()?),
        Command::Ablation => commands::ablation(&cfg, &out()?),
        Command::Incontext { mock } => commands::incontext(&cfg, mock.as_deref(), &out()?),
        Command::Inspect { sample } => commands::inspect(&cfg, sample),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("pce: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("pce: {e:#}");
            ExitCode::from(1)
        }
    }
}
