use std::fmt::Display;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod settings;

use settings::Settings;

/// Error carrying the process exit code: 2 for usage and configuration
/// problems, 1 for failures while running.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(msg: impl Display) -> Self {
        CliError {
            code: 2,
            message: msg.to_string(),
        }
    }

    pub fn runtime(msg: impl Display) -> Self {
        CliError {
            code: 1,
            message: msg.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "gate",
    version,
    about = "Syntax-distance attention encoder: data, training and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the tree distance matrix of one sentence as TSV.
    Distances {
        #[arg(long)]
        treebank: PathBuf,
        #[arg(long)]
        sentence_id: String,
        /// Print the token forms as a first row.
        #[arg(long)]
        header: bool,
    },
    /// Write a synthetic corpus with source and reordered realizations.
    Synth(RunArgs),
    /// Train a model; writes best.ckpt, last.ckpt and metrics.jsonl.
    Train(RunArgs),
    /// Score a checkpoint, or a predictions file, against gold instances.
    Eval(RunArgs),
    /// Write predictions.jsonl for the given instances.
    Predict(RunArgs),
    /// Finite-difference check of all model gradients on a bundled sentence.
    Gradcheck(RunArgs),
}

#[derive(Args, Default)]
struct RunArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Directory receiving all output files.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// RE or EARL.
    #[arg(long)]
    task: Option<String>,
    /// Per-head thresholds, e.g. `2,2,4,4,inf,inf,inf,inf`, or `unbounded`.
    #[arg(long)]
    delta: Option<String>,
    /// gate or plain.
    #[arg(long)]
    attention_mode: Option<String>,
    #[arg(long)]
    treebank: Option<PathBuf>,
    #[arg(long)]
    instances: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
}

impl RunArgs {
    /// Config file, then `--set`, then dedicated flags.
    fn settings(&self) -> Result<Settings, CliError> {
        let mut s = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        for assignment in &self.set {
            s.set(assignment)?;
        }
        let flags: [(&str, Option<String>); 10] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("task", self.task.clone()),
            ("delta", self.delta.clone()),
            ("attention_mode", self.attention_mode.clone()),
            ("treebank", self.treebank.as_ref().map(|p| p.display().to_string())),
            ("instances", self.instances.as_ref().map(|p| p.display().to_string())),
            ("checkpoint", self.checkpoint.as_ref().map(|p| p.display().to_string())),
            (
                "predictions",
                self.predictions.as_ref().map(|p| p.display().to_string()),
            ),
            ("features", self.features.as_ref().map(|p| p.display().to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                s.set_flag(key, v);
            }
        }
        Ok(s)
    }

    fn out(&self) -> Result<PathBuf, CliError> {
        self.out.clone().ok_or_else(|| CliError::usage("--out is required"))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Distances {
            treebank,
            sentence_id,
            header,
        } => commands::distances(&treebank, &sentence_id, header),
        Command::Synth(a) => commands::synth(&a.settings()?, &a.out()?),
        Command::Train(a) => commands::train(&a.settings()?, &a.out()?),
        Command::Eval(a) => commands::eval(&a.settings()?, &a.out()?),
        Command::Predict(a) => commands::predict(&a.settings()?, &a.out()?),
        Command::Gradcheck(a) => commands::gradcheck(&a.settings()?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
