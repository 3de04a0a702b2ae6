//! `emonext` command-line entry point.
//!
//! Exit codes: 0 success, 1 failed gradient check or internal error,
//! 2 bad usage, data, configuration or checkpoint, 3 non-finite loss.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use emonext::data::Split;
use emonext::Preset;

mod commands;
mod error;

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "emonext", version, about = "Facial expression recognition with EmoNeXt")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on a FER2013-format CSV.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split and write its confusion matrix.
    Eval(EvalArgs),
    /// Classify a single 48×48 binary PGM image.
    Predict(PredictArgs),
    /// Run the finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
}

/// Model architecture selection, shared by every command that builds a model.
#[derive(Debug, Args)]
struct ModelArgs {
    /// Architecture preset: micro, tiny, small, base, large or xlarge
    /// [train default: micro].
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    /// JSON model configuration, used instead of a preset.
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    config_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// FER2013 CSV with emotion, pixels and Usage columns.
    #[arg(long, value_name = "CSV")]
    data: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Passes over the training rows.
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Samples per optimizer step.
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Peak learning rate of the cosine schedule.
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Weight of the attention-variance regularizer [default: 0.01, or the config file's value].
    #[arg(long)]
    lambda: Option<f64>,
    /// Seed for initialization, shuffling, augmentation and drop-path.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for metrics.jsonl, best.emnx and last.emnx.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint written by `train` (best.emnx or last.emnx).
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// FER2013 CSV holding the rows to evaluate.
    #[arg(long, value_name = "CSV")]
    data: PathBuf,
    /// Rows to evaluate [default: the split the checkpoint was validated on].
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Expected architecture; the checkpoint must match it.
    #[command(flatten)]
    model: ModelArgs,
    /// Samples per forward pass; does not affect the result.
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Directory for the confusion matrix CSV.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Binary (P5) 48×48 8-bit PGM.
    #[arg(long, value_name = "PGM")]
    image: PathBuf,
    /// Expected architecture; the checkpoint must match it.
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Run only the named check.
    #[arg(long)]
    op: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    /// Training rows.
    Train,
    /// PublicTest rows.
    Val,
    /// PrivateTest rows.
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Training,
            SplitArg::Val => Split::PublicTest,
            SplitArg::Test => Split::PrivateTest,
        }
    }
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: emonext::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use emonext::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::GradcheckFailed(_) => 1,
            CliError::Core(e) => match e {
                E::NonFinite { .. } => 3,
                E::Config(_) | E::Data { .. } | E::ShapeMismatch { .. } | E::Format(_) | E::Io { .. } => 2,
                E::Tensor(_) => 1,
            },
        }
    }
}
