//! `gdpo`: generate data, fine-tune, align, evaluate and report.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! divergence.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gdpo_core::align::{GdpoTerms, Method};
use gdpo_core::datagen::Split;
use gdpo_core::ErrorKind;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "GDPO_OUTPUT_ROOT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] gdpo_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gdpo", version, about = "Belief-calibrated preference alignment experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate train/eval/test preference files, topics and manifest.
    GenData(GenDataArgs),
    /// Supervised fine-tuning from a fresh policy.
    Sft(SftArgs),
    /// Preference alignment from a fine-tuned checkpoint.
    Align(AlignArgs),
    /// Sample from a checkpoint and score JSD, CBC, BPC and RS.
    Eval(EvalArgs),
    /// Collect traces and metrics into CSV, plot data and a plot script.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML). Defaults apply to missing keys.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory [default: $GDPO_OUTPUT_ROOT/<config hash>]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    /// Number of topics.
    #[arg(long)]
    topics: Option<usize>,
    /// Beliefs per topic (2 to 6).
    #[arg(long)]
    beliefs: Option<usize>,
    /// Response styles per belief.
    #[arg(long)]
    styles: Option<usize>,
    /// Data generation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Training examples per topic.
    #[arg(long)]
    train: Option<usize>,
    /// Evaluation examples per topic.
    #[arg(long)]
    eval: Option<usize>,
    /// Test examples per topic.
    #[arg(long)]
    test: Option<usize>,
}

/// Optimization overrides shared by `sft` and `align`.
#[derive(Debug, Args)]
struct TrainOverrides {
    /// Passes over the training split.
    #[arg(long)]
    epochs: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Examples per optimizer step.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Shuffling seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SftArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory written by gen-data.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Resample accepted beliefs uniformly before training.
    #[arg(long)]
    uniform: bool,
    /// Artifact name [default: sft, or sft-uniform]
    #[arg(long)]
    name: Option<String>,
    #[command(flatten)]
    train: TrainOverrides,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Dpo,
    Gdpo,
    KtoGdpo,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Dpo => Method::Dpo,
            MethodArg::Gdpo => Method::Gdpo,
            MethodArg::KtoGdpo => Method::KtoGdpo,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TermsArg {
    Both,
    CalibrationOnly,
    PreferenceOnly,
}

impl From<TermsArg> for GdpoTerms {
    fn from(t: TermsArg) -> Self {
        match t {
            TermsArg::Both => GdpoTerms::Both,
            TermsArg::CalibrationOnly => GdpoTerms::CalibrationOnly,
            TermsArg::PreferenceOnly => GdpoTerms::PreferenceOnly,
        }
    }
}

#[derive(Debug, Args)]
struct AlignArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory written by gen-data.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Fine-tuned checkpoint; also the frozen reference.
    #[arg(long, value_name = "FILE")]
    sft: PathBuf,
    /// Alignment objective [default: gdpo]
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Inverse temperature of the preference term [default: 0.1]
    #[arg(long)]
    beta: Option<f64>,
    /// Weight of the KL part of the calibration term [default: 1.0]
    #[arg(long)]
    calibration_weight: Option<f64>,
    /// GDPO terms to optimize, for ablations [default: both]
    #[arg(long, value_enum)]
    terms: Option<TermsArg>,
    /// Artifact name [default: the method name]
    #[arg(long)]
    name: Option<String>,
    #[command(flatten)]
    train: TrainOverrides,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Eval,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Eval => Split::Eval,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory written by gen-data.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Policy checkpoint to evaluate.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Split to evaluate on.
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Method label in the metrics [default: checkpoint file stem]
    #[arg(long)]
    name: Option<String>,
    /// Sampling seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Training trace, as NAME=FILE or FILE (name from trace_<NAME>.csv).
    #[arg(long, value_name = "TRACE")]
    trace: Vec<String>,
    /// Metrics JSON written by eval.
    #[arg(long, value_name = "FILE")]
    metrics: Vec<PathBuf>,
    /// Output directory [default: $GDPO_OUTPUT_ROOT/report]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Sft(a) => commands::sft(a),
        Command::Align(a) => commands::align(a),
        Command::Eval(a) => commands::eval(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
