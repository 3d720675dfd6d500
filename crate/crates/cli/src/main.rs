//! `fstad`: corpus generation, splitting, training, evaluation and the study
//! harnesses behind one reproducible command line.

mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "fstad",
    version,
    about = "Few-shot temporal activity detection on synthetic features"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every verb.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config for this verb; unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Suppress summaries on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Random,
    Controlled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Threshold,
    Lambda,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a corpus from a corpus config.
    Gen,
    /// Partition a corpus catalog into base and novel classes.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Random)]
        mode: Mode,
        #[arg(long, default_value_t = 20)]
        n_novel: usize,
    },
    /// Train on the base classes of a split.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        split: PathBuf,
    },
    /// Evaluate a trained model on novel-class episodes.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        proposal_threshold: Option<f64>,
        #[arg(long)]
        similarity_threshold: Option<f64>,
    },
    /// Proposal-threshold or adaptation-weight sweep.
    Sweep {
        #[arg(long, value_enum)]
        kind: SweepKind,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// Trained model (threshold sweep only).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Eval config; `--config` holds the train config for the lambda sweep
        /// and the eval config for the threshold sweep.
        #[arg(long)]
        eval_config: Option<PathBuf>,
        /// Comma-separated grid; defaults depend on the kind.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Random versus controlled split study.
    CompareSplits {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        eval_config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        n_random: usize,
        #[arg(long, default_value_t = 3)]
        n_controlled: usize,
        #[arg(long, default_value_t = 20)]
        n_novel: usize,
    },
    /// Finite-difference check of every loss path.
    Gradcheck {
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
}

fn main() -> ExitCode {
    let Cli { common, command } = Cli::parse();
    let result = match command {
        Command::Gen => commands::gen(&common),
        Command::Split {
            corpus,
            mode,
            n_novel,
        } => commands::split(&common, &corpus, mode, n_novel),
        Command::Train { corpus, split } => commands::train(&common, &corpus, &split),
        Command::Eval {
            model,
            corpus,
            split,
            count,
            proposal_threshold,
            similarity_threshold,
        } => commands::eval(
            &common,
            &commands::EvalInputs {
                model,
                corpus,
                split,
            },
            count,
            proposal_threshold,
            similarity_threshold,
        ),
        Command::Sweep {
            kind,
            corpus,
            split,
            model,
            eval_config,
            grid,
        } => commands::sweep(
            &common,
            kind,
            &corpus,
            &split,
            model.as_deref(),
            eval_config.as_deref(),
            grid,
        ),
        Command::CompareSplits {
            corpus,
            eval_config,
            n_random,
            n_controlled,
            n_novel,
        } => commands::compare_splits(
            &common,
            &corpus,
            eval_config.as_deref(),
            [n_random, n_controlled],
            n_novel,
        ),
        Command::Gradcheck {
            instances,
            tolerance,
        } => commands::gradcheck(&common, instances, tolerance),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
