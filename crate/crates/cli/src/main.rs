use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use regdistill::tensor::Precision;

mod commands;
mod error;

use error::CliError;

#[derive(Parser)]
#[command(name = "regdistill", version, about = "Feature-regression distillation from frozen teachers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Experiment config (flat `key = value` file).
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `seed` from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
    #[arg(long, default_value = "f32")]
    pub precision: Precision,
}

#[derive(Subcommand)]
enum Command {
    /// Emit (and for `supervised:` sources, train) each teacher as `teacher_<id>.bin`.
    PretrainTeacher(Common),
    /// Precompute teacher features over one augmented view per image.
    Cache(Common),
    /// Train the student; writes `checkpoint.bin` after every epoch and `history.csv`.
    Distill {
        #[command(flatten)]
        common: Common,
        /// Continue from `checkpoint.bin` in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Layer-wise k-NN / probe / MSE report (`report.json`, `report.csv`).
    Eval {
        #[command(flatten)]
        common: Common,
        /// Student checkpoint; defaults to `<out>/checkpoint.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sequential sweep over `ablate.axis` (`ablation.csv`, `ablation.md`).
    Ablate(Common),
    /// Convert `<dir>/<class>/*.png` into a dataset container.
    Import {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::PretrainTeacher(c) => commands::pretrain_teacher(&c),
        Command::Cache(c) => commands::cache(&c),
        Command::Distill { common, resume } => commands::distill(&common, resume),
        Command::Eval { common, checkpoint } => commands::eval(&common, checkpoint),
        Command::Ablate(c) => commands::ablate(&c),
        Command::Import { dir, out, force } => commands::import(&dir, &out, force),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
