use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::Profile;

/// Critical-embedding experiments for fully-connected networks.
///
/// Exit status: 0 when everything requested passed, 1 when a checked
/// invariant failed, 2 on configuration, data or I/O errors.
#[derive(Debug, Parser)]
#[command(name = "critembed", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Precedence: profile < config file < flags.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML file overlaid on the profile defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in defaults to start from.
    #[arg(long, value_enum, global = true, default_value_t = Profile::Desk)]
    pub profile: Profile,
    /// Seed for initialization and random probes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory (depends on the subcommand).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the subcommand's main tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Re-read every written file and validate it.
    #[arg(long, global = true)]
    pub check: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a network; writes a trajectory log and final/best checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Apply an embedding plan to a checkpoint and report what it preserved.
    Embed {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to embed.
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated `layer:neuron:alpha` steps, neurons 1-based.
        #[arg(long)]
        plan: String,
    },
    /// Hessian spectrum of the risk at a checkpoint (`--tol`: zero tolerance).
    Hessian {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Use central differences of the gradient instead of the exact Hessian.
        #[arg(long)]
        fd: bool,
        /// Also print the zero/positive/negative counts for tolerances 1e-14 ... 1e-4.
        #[arg(long)]
        sweep: bool,
    },
    /// Check output, risk and criticality preservation on random embeddings
    /// of a checkpoint (`--tol`: gradient bound after embedding).
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Train many runs per width, cluster their critical points and report
    /// the Hessian degeneracy of each cluster after embedding.
    Diagram {
        #[command(flatten)]
        common: Common,
    },
    /// Merge similar neurons of a checkpoint and compare predictions.
    Reduce {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Similarity threshold (default from the config).
        #[arg(long)]
        sim: Option<f64>,
        /// Relative amplitude threshold (default from the config).
        #[arg(long)]
        amp: Option<f64>,
        /// Retrain the reduced network for this many epochs with `[train]` settings.
        #[arg(long)]
        retrain_epochs: Option<usize>,
    },
    /// Dataset utilities.
    Data {
        #[command(subcommand)]
        action: DataAction,
    },
}

#[derive(Debug, Subcommand)]
enum DataAction {
    /// Write the configured dataset as CSV (`--out`, or stdout).
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Summarize a checkpoint, CSV or IDX file.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        path: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { common } => commands::train(&common),
        Command::Embed { common, input, plan } => commands::embed(&common, &input, &plan),
        Command::Hessian { common, input, fd, sweep } => commands::hessian(&common, &input, fd, sweep),
        Command::Verify { common, input } => commands::verify(&common, &input),
        Command::Diagram { common } => commands::diagram(&common),
        Command::Reduce { common, input, sim, amp, retrain_epochs } => {
            commands::reduce(&common, &input, sim, amp, retrain_epochs)
        }
        Command::Data { action: DataAction::Gen { common } } => commands::data_gen(&common),
        Command::Data { action: DataAction::Inspect { common, path } } => commands::data_inspect(&common, &path),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}

/// The error chain joined by ": ", skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in e.chain() {
        let part = cause.to_string();
        if !text.contains(&part) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&part);
        }
    }
    text
}
