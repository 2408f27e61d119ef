//! dlrrec: synthesize data, compute SWING similarities, co-train the
//! ranking model with contrastive losses, evaluate checkpoints, check
//! gradients, and emit the comparison table.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or config error,
//! 3 runtime numeric failure.

mod commands;
mod logging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dlrrec_core::Error;

#[derive(Parser)]
#[command(name = "dlrrec", version, about = "Recommender co-training toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic planted-cluster dataset directory.
    Synth {
        /// Synthesis config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute top-k SWING neighbor lists from interaction logs.
    Swing {
        /// Dataset directory holding interactions.jsonl.
        #[arg(long)]
        data: PathBuf,
        /// Which side to score: user or item.
        #[arg(long)]
        side: String,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 10)]
        topk: usize,
        /// Output sims.json path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train with the composite objective; writes per-run reports and an
    /// aggregate across repeats.
    Train {
        /// Run config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// User-side sims.json.
        #[arg(long = "user-sims")]
        user_sims: PathBuf,
        /// Item-side sims.json.
        #[arg(long = "item-sims")]
        item_sims: PathBuf,
        /// Output run directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's repeat count.
        #[arg(long)]
        repeats: Option<usize>,
        /// Override the channel mask (text | image | text_image | all, or
        /// a comma-separated channel list).
        #[arg(long)]
        mask: Option<String>,
        /// Override the run seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint against a dataset split.
    Eval {
        /// Path to best.ckpt inside a run directory.
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Which split to evaluate: train or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Assert the checkpoint was trained under this mask.
        #[arg(long)]
        mask: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Finite-difference gradient check over every op and the composite loss.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of random seeds per op.
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        /// Test fixture: corrupt the named op's gradient to force a failure.
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Group run directories into the comparison table.
    Report {
        /// Run directories produced by `train`.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Output directory for table.md and table.json.
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::NonFinite(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth { config, out } => commands::cmd_synth(&config, &out),
        Command::Swing {
            data,
            side,
            alpha,
            topk,
            out,
        } => commands::cmd_swing(&data, &side, alpha, topk, &out),
        Command::Train {
            config,
            data,
            user_sims,
            item_sims,
            out,
            repeats,
            mask,
            seed,
        } => commands::cmd_train(commands::TrainArgs {
            config: &config,
            data: &data,
            user_sims: &user_sims,
            item_sims: &item_sims,
            out: &out,
            repeats,
            mask,
            seed,
        }),
        Command::Eval {
            ckpt,
            data,
            split,
            mask,
            threshold,
        } => commands::cmd_eval(&ckpt, &data, &split, mask.as_deref(), threshold),
        Command::Gradcheck {
            seed,
            seeds,
            corrupt,
        } => return commands::cmd_gradcheck(seed, seeds, corrupt.as_deref()),
        Command::Report { runs, out } => commands::cmd_report(&runs, &out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
