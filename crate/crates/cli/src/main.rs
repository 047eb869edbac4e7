//! `vkge`: generate planted datasets, run the staged training, evaluate the
//! five ranking tasks, export embeddings, and run the baseline systems.
//!
//! Exit codes: 0 success, 2 configuration error, 3 capability error
//! (a method asked to perform a task it cannot), 4 numeric divergence,
//! 1 anything else.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vkge_core::error::Error;

use commands::{ModeSel, VideoSel};

#[derive(Parser)]
#[command(name = "vkge", version, about = "Joint video / tag / knowledge-graph embedding engine")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset bundle from the [synth] config section.
    Gen {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the dataset files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run training stages and write a checkpoint plus a per-epoch loss CSV.
    Train {
        /// 1, 2, 3 or all.
        #[arg(long)]
        stage: String,
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory produced by `gen` (or assembled by hand).
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Loss log path (default: next to the checkpoint).
        #[arg(long)]
        loss_log: Option<PathBuf>,
    },
    /// Rank the requested tasks with a trained checkpoint and emit CSV.
    Eval {
        /// vt, tv, trt, vrt, vrv or all.
        #[arg(long, default_value = "all")]
        task: String,
        /// raw, filtered or both.
        #[arg(long, default_value = "both")]
        mode: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional per-query rank dump.
        #[arg(long)]
        ranks: Option<PathBuf>,
        /// Which videos feed the retrieval tasks: all, train or test.
        #[arg(long, default_value = "all")]
        videos: String,
        /// Fraction of the seeded video split assigned to train.
        #[arg(long, default_value_t = 0.9)]
        split_fraction: f64,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        /// VRV candidate scoring: distance or cosine.
        #[arg(long, default_value = "distance")]
        vrv_score: String,
    },
    /// Export embeddings or a 2D principal-component projection.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// embeddings or projection2d.
        #[arg(long)]
        what: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "all")]
        videos: String,
        #[arg(long, default_value_t = 0.9)]
        split_fraction: f64,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
    },
    /// Train and evaluate one baseline end to end.
    Baseline {
        /// transe, transh, transr, clip, clip+transe, clip+transh, clip+transr.
        #[arg(long)]
        method: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "all")]
        task: String,
        #[arg(long, default_value = "all")]
        videos: String,
        #[arg(long, default_value_t = 0.9)]
        split_fraction: f64,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        /// Save the trained model(s) as checkpoint(s).
        #[arg(long)]
        save_checkpoint: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> vkge_core::Result<()> {
    match cli.cmd {
        Cmd::Gen { config, out } => commands::cmd_gen(&config, &out),
        Cmd::Train {
            stage,
            config,
            data,
            resume,
            out,
            loss_log,
        } => commands::cmd_train(
            &stage,
            &config,
            &data,
            resume.as_deref(),
            &out,
            loss_log.as_deref(),
        ),
        Cmd::Eval {
            task,
            mode,
            checkpoint,
            data,
            out,
            ranks,
            videos,
            split_fraction,
            split_seed,
            vrv_score,
        } => commands::cmd_eval(
            &task,
            ModeSel::parse(&mode)?,
            &checkpoint,
            &data,
            &out,
            ranks.as_deref(),
            VideoSel::parse(&videos)?,
            split_fraction,
            split_seed,
            commands::parse_vrv_score(&vrv_score)?,
        ),
        Cmd::Export {
            checkpoint,
            data,
            what,
            out,
            videos,
            split_fraction,
            split_seed,
        } => commands::cmd_export(
            &checkpoint,
            &data,
            &what,
            &out,
            VideoSel::parse(&videos)?,
            split_fraction,
            split_seed,
        ),
        Cmd::Baseline {
            method,
            config,
            data,
            out,
            task,
            videos,
            split_fraction,
            split_seed,
            save_checkpoint,
        } => commands::cmd_baseline(
            &method,
            &config,
            &data,
            &out,
            &task,
            VideoSel::parse(&videos)?,
            split_fraction,
            split_seed,
            save_checkpoint.as_deref(),
        ),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } => 2,
        Error::Capability { .. } => 3,
        Error::NonFinite(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
