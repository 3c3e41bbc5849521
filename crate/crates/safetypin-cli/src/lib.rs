//! Operator CLI: key ceremony, scenario runner, epoch driver, log auditor,
//! Monte-Carlo bound verifiers, and benchmark reporters.
//!
//! Exit codes: 0 success (including expected protocol failures), 2
//! invariant violation, 3 configuration or input error.

pub mod commands;
pub mod config;
pub mod state;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

#[derive(Parser)]
#[command(name = "safetypin-cli", about = "Encrypted-backup simulator operator surface")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Key ceremony: generate N HSM identities and puncturable keys into a
    /// fresh state directory.
    Init {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        state_dir: PathBuf,
        /// Overrides the seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a scenario file against an initialized state directory.
    Run {
        #[arg(long)]
        state_dir: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        /// Transcript output path (default: <state-dir>/transcript.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Epoch operations on an initialized state directory.
    Epoch {
        #[command(subcommand)]
        action: EpochAction,
    },
    /// Replay a log file and check its digest chain (the external-auditor
    /// path).
    VerifyLog {
        #[arg(long)]
        replay: PathBuf,
        #[arg(long)]
        digests: PathBuf,
    },
    /// Monte-Carlo checks of the analytic bounds; one CSV row per check.
    VerifyBounds {
        #[arg(long, value_parser = ["cover", "audit", "bloom", "correctness"])]
        which: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Timing and cost counters as CSV.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
pub enum EpochAction {
    /// Fold pending insertions into the log and have the HSMs adopt the
    /// new digest.
    Run {
        #[arg(long)]
        state_dir: PathBuf,
    },
    /// Adversary mode: build an epoch that overwrites an existing id and
    /// report which HSMs detect it.
    Forge {
        #[arg(long)]
        state_dir: PathBuf,
        #[arg(long)]
        overwrite_id: String,
    },
    /// Print the current log and epoch counters.
    Stats {
        #[arg(long)]
        state_dir: PathBuf,
    },
}

pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Init {
            config,
            state_dir,
            seed,
        } => commands::init(&config, &state_dir, seed),
        Command::Run {
            state_dir,
            scenario,
            out,
        } => commands::run_scenario(&state_dir, &scenario, out.as_deref()),
        Command::Epoch { action } => match action {
            EpochAction::Run { state_dir } => commands::epoch_run(&state_dir),
            EpochAction::Forge {
                state_dir,
                overwrite_id,
            } => commands::epoch_forge(&state_dir, &overwrite_id),
            EpochAction::Stats { state_dir } => commands::epoch_stats(&state_dir),
        },
        Command::VerifyLog { replay, digests } => commands::verify_log(&replay, &digests),
        Command::VerifyBounds {
            which,
            config,
            trials,
            seed,
            out,
        } => commands::verify_bounds(&which, &config, trials, seed, out.as_deref()),
        Command::Bench { config, seed, out } => commands::bench(&config, seed, out.as_deref()),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_CONFIG
        }
    }
}
