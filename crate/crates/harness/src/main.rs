use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use covsem_harness::{Command, ExperimentConfig, HarnessError, RunContext};

/// Covert semantic communication experiments.
#[derive(Debug, Parser)]
#[command(name = "covsem", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// DEP, covert rate and BEP against jamming power.
    ChannelSweep,
    /// Generates the training and held-out toy image sets.
    MakeDataset,
    /// Trains the conditional denoiser.
    TrainCodec {
        /// Continue from the existing codec checkpoint.
        #[arg(long)]
        resume: bool,
        /// Stop after this many total optimizer steps.
        #[arg(long)]
        until: Option<u64>,
    },
    /// End-to-end SSIM over (bep, T_inf).
    RegenGrid,
    /// Tabulates the SSIM surrogate for the allocator.
    BuildSurrogate,
    /// Trains the diffusion-policy allocator.
    TrainAllocator,
    /// Compares policy, oracle and hill-climbing on held-out conditions.
    Eval {
        /// Policy checkpoint; defaults to `paths.policy`.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<serde_json::Value, HarnessError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| HarnessError::Config {
            path: "--threads".into(),
            message: e.to_string(),
        })?;
    }
    let config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let command = match cli.command {
        Cmd::ChannelSweep => Command::ChannelSweep,
        Cmd::MakeDataset => Command::MakeDataset,
        Cmd::TrainCodec { resume, until } => Command::TrainCodec { resume, until },
        Cmd::RegenGrid => Command::RegenGrid,
        Cmd::BuildSurrogate => Command::BuildSurrogate,
        Cmd::TrainAllocator => Command::TrainAllocator,
        Cmd::Eval { policy } => Command::Eval { policy },
    };
    RunContext::new(config, cli.out, cli.seed).run(&command)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", serde_json::json!({ "error": { "kind": "usage", "message": msg.trim() } }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
