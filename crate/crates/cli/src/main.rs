use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

/// Tandem ASV + countermeasure experiments on synthetic data.
#[derive(Debug, Parser)]
#[command(name = "tandem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate train/dev/eval protocol and feature files.
    GenData {
        /// TOML configuration; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the ASV and CM scorers separately on the train split.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint file to write.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configuration stored with the data.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run one training method over several seeds, starting from a checkpoint.
    TrainTandem {
        #[arg(long)]
        method: String,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Number of repetitions; the configured count when omitted.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated attack ids removed for the filtered eval report.
        /// Pass an empty string to disable filtering.
        #[arg(long)]
        exclude_attacks: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score one split with a checkpoint and write the metric report.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        exclude_attacks: Option<String>,
        /// Report JSON; scores go next to it with a `.scores.txt` suffix.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "eval")]
        split: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Aggregate run records into comparison and learning-curve tables.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { config, out } => commands::gen_data(config.as_deref(), &out),
        Command::Pretrain { data, out, config } => commands::pretrain(&data, &out, config.as_deref()),
        Command::TrainTandem {
            method,
            ckpt,
            data,
            seeds,
            out,
            exclude_attacks,
            config,
        } => commands::train_tandem(&commands::TrainArgs {
            method: &method,
            ckpt: &ckpt,
            data: &data,
            seeds,
            out: &out,
            exclude_attacks: exclude_attacks.as_deref(),
            config: config.as_deref(),
        }),
        Command::Evaluate {
            ckpt,
            data,
            exclude_attacks,
            out,
            split,
            config,
        } => commands::evaluate(
            &ckpt,
            &data,
            exclude_attacks.as_deref(),
            &out,
            &split,
            config.as_deref(),
        ),
        Command::Report { runs, out } => commands::report(&runs, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
