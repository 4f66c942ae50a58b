mod commands;
mod settings;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Multi-scale positional encodings for spatially unbiased generators.
#[derive(Parser)]
#[command(name = "mspe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command that reads a run configuration.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML file with `key = value` settings.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// Override one setting, e.g. `--set steps=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// generator | denoiser
    #[arg(long)]
    pub model: Option<String>,
    /// baseline | ss-pe | ms-pe
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    /// Single-threaded numeric paths (the only paths this build has).
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a positional grid or pyramid plus per-channel heatmaps.
    BuildPe(commands::BuildPeArgs),
    /// Build the biased canvas dataset and write previews.
    BuildDataset(ConfigArgs),
    /// Train a generator or denoiser and write a checkpoint and loss log.
    Train(ConfigArgs),
    /// Generate images from a checkpoint, optionally shifted, resized or expanded.
    Generate(commands::GenerateArgs),
    /// Encode probe images partway and decode them with a trained denoiser.
    Reconstruct(commands::ReconstructArgs),
    /// Shift-consistency curves, noise probe and image comparisons.
    Report(commands::ReportArgs),
    /// Run the built-in invariant checks.
    Verify,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildPe(a) => commands::build_pe(&a),
        Command::BuildDataset(a) => commands::build_dataset(&a),
        Command::Train(a) => commands::train(&a),
        Command::Generate(a) => commands::generate(&a),
        Command::Reconstruct(a) => commands::reconstruct(&a),
        Command::Report(a) => commands::report(&a),
        Command::Verify => commands::verify(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
