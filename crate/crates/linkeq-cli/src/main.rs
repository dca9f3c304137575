//! `linkeq`: simulate a lossy serial link, fit the classical baseline,
//! train the recurrent equalizer, and compare all three receive pipelines.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use linkeq_cli::{commands, config, CliError};

#[derive(Parser)]
#[command(
    name = "linkeq",
    version,
    about = "Serial-link simulation and trainable equalization"
)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Rederive every named seed from this value.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the link: transmit bits, distort, add noise; write tx/rx
    /// CSVs and the unequalized eye image.
    Simulate,
    /// Fit FFE and DFE taps from the configured channel and write them as
    /// a labeled baseline section.
    FitBaseline,
    /// Train the equalizer and write the parameter ROM plus the training
    /// report.
    Train,
    /// Run a trained model over a fresh test stream; report BER and eye
    /// metrics.
    Evaluate {
        /// Parameter ROM to load (defaults to `<out>/model.rom`).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run raw, FFE-DFE and trained pipelines over the same stream and
    /// write the side-by-side report, waveform overlay and eye images.
    Compare {
        /// Parameter ROM to load (defaults to `<out>/model.rom`).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Fold a waveform CSV into an eye image and histogram grid.
    RenderEye {
        /// Waveform CSV to fold.
        #[arg(long)]
        input: PathBuf,
        /// Output PGM path (defaults to `<out>/eye.pgm`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            if e.usage {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::usage("--config <path> is required"))?;
    let exp = config::load(config_path, cli.seed, cli.out.clone())?;
    std::fs::create_dir_all(&exp.out_dir)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", exp.out_dir.display())))?;

    match cli.command {
        Command::Simulate => commands::simulate(&exp),
        Command::FitBaseline => commands::fit_baseline(&exp),
        Command::Train => commands::train(&exp),
        Command::Evaluate { model } => {
            let rom = model.unwrap_or_else(|| exp.out_dir.join("model.rom"));
            commands::evaluate(&exp, &rom)
        }
        Command::Compare { model } => {
            let rom = model.unwrap_or_else(|| exp.out_dir.join("model.rom"));
            commands::compare(&exp, &rom)
        }
        Command::RenderEye { input, output } => {
            let out = output.unwrap_or_else(|| exp.out_dir.join("eye.pgm"));
            commands::render_eye(&exp, &input, &out)
        }
    }
}
