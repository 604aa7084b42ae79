//! `ttperc`: simulation, calibration, spin benchmark and event detector
//! runs from one entry point.
//!
//! Exit codes: 0 success, 2 usage, 3 config, 4 I/O, 5 module failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

mod commands;
mod config;
mod error;

use commands::calibrate::CalibrateArgs;
use commands::snn::SnnCommand;
use commands::Context;
use config::Config;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "ttperc", version, about = "Table tennis perception toolkit")]
struct Cli {
    /// Seed for every module; overrides seeds in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ball flights with event streams and spinning-ball images.
    Simulate,
    /// Event dataset for the detector.
    Events,
    /// Wand-based extrinsic calibration.
    Calibrate(CalibrateArgs),
    /// Spin estimation sweep over rates and axes.
    Spin,
    /// Spiking detector training and evaluation.
    Snn {
        #[command(subcommand)]
        command: SnnCommand,
    },
    /// Markdown summary of the results in a directory.
    Report {
        /// Directory holding results; defaults to the output directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Events => "events",
            Command::Calibrate(_) => "calibrate",
            Command::Spin => "spin",
            Command::Snn { command: SnnCommand::Train { .. } } => "snn train",
            Command::Snn { command: SnnCommand::Eval { .. } } => "snn eval",
            Command::Snn { command: SnnCommand::Compare { .. } } => "snn compare",
            Command::Report { .. } => "report",
        }
    }

    fn inputs(&self) -> Vec<String> {
        let show = |p: &PathBuf| p.display().to_string();
        match self {
            Command::Calibrate(a) => [&a.detections, &a.wand, &a.rig].into_iter().flatten().map(show).collect(),
            Command::Snn { command: SnnCommand::Train { data, .. } | SnnCommand::Compare { data, .. } } => {
                vec![show(data)]
            }
            Command::Snn { command: SnnCommand::Eval { data, weights } } => {
                std::iter::once(data).chain(weights).map(show).collect()
            }
            Command::Report { input } => input.iter().map(show).collect(),
            _ => Vec::new(),
        }
    }
}

/// Everything needed to rerun a command; written as `manifest.json`.
#[derive(Serialize)]
struct RunManifest<'a> {
    subcommand: String,
    args: Vec<String>,
    config_path: Option<String>,
    seed: Option<u64>,
    out: String,
    version: &'static str,
    inputs: Vec<String>,
    config: &'a Config,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = Config::load(cli.config.as_deref())?;
    std::fs::create_dir_all(&cli.out).map_err(|e| commands::io_error(&cli.out, e))?;
    let ctx = Context { out: cli.out.clone(), quiet: cli.quiet, seed: cli.seed, config };
    match &cli.command {
        Command::Simulate => commands::simulate::run(&ctx)?,
        Command::Events => commands::events::run(&ctx)?,
        Command::Calibrate(args) => commands::calibrate::run(&ctx, args)?,
        Command::Spin => commands::spin::run(&ctx)?,
        Command::Snn { command } => commands::snn::run(&ctx, command)?,
        Command::Report { input } => commands::report::run(&ctx, input.as_ref().unwrap_or(&cli.out))?,
    }
    let manifest = RunManifest {
        subcommand: cli.command.name().into(),
        args: std::env::args().skip(1).collect(),
        config_path: cli.config.as_ref().map(|p| p.display().to_string()),
        seed: cli.seed.or(ctx.config.seed),
        out: cli.out.display().to_string(),
        version: env!("CARGO_PKG_VERSION"),
        inputs: cli.command.inputs(),
        config: &ctx.config,
    };
    ctx.write_json("manifest.json", &manifest)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ttperc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
