//! `cardiac`: mesh and fiber generation, registration, forward simulation and
//! conductivity calibration from the command line.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::{RunConfig, CONFIG_KEYS};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "cardiac", version, about, after_help = CONFIG_KEYS)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Mesh file written by gen-mesh; replaces the [mesh] section.
    #[arg(long, global = true)]
    mesh: Option<PathBuf>,
    /// Output directory [default: out; report prints only unless given].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Assembly worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed for synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a hexahedral mesh and write mesh.vtk.
    #[command(after_help = CONFIG_KEYS)]
    GenMesh,
    /// Rule-based fiber field on a mesh; writes fibers.vtk.
    #[command(after_help = CONFIG_KEYS)]
    GenFibers,
    /// Align measurements with the mesh and form groups I and II.
    #[command(after_help = CONFIG_KEYS)]
    Register,
    /// One forward simulation; writes activation.vtk and snapshots.
    #[command(after_help = CONFIG_KEYS)]
    Simulate,
    /// Fit the conductivities to group I; evaluate on group II.
    #[command(after_help = CONFIG_KEYS)]
    Calibrate,
    /// Summarize the output directory of a calibrate run.
    Report {
        /// Directory holding trace.csv, report.csv and result.toml.
        dir: PathBuf,
    },
    /// Synthetic measurement set from a known ground truth.
    #[command(after_help = CONFIG_KEYS)]
    GenTwin,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Report { dir } = &cli.command {
        return commands::report(dir, cli.out.as_deref());
    }
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    config.validate()?;
    if cli.workers == Some(0) {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let ctx = Context {
        config,
        mesh_path: cli.mesh,
        out: cli.out.unwrap_or_else(|| PathBuf::from("out")),
        workers: cli.workers,
        seed: cli.seed,
    };
    match cli.command {
        Command::GenMesh => commands::gen_mesh(&ctx),
        Command::GenFibers => commands::gen_fibers(&ctx),
        Command::Register => commands::register_cmd(&ctx),
        Command::Simulate => commands::simulate_cmd(&ctx),
        Command::Calibrate => commands::calibrate_cmd(&ctx),
        Command::GenTwin => commands::gen_twin(&ctx),
        Command::Report { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
