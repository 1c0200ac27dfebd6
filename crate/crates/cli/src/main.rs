//! `levy-cusum`: run change-point detection experiments from a config file.

mod commands;
mod config;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Artifacts, Failure};
use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "levy-cusum", version, about = "Quickest change-point detection for Levy processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Check admissibility and print the likelihood constants.
    Validate,
    /// Simulate runs of the detector at the configured change-point.
    Simulate,
    /// Estimate the average run length.
    Arl,
    /// Calibrate the barrier to the false-alarm budget `detector.gamma`.
    Calibrate,
    /// Worst-case detection delay over `experiment.tau_grid`.
    Lorden,
    /// Lower-bound functional of a grid rule.
    Lowerbound,
    /// Stop times over dyadic monitoring grids.
    Converge,
    /// Compare rules calibrated to the same false-alarm budget.
    Compare,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Simulate => "simulate",
            Command::Arl => "arl",
            Command::Calibrate => "calibrate",
            Command::Lorden => "lorden",
            Command::Lowerbound => "lowerbound",
            Command::Converge => "converge",
            Command::Compare => "compare",
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("missing --config <path>".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut config =
        ExperimentConfig::parse(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = cli.seed {
        config.simulation.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    config.resolve();
    Ok(config)
}

#[cfg(feature = "parallel")]
fn set_threads(threads: Option<usize>) -> Result<(), Failure> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(format!("cannot start {n} worker threads: {e}")))?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn set_threads(_threads: Option<usize>) -> Result<(), Failure> {
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    set_threads(cli.threads)?;
    let config = load(cli)?;
    let model = config.change_model()?;
    let command = cli.command;
    if !matches!(command, Command::Validate) {
        model.ensure_admissible()?;
    }
    let artifacts: Artifacts = match command {
        Command::Validate => commands::validate(&config, &model)?,
        Command::Simulate => commands::simulate(&config, &model)?,
        Command::Arl => commands::arl(&config, &model)?,
        Command::Calibrate => commands::calibrate(&config, &model)?,
        Command::Lorden => commands::lorden(&config, &model)?,
        Command::Lowerbound => commands::lowerbound(&config, &model)?,
        Command::Converge => commands::converge(&config, &model)?,
        Command::Compare => commands::compare_rules(&config, &model)?,
    };
    commands::write_artifacts(&config.output.dir, command.name(), &config, &model, &artifacts)?;
    for line in &artifacts.summary {
        println!("{line}");
    }
    println!("artifacts written to {}", config.output.dir.display());
    // a rejected model is reported after its summary is on disk
    model.ensure_admissible()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!(
                "error_category={} message={}",
                failure.category(),
                failure.message()
            );
            ExitCode::from(failure.exit_code())
        }
    }
}
