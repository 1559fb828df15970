use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use flexcap_cli::pipeline::{self, Mode};
use flexcap_cli::{exit_code, RunConfig};

#[derive(Parser)]
#[command(name = "flexcap", version, about = "Spectral flexibility capacity of thermal load ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the net-demand model and write the balancing reference.
    FitReference {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve for the capacity spectral density.
    Capacity {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte-Carlo check of a computed capacity.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write plot-ready tables from an output directory.
    Figures {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(config: &PathBuf, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::FitReference { config, out, seed } => {
            let cfg = load(&config, seed)?;
            let r = pipeline::fit_reference(&cfg)?;
            pipeline::write_reference(&out, &cfg, &r)?;
            println!(
                "reference written to {} (fit residual {:.3e})",
                out.display(),
                r.fit.residual
            );
        }
        Command::Capacity { config, mode, out, seed } => {
            let cfg = load(&config, seed)?;
            let sba = pipeline::load_sba(&out, &cfg)?;
            let run = pipeline::compute_capacity(&cfg, &sba, mode)?;
            pipeline::write_capacity(&out, &cfg, &run)?;
            println!(
                "{}: objective {:.6e}, active {:?}, {} iterations",
                mode.as_str(),
                run.result.objective_value,
                run.result.active_constraints,
                run.result.iterations
            );
        }
        Command::Validate { config, mode, out, seed } => {
            let cfg = load(&config, seed)?;
            let theta = pipeline::load_theta(&out, mode)?;
            let report = pipeline::run_validation(&cfg, mode, &theta)?;
            pipeline::write_validation(&out, &cfg, mode, &report)?;
            for c in &report.channels {
                println!(
                    "{:8} P(|Z| >= c) = {:.4} +/- {:.4} (epsilon {})",
                    c.channel, c.violation_probability, c.halfwidth, c.epsilon
                );
            }
        }
        Command::Figures { out } => {
            for p in pipeline::write_figures(&out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
