//! `iuq` — experiment runner for uncertainty-aware intrinsic image
//! decomposition and split-protocol audits.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use iuq::config::ExperimentConfig;
use iuq::experiments::{resolve, run_experiment};

#[derive(Parser)]
#[command(name = "iuq", version, about = "intrinsic decomposition with uncertainty: experiments, reports, figures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        /// Experiment name; must match the config's `experiment` field.
        experiment: String,
        /// Path to the TOML config.
        #[arg(long)]
        config: PathBuf,
        /// Rendered-layer dataset root (overrides [data.sintel].root).
        #[arg(long)]
        data_root: Option<PathBuf>,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Max concurrently running jobs.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Re-aggregate and print the tables of a finished experiment.
    Report {
        out_dir: PathBuf,
    },
    /// Render calibration scatter plots and qualitative grids.
    Figures {
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            experiment,
            config,
            data_root,
            out,
            jobs,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            if cfg.experiment.name() != experiment {
                anyhow::bail!(
                    "config declares experiment '{}', command line asked for '{}'",
                    cfg.experiment.name(),
                    experiment
                );
            }
            let resolved = resolve(&cfg, out.as_deref(), data_root.as_deref(), jobs)?;
            let outcome = run_experiment(&resolved)?;
            for t in &outcome.tables {
                println!("{}", t.to_text());
            }
            if !outcome.failures.is_empty() {
                eprintln!("{} job(s) failed:", outcome.failures.len());
                for (run_id, err) in &outcome.failures {
                    eprintln!("  {run_id}: {err}");
                }
                return Ok(ExitCode::from(2));
            }
            println!(
                "{} run(s) complete; artifacts under {}",
                outcome.reports.len(),
                outcome.out_dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { out_dir } => {
            let (kind, reports) = iuq::report::load_experiment(&out_dir)?;
            let (tables, _) = iuq::experiments::aggregate_tables(kind, &reports)?;
            for t in &tables {
                t.write(&out_dir)?;
                println!("{}", t.to_text());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Figures { out_dir } => {
            let n = iuq::figures::emit_figures(&out_dir)?;
            println!("wrote {n} figure(s) under {}", out_dir.join("figures").display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
