use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use ris_alloc::{read_config, run_experiment, write_results_file, ExperimentId};

#[derive(Parser)]
#[command(name = "ris-alloc", version, about = "RIS-assisted beamforming and power allocation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML file and write a CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV; defaults to the config's `output` or `<experiment>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Use the full-size system instead of the desk-scale one.
        #[arg(long)]
        paper_scale: bool,
    },
    /// Print the known experiment ids.
    ListExperiments,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::ListExperiments => {
            for e in ExperimentId::ALL {
                println!("{:<14} {}", e.as_str(), e.description());
            }
        }
        Command::Run { config, out, trials, seed, paper_scale } => {
            let mut cfg = read_config(&config)?;
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if paper_scale {
                cfg.paper_scale = true;
            }
            let out = out
                .or_else(|| cfg.output.clone())
                .unwrap_or_else(|| PathBuf::from(format!("{}.csv", cfg.experiment.as_str())));
            let table = run_experiment(&cfg).with_context(|| format!("running {}", cfg.experiment))?;
            write_results_file(&table, &out)?;
            eprintln!("wrote {} rows to {}", table.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
