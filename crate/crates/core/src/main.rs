use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use autobalancer::metrics::{run_baseline_comparison, Mode};
use autobalancer::report::{write_comparison, write_report, Format};
use autobalancer::scenario::{load_scenario, ScenarioConfig, ScenarioError};
use autobalancer::sim::run;

const EXIT_INVALID: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(name = "autobalancer", version, about = "Seeded simulator for network-level AMM price balancing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write JSON and CSV reports.
    Run {
        scenario: PathBuf,
        /// Defaults to the first seed listed in the scenario.
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to the scenario's mode.
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run several modes over several seeds and write a comparison table.
    Compare {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [Mode::Off, Mode::Autobalancer, Mode::External])]
        modes: Vec<Mode>,
        /// Defaults to the scenario's seed list.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check a scenario file and report every problem found.
    Validate { scenario: PathBuf },
}

fn load(path: &Path) -> Result<ScenarioConfig, ExitCode> {
    load_scenario(path).map_err(|e| {
        eprintln!("{e}");
        match e {
            ScenarioError::Io { .. } | ScenarioError::Parse(_) | ScenarioError::Invalid(_) => ExitCode::from(EXIT_INVALID),
        }
    })
}

fn runtime_error(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_RUNTIME)
}

fn execute(cli: Cli) -> Result<(), ExitCode> {
    match cli.command {
        Command::Validate { scenario } => {
            let config = load(&scenario)?;
            println!("ok: {} ({})", config.name, config.config_hash());
        }
        Command::Run { scenario, seed, mode, out } => {
            let config = load(&scenario)?;
            let seed = seed.unwrap_or(config.seeds[0]);
            let mode = mode.unwrap_or(config.mode);
            let report = run(&config, seed, mode).map_err(runtime_error)?;
            let stem = format!("{}-{}-{}", config.name, mode, seed);
            for format in [Format::Json, Format::Csv] {
                let path = write_report(&report, format, &out, &stem).map_err(runtime_error)?;
                println!("wrote {}", path.display());
            }
            let t = &report.totals;
            println!(
                "blocks {}  committed {}  captured {}  leaked {}  mean discrepancy {:.6}",
                t.blocks, t.balancer_committed, t.captured_value, t.leaked_value, t.time_avg_discrepancy
            );
        }
        Command::Compare { scenario, modes, seeds, out } => {
            let config = load(&scenario)?;
            let seeds = if seeds.is_empty() { config.seeds.clone() } else { seeds };
            let report = run_baseline_comparison(&config, &modes, &seeds).map_err(runtime_error)?;
            for path in write_comparison(&report, &out).map_err(runtime_error)? {
                println!("wrote {}", path.display());
            }
            for s in &report.summaries {
                println!(
                    "{:<13} discrepancy {:.6} ± {:.6}  captured {:.4}  leaked {:.4}",
                    s.mode.as_str(),
                    s.mean_discrepancy,
                    s.std_discrepancy,
                    s.mean_captured,
                    s.mean_leaked
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
