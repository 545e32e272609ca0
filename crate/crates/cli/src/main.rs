//! `dfrc` — experiment driver for OFDM dual-function radar-communication
//! waveform studies.

use clap::{Parser, Subcommand};
use dfrc_cli::{load_config, run_experiment};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dfrc",
    about = "Optimize and validate OFDM radar-communication input distributions",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config: optimize per sweep point, simulate, and
    /// write op_curve.csv, allocation.csv and a manifest.
    Run {
        /// Path to a `key = value` experiment config.
        config: PathBuf,
    },
    /// Parse and validate a config, printing the resolved experiment.
    Validate {
        /// Path to a `key = value` experiment config.
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => match load_config(&config) {
            Ok(cfg) => {
                println!(
                    "ok: scenario '{}', {}x{} grid (cp {}), {:?}, {} sweep points, {} trials/point",
                    cfg.scenario,
                    cfg.subcarriers,
                    cfg.symbols,
                    cfg.cp_len,
                    cfg.scheme,
                    cfg.power_dbw_list.len(),
                    cfg.trials
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("config error: {e}");
                ExitCode::from(1)
            }
        },
        Command::Run { config } => {
            let cfg = match load_config(&config) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(1);
                }
            };
            match run_experiment(&cfg) {
                Ok(summary) => {
                    for p in &summary.points {
                        println!(
                            "P = {:+7.2} dBW  op = {:.5} ± {:.5}  (trials {})",
                            p.result.power_dbw, p.result.op_hat, p.result.ci95, p.result.trials
                        );
                    }
                    println!("results written to {}", summary.out_dir.display());
                    if summary.all_converged {
                        ExitCode::SUCCESS
                    } else {
                        eprintln!("warning: at least one optimizer hit its iteration cap");
                        ExitCode::from(2)
                    }
                }
                Err(dfrc_cli::RunError::Config(e)) => {
                    eprintln!("config error: {e}");
                    ExitCode::from(1)
                }
                Err(e) => {
                    eprintln!("run failed: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
