// SPDX-License-Identifier: Apache-2.0

//! `nv-eseem` command-line interface.
//!
//! Exit codes: 0 success, 1 I/O or input file problem, 2 configuration
//! error, 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nv_eseem::analysis::Window;
use nv_eseem::config::RunConfig;
use nv_eseem::experiment::{self, AnalysisOptions, RunError};

#[derive(Parser)]
#[command(name = "nv-eseem", version, about = "Echo envelope modulation of the NV center with its 14N nucleus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured sequence and write trace, spectrum, peaks and summary.
    Run { config: PathBuf },
    /// Compare the engine against the lab-frame reference propagation.
    Oracle { config: PathBuf },
    /// Parse and check a configuration without running it.
    Validate { config: PathBuf },
    /// Print the default configuration.
    Defaults,
    /// Baseline-subtract and transform an existing `time_us,signal` trace.
    Analyze {
        trace: PathBuf,
        /// Free-evolution time per unit τ (2 for Hahn, 2n for CPMG-n).
        #[arg(long, default_value_t = 2.0)]
        free_time_per_tau: f64,
        #[arg(long, default_value = "hann")]
        window: Window,
        #[arg(long, default_value_t = 4)]
        zero_pad: usize,
        #[arg(long, default_value_t = 0.1)]
        prominence: f64,
        /// Output directory (defaults to the trace's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn list(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Defaults => print!("{}", RunConfig::default().render()),
        Command::Validate { config } => {
            let cfg = experiment::load_config(&config)?;
            experiment::load_sequence(&cfg)?;
            println!("{}: ok", config.display());
        }
        Command::Run { config } => {
            let cfg = experiment::load_config(&config)?;
            let report = experiment::run_experiment(&cfg)?;
            let s = &report.summary;
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{}: {} points, t_pi/2 = {:.2} ns, depth = {:.4}, dominant peak = {}",
                s.sequence,
                s.n_points,
                1e3 * s.calibration.t_pi_half,
                s.modulation_depth,
                s.dominant_peak_mhz.map(|f| format!("{f:.3} MHz")).unwrap_or_else(|| "none".into())
            );
            if let Some(o) = &report.oracle {
                println!("oracle: max |engine - oracle| = {:.3e}", o.max_abs_diff);
            }
            list(&report.files);
        }
        Command::Oracle { config } => {
            let cfg = experiment::load_config(&config)?;
            let (report, files) = experiment::run_oracle(&cfg)?;
            println!("{} points: max |engine - oracle| = {:.3e}", report.n_points, report.max_abs_diff);
            list(&files);
        }
        Command::Analyze { trace, free_time_per_tau, window, zero_pad, prominence, out } => {
            if !(free_time_per_tau >= 0.0) || zero_pad == 0 || !(0.0..=1.0).contains(&prominence) {
                return Err(RunError::Config(nv_eseem::config::ConfigError {
                    line: None,
                    message: "need free-time-per-tau >= 0, zero-pad >= 1 and prominence in [0, 1]".into(),
                }));
            }
            let opts = AnalysisOptions { window, zero_pad, prominence };
            let dir = out.unwrap_or_else(|| trace.parent().map(Path::to_path_buf).unwrap_or_default());
            let (summary, files) = experiment::analyze_trace_file(&trace, free_time_per_tau, &opts, &dir)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
            list(&files);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
