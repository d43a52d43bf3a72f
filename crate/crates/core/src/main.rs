use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use num_complex::Complex64;

use mbvp_core::config::{load_config, run};
use mbvp_core::dispersion::{solve_growth_rate, DispersionParams};
use mbvp_core::experiments::EXPERIMENTS;
use mbvp_core::Result;

/// Particle-in-cell ion dynamics with Boltzmann electrons.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation described by a key = value config file.
    Run { config: PathBuf },
    /// Solve the two-stream dispersion relation for the most unstable root.
    #[command(allow_negative_numbers = true)]
    Dispersion {
        k: f64,
        v0: f64,
        vt: f64,
        te: f64,
        ti: f64,
    },
    /// Print the names of the canned experiments.
    ListExperiments,
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            let summary = run(&cfg)?;
            let last = summary.final_record;
            eprintln!(
                "{} steps, t = {:.6}, relative energy error {:.3e}, series in {}",
                summary.steps,
                last.t,
                last.h_err_rel,
                summary.series.display()
            );
        }
        Command::Dispersion { k, v0, vt, te, ti } => {
            let params = DispersionParams::new(k, v0, vt, te, ti)?;
            let guess = Complex64::new(0.0, 0.5 * k * v0.abs().max(vt));
            let omega = solve_growth_rate(&params, guess)?;
            println!("omega = {:.10} {:+.10}i", omega.re, omega.im);
            println!("growth rate = {:.10}", omega.im);
        }
        Command::ListExperiments => {
            for name in EXPERIMENTS {
                println!("{name}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
