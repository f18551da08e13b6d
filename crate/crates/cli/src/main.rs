use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crashsim::cluster::six_nines_budget;
use crashsim::harness::presets::run_preset;
use crashsim::harness::{run_scenario, HarnessError};
use crashsim::recoverymgr::{detection_headroom, fp_headroom};

/// Crash-only microreboot simulator.
#[derive(Debug, Parser)]
#[command(name = "crashsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario file and write its metrics.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a canned experiment.
    Preset {
        /// One of: table3, fig1, fig3, fig5a, fig5b, fig6, table2, table6, sec61.
        name: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Incidents per year that still meet an availability target.
    Budget {
        #[arg(long)]
        requests_per_year: f64,
        #[arg(long)]
        per_incident: f64,
        #[arg(long, default_value_t = 0.999999)]
        nines: f64,
    },
    /// How much worse detection may be before microreboots stop paying off.
    Headroom {
        #[arg(long)]
        c_micro: f64,
        #[arg(long)]
        c_full: f64,
        /// Failed requests per second while a fault goes undetected.
        #[arg(long)]
        rate: Option<f64>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn run(cmd: Command) -> Result<(), (u8, String)> {
    match cmd {
        Command::Run { scenario, seed, out } => {
            let s = run_scenario(&scenario, seed, &out).map_err(|e| match e {
                HarnessError::Invariant(_) => (3, e.to_string()),
                _ => (2, e.to_string()),
            })?;
            println!(
                "{}: {} good / {} bad requests, {} incidents, {} recoveries -> {}",
                s.name,
                s.taw.good_requests,
                s.taw.bad_requests,
                s.incidents.len(),
                s.recoveries.len(),
                out.display()
            );
        }
        Command::Preset { name, out, seed } => {
            let p = run_preset(&name, seed).map_err(|e| (2, e.to_string()))?;
            for r in &p.runs {
                let v = r.result.violations();
                if !v.is_empty() {
                    return Err((3, format!("{}: {}", r.label, v.join("; "))));
                }
            }
            p.write(&out).map_err(|e| (2, e.to_string()))?;
            print!("{}", p.report);
        }
        Command::Budget {
            requests_per_year,
            per_incident,
            nines,
        } => {
            let n = six_nines_budget(requests_per_year, per_incident, nines).map_err(|e| (2, e.to_string()))?;
            println!("{n}");
        }
        Command::Headroom { c_micro, c_full, rate } => {
            let (n, fp) = fp_headroom(c_micro, c_full).map_err(|e| (2, e.to_string()))?;
            println!("false positives: n = {n}, rate = {:.0}%", fp * 100.0);
            if let Some(rate) = rate {
                let t = detection_headroom(rate, c_micro, c_full).map_err(|e| (2, e.to_string()))?;
                println!("detection time: {t:.1} s");
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arguments_parse() {
        Cli::try_parse_from(["crashsim", "preset", "fig1", "--out", "x"]).unwrap();
        assert!(Cli::try_parse_from(["crashsim", "run", "--seed", "1"]).is_err());
    }
}
