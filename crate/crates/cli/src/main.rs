use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pnpjko::commands::{self, DEFAULT_OUTPUT_ROOT, OUTPUT_ROOT_ENV};
use pnpjko::config;
use pnpjko::Failure;

/// Two-species Nernst–Planck–Poisson by minimizing movements.
#[derive(Parser)]
#[command(name = "pnpjko", version)]
struct Cli {
    /// Root directory for run artifacts.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV, default_value = DEFAULT_OUTPUT_ROOT)]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run {
        config: PathBuf,
        /// Dotted-path override, e.g. `model.h=0.005`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Exit with status 3 when a diagnostic check fails.
        #[arg(long)]
        strict: bool,
    },
    /// Run one scenario per value of a config key.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: String,
        /// Comma-separated values; may be empty.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        strict: bool,
    },
    /// Check a config without running it.
    Validate {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Compare two trajectories (run directories or trajectory.json files).
    Compare { a: PathBuf, b: PathBuf },
}

fn overrides(raw: &[String]) -> Result<Vec<(String, toml::Value)>, Failure> {
    raw.iter().map(|s| config::parse_assignment(s)).collect()
}

fn dispatch(cli: Cli) -> Result<i32, Failure> {
    let root = cli.output_root;
    match cli.command {
        Command::Run { config: path, overrides: o, strict } => {
            let loaded = config::load(&path, &overrides(&o)?)?;
            let s = commands::run(&loaded, &root, strict)?;
            println!("run complete: {}", s.out_dir.display());
            println!("config_hash={} steps={} final_energy={:e}", s.config_hash, s.steps, s.final_energy);
            if let Some(g) = s.oracle {
                println!("oracle gap_u={:e} gap_v={:e}", g.gap_u, g.gap_v);
            }
            if let Some(p) = s.diagnostics_passed {
                println!("diagnostics: {}", if p { "pass" } else { "FAIL" });
            }
            if s.unconverged_steps > 0 {
                eprintln!("warning: {} steps stopped before the inner tolerance", s.unconverged_steps);
            }
            Ok(pnpjko::EXIT_OK)
        }
        Command::Sweep { config: path, axis, values, overrides: o, strict } => {
            let values: Vec<String> =
                values.split(',').map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect();
            let (rows, file, code) = commands::sweep(&path, &overrides(&o)?, &axis, &values, &root, strict)?;
            println!("{:<16} {:<20} {:>14} {:>12} {:>12}", axis, "status", "final_energy", "gap_u", "gap_v");
            let num = |x: Option<f64>| x.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".into());
            for r in &rows {
                println!(
                    "{:<16} {:<20} {:>14} {:>12} {:>12}",
                    r.value,
                    r.status,
                    num(r.final_energy),
                    num(r.gap_u),
                    num(r.gap_v)
                );
                if !r.error.is_empty() {
                    eprintln!("{}={}: {}", axis, r.value, r.error);
                }
            }
            println!("summary: {}", file.display());
            Ok(code)
        }
        Command::Validate { config: path, overrides: o } => {
            let loaded = config::load(&path, &overrides(&o)?)?;
            let hash = commands::validate(&loaded)?;
            println!("{}: ok (config_hash={hash})", path.display());
            Ok(pnpjko::EXIT_OK)
        }
        Command::Compare { a, b } => {
            let rows = commands::compare(&a, &b)?;
            print!("{}", commands::compare_csv(&rows));
            let max = rows.iter().map(|r| r.l1_u.max(r.l1_v)).fold(0.0, f64::max);
            eprintln!("max L1 gap {max:e} over {} times", rows.len());
            Ok(pnpjko::EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { pnpjko::EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(f) => {
            eprintln!("error: {}", f.message.trim_end());
            ExitCode::from(f.code as u8)
        }
    }
}
