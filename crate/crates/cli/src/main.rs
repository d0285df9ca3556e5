//! `newton-flow`: list, run and verify the problem zoo, and classify stored
//! trajectories.
//!
//! Exit status is 0 iff every gated certificate passes, 1 when a gate fails
//! and 2 when the run itself errors; errors are also printed to stderr as a
//! one-line JSON object with a machine-readable `reason`.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use newton_flow::experiment::{rates_from_csv, resolve_config, run_experiment, verify_all, RunOptions};
use newton_flow::zoo::{builtin, find, with_registry, zoo_list, ZooProblem};
use newton_flow::{Error, Result, Vector};

#[derive(Parser)]
#[command(name = "newton-flow", version, about = "Nonsmooth Newton-like flows: problem zoo and certificates")]
struct Cli {
    /// Registry extension file (`[[problem]]` tables) merged with the builtins.
    #[arg(long, global = true)]
    registry: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Problem catalog.
    Zoo {
        #[command(subcommand)]
        action: ZooAction,
    },
    /// Integrate one problem, certify it and write runs/<problem>/<timestamp>/.
    Run {
        problem: String,
        #[arg(long, allow_negative_numbers = true)]
        h: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        t_end: Option<f64>,
        /// min_norm | lexicographic | fixed_index:N | sign_bias:+ | sign_bias:-
        #[arg(long)]
        selection: Option<String>,
        /// direct | homotopy
        #[arg(long)]
        mode: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Flat key = value configuration file applied before the flags.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated initial point.
        #[arg(long, value_parser = parse_point)]
        x0: Option<Vector>,
    },
    /// Run a suite and print the summary table.
    Verify {
        #[arg(long, default_value = "default")]
        suite: String,
        /// `key=value` configuration overrides applied to every problem.
        #[arg(long = "set", value_parser = parse_pair)]
        overrides: Vec<(String, String)>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify the decay of a stored trajectory.csv towards x*.
    Rates {
        csv: PathBuf,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        x_star: Vector,
    },
}

#[derive(Subcommand)]
enum ZooAction {
    List,
}

fn parse_point(s: &str) -> std::result::Result<Vector, String> {
    let values = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Vector::from_vec(values))
}

fn parse_pair(s: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got '{s}'"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn load_zoo(registry: Option<&PathBuf>) -> Result<Vec<ZooProblem>> {
    match registry {
        Some(path) => with_registry(&fs::read_to_string(path)?),
        None => Ok(builtin()),
    }
}

fn execute(cli: Cli) -> Result<bool> {
    let zoo = load_zoo(cli.registry.as_ref())?;
    match cli.command {
        Command::Zoo { action: ZooAction::List } => {
            for e in zoo_list(&zoo) {
                println!(
                    "{:<18} d={:<2} {:<14} {:<12} {}",
                    e.name,
                    e.dim,
                    e.operator,
                    e.regime.as_deref().unwrap_or("-"),
                    e.summary
                );
            }
            Ok(true)
        }
        Command::Run {
            problem,
            h,
            t_end,
            selection,
            mode,
            seed,
            out,
            config,
            x0,
        } => {
            let p = find(&zoo, &problem)?;
            let text = config.map(fs::read_to_string).transpose()?;
            let mut overrides = Vec::new();
            let mut push = |k: &str, v: Option<String>| {
                if let Some(v) = v {
                    overrides.push((k.to_string(), v));
                }
            };
            push("step_h", h.map(|v| v.to_string()));
            push("t_end", t_end.map(|v| v.to_string()));
            push("selection", selection);
            push("mode", mode);
            let opts = RunOptions {
                config: resolve_config(p, text.as_deref(), &overrides)?,
                x0,
                seed,
                out_root: Some(out),
            };
            let outcome = run_experiment(p, &opts)?;
            for g in &outcome.report.gates {
                println!("{:<18} {:<5}  {}", g.name, g.verdict(), g.detail);
            }
            if let Some(dir) = &outcome.dir {
                println!("output: {}", dir.display());
            }
            Ok(outcome.passed())
        }
        Command::Verify { suite, overrides, out } => {
            let summary = verify_all(&suite, &zoo, &overrides, out.as_deref())?;
            print!("{}", summary.table());
            Ok(summary.passed)
        }
        Command::Rates { csv, x_star } => {
            let report = rates_from_csv(fs::File::open(csv)?, &x_star)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let err: Error = e;
            eprintln!(
                "{}",
                serde_json::json!({ "error": err.reason(), "message": err.to_string() })
            );
            ExitCode::from(2)
        }
    }
}
