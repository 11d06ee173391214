use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use xros_core::engine::{run, RunOptions};
use xros_core::report::write_outputs;
use xros_core::scenario::Scenario;
use xros_core::world_model::read_store;

/// Exit status when a run finishes but breaks an invariant.
const EXIT_VIOLATION: u8 = 1;
/// Exit status for unreadable or invalid input and I/O failures.
const EXIT_INPUT: u8 = 2;

#[derive(Parser)]
#[command(name = "xros", version, about = "Deterministic XR-OS simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the report files.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replaces the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Sets a scalar field by dotted path, e.g. `links.0.loss_p=0.2`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Also write render_list.csv.
        #[arg(long)]
        render: bool,
    },
    /// Load and validate a scenario without running it.
    Check {
        scenario: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn load(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<Scenario> {
    let mut all = overrides.to_vec();
    if let Some(s) = seed {
        all.push(format!("seed={s}"));
    }
    Ok(Scenario::load(path, &all)?)
}

fn initial_world(scenario: &Scenario, path: &Path) -> Result<Vec<xros_core::world_model::WorldElement>> {
    let Some(rel) = &scenario.world_store else { return Ok(Vec::new()) };
    let store = path.parent().unwrap_or(Path::new(".")).join(rel);
    let text = std::fs::read_to_string(&store).with_context(|| format!("reading world store {}", store.display()))?;
    read_store(&text).with_context(|| format!("parsing world store {}", store.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario, out, seed, overrides, render } => {
            let loaded = load(&scenario, &overrides, seed).and_then(|s| initial_world(&s, &scenario).map(|w| (s, w)));
            let (sc, world) = match loaded {
                Ok(v) => v,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    return ExitCode::from(EXIT_INPUT);
                }
            };
            let output = run(&sc, &world, RunOptions { record_render: render, ..RunOptions::default() });
            if let Err(e) = write_outputs(&out, &output, render) {
                eprintln!("error: writing {}: {e}", out.display());
                return ExitCode::from(EXIT_INPUT);
            }
            match &output.violation {
                None => {
                    println!("ok: {} events, outputs in {}", output.events_processed, out.display());
                    ExitCode::SUCCESS
                }
                Some(v) => {
                    eprintln!("violation [{}]: {v}", v.name());
                    ExitCode::from(EXIT_VIOLATION)
                }
            }
        }
        Command::Check { scenario, overrides } => match load(&scenario, &overrides, None) {
            Ok(s) => {
                println!("ok: {} apps, {} us", s.apps.len(), s.duration_us);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(EXIT_INPUT)
            }
        },
    }
}
