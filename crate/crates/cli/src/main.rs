use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use budgetcast::analysis::analyze;
use budgetcast::sim::{compare, emit_report, CompareRequest};
use budgetcast::{run_scenario, ConfigError, ScenarioConfig, Scheme, SimError, Validation};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "budgetcast", version, about = "Multi-tree streaming overlay simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Check {
    /// Validate the forest after every join.
    EveryJoin,
    /// Validate once at the end.
    Final,
}

impl From<Check> for Validation {
    fn from(c: Check) -> Self {
        match c {
            Check::EveryJoin => Validation::EveryJoin,
            Check::Final => Validation::Final,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write the report files.
    Run {
        /// Preset name (HM4-1 ... HT8-2) or path to a JSON scenario.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "proposed")]
        scheme: Scheme,
        /// Neighbors per joining peer; defaults to the scenario's value.
        #[arg(long)]
        neighbors: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "every-join")]
        check: Check,
    },
    /// Print the analytic bounds of a scenario as JSON.
    Analyze {
        #[arg(long)]
        scenario: String,
    },
    /// Run scenarios against the baseline over several seeds and tabulate.
    Compare {
        #[arg(long, value_delimiter = ',', required = true)]
        scenarios: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(name: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg = ScenarioConfig::load(name)?;
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(err: &anyhow::Error) -> ExitCode {
    match err.downcast_ref::<SimError>() {
        Some(SimError::Config(_)) => ExitCode::from(2),
        _ if err.downcast_ref::<ConfigError>().is_some() => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { scenario, scheme, neighbors, seed, out, check } => {
            let mut cfg = load(&scenario)?.with_seed(seed);
            if let Some(d) = neighbors {
                cfg = cfg.with_neighbors(d);
            }
            let outcome = run_scenario(&cfg, scheme, check.into())?;
            emit_report(&outcome, &out).with_context(|| format!("writing {}", out.display()))?;
            let m = &outcome.metrics;
            println!(
                "{} {} D={} seed={}: saturation {:.4}, hop-count {:.4}, requests {}, retries {}, incomplete {}",
                cfg.name,
                scheme.name(),
                cfg.neighbor_count,
                seed,
                m.avg_saturation,
                m.avg_hop_count,
                m.requests,
                m.retries,
                m.incomplete_peers.len()
            );
            outcome.require_complete()?;
        }
        Command::Analyze { scenario } => {
            let cfg = load(&scenario)?;
            let report = analyze(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Compare { scenarios, seeds, out } => {
            let configs = scenarios.iter().map(|s| load(s)).collect::<Result<Vec<_>, _>>()?;
            let table = compare(&CompareRequest::new(configs, seeds));
            fs::create_dir_all(&out)?;
            let markdown = table.to_markdown();
            fs::write(out.join("compare.md"), &markdown)?;
            fs::write(out.join("compare.csv"), table.to_csv())?;
            fs::write(out.join("compare.json"), serde_json::to_string_pretty(&table)? + "\n")?;
            print!("{markdown}");
            let incomplete: usize = table.cells.iter().map(|c| c.incomplete_peers).sum();
            if let Some(cell) = table.cells.iter().find(|c| !c.failures.is_empty()) {
                anyhow::bail!("{} {} failed: {}", cell.scenario, cell.scheme.name(), cell.failures[0]);
            }
            if incomplete > 0 {
                return Err(SimError::IncompleteRun { incomplete }.into());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code(&err)
        }
    }
}
