//! `sarp`: command-line pipeline for statistical arbitrage risk studies.
//!
//! Five subcommands share one resolved configuration: `gen` writes a
//! synthetic input set, `project` runs the elastic-net projection cycle,
//! `sort` builds fit-decile return series, `report` produces inference
//! tables and plot data, and `verify` runs oracle checks. Every run echoes
//! its resolved configuration into `run_manifest.csv`, and reruns of the
//! same manifest produce byte-identical outputs at any worker count.

mod config;
mod files;
mod gen;
mod project;
mod report;
mod sortcmd;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::FlagOverrides;

#[derive(Parser)]
#[command(
    name = "sarp",
    version,
    about = "Statistical arbitrage risk pipeline: synthetic panels, projections, sorts, reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat `key = value` configuration file; flags override file values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Projection months: 'all', a count, or YYYY-MM..YYYY-MM.
    #[arg(long, global = true, value_name = "RANGE")]
    months: Option<String>,

    /// Minimum trading days a focal asset needs in its trailing-year window.
    #[arg(long, global = true, value_name = "DAYS")]
    min_days: Option<usize>,

    /// Newey-West lag count for robust t-statistics.
    #[arg(long, global = true, value_name = "LAGS")]
    nw_lags: Option<usize>,

    /// Seed for every random stream in the run.
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,

    /// Worker threads for the projection cycle; never changes output bytes.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// Output directory; unconfigured input paths default into it.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// What to do when a weighted peer has no realized return.
    #[arg(long, global = true, value_name = "POLICY", value_parser = ["riskfree", "drop"])]
    missing_policy: Option<String>,

    /// Keep only projections whose replicate holds at least one risky asset.
    #[arg(long, global = true)]
    min_risky: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a complete synthetic input set into the output directory.
    Gen,
    /// Run the projection cycle and write fits and replicate weights.
    Project,
    /// Sort realized returns into fit deciles and characteristic cells.
    Sort,
    /// Build inference tables, performance summaries, and plot data.
    Report,
    /// Run oracle and invariant checks on synthetic data.
    Verify,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Project => "project",
            Command::Sort => "sort",
            Command::Report => "report",
            Command::Verify => "verify",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    let flags = FlagOverrides {
        config: cli.config,
        months: cli.months,
        min_days: cli.min_days,
        nw_lags: cli.nw_lags,
        seed: cli.seed,
        workers: cli.workers,
        out: cli.out,
        missing_policy: cli.missing_policy,
        min_risky: cli.min_risky,
    };
    let result = config::resolve(&flags).and_then(|cfg| {
        std::fs::create_dir_all(&cfg.out)
            .map_err(|e| config::CliError::Io(format!("cannot create {}: {e}", cfg.out.display())))?;
        match cli.command {
            Command::Gen => gen::run(&cfg),
            Command::Project => project::run(&cfg),
            Command::Sort => sortcmd::run(&cfg),
            Command::Report => report::run(&cfg),
            Command::Verify => verify::run(&cfg),
        }
    });
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error: {name}: {message}");
            ExitCode::FAILURE
        }
    }
}
