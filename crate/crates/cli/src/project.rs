//! `project`: runs the elastic-net projection cycle over the selected
//! month-ends and writes the per-asset fit summaries and replicate weights.

use chrono::NaiveDate;
use sarp_core::dates::{one_year_before, MonthKey};
use sarp_core::market_data::{DailyReturnPanel, MonthlyReturnPanel};
use sarp_core::replicate::{run_projection_cycle, CycleConfig};

use crate::config::{CliError, RunConfig};
use crate::files;

/// Month-ends the cycle can realize: the trailing-year window lies entirely
/// inside the daily panel and the following month has a risk-free rate, so
/// the replicate's cash leg is priced.
pub fn eligible_month_ends(
    daily: &DailyReturnPanel,
    monthly: &MonthlyReturnPanel,
) -> Vec<NaiveDate> {
    let first = match daily.dates().first() {
        Some(&d) => d,
        None => return Vec::new(),
    };
    daily
        .month_ends()
        .iter()
        .copied()
        .filter(|&me| {
            one_year_before(me) >= first
                && monthly.rf(MonthKey::from_date(me).next()).is_some()
        })
        .collect()
}

pub fn run(cfg: &RunConfig) -> Result<String, CliError> {
    let daily = DailyReturnPanel::load(&cfg.daily).map_err(|e| CliError::Data(e.to_string()))?;
    let monthly = MonthlyReturnPanel::load(&cfg.monthly_returns, &cfg.risk_free)
        .map_err(|e| CliError::Data(e.to_string()))?;

    let eligible = eligible_month_ends(&daily, &monthly);
    let selected = cfg.months.select(&eligible)?;

    let cycle = CycleConfig {
        cv: cfg.cv.clone(),
        min_days: cfg.min_days,
        policy: cfg.missing_policy,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Run(format!("cannot build worker pool: {e}")))?;
    let output = pool.install(|| run_projection_cycle(&daily, &monthly, &selected, &cycle));

    files::write_projections(&cfg.out.join("projections.csv"), &output.records)?;
    files::write_weights(&cfg.out.join("weights.csv"), &output.records)?;
    files::write_manifest(&cfg.out, &cfg.manifest_rows("project"))?;

    if !output.failures.is_empty() {
        eprintln!(
            "warning: {} projection windows were skipped (first: {} at {}: {})",
            output.failures.len(),
            output.failures[0].asset,
            output.failures[0].month_end,
            output.failures[0].reason
        );
    }
    let unconverged = output.records.iter().filter(|r| !r.converged).count();
    if unconverged > 0 {
        eprintln!("warning: {unconverged} projections did not meet the convergence certificate");
    }
    if output.records.is_empty() {
        eprintln!("warning: projection produced zero records");
    }

    Ok(format!(
        "project: {} records with {} realizations over {} month-ends into {}",
        output.records.len(),
        output.realizations.len(),
        selected.len(),
        cfg.out.display()
    ))
}
