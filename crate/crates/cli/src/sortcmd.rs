//! `sort`: rebuilds the projection records from the projection outputs,
//! realizes their one-month-ahead focal and replicate legs, and writes the
//! fit-decile return series (plain and min-risky), the bivariate dependent
//! sorts, and the per-bin characteristic summary.

use std::collections::{BTreeSet, HashMap};

use chrono::NaiveDate;
use sarp_core::dates::MonthKey;
use sarp_core::market_data::{
    AssetId, CharacteristicsTable, DailyReturnPanel, FactorTable, MonthlyReturnPanel,
};
use sarp_core::replicate::{long_short_return, replicate_return, Realization};
use sarp_core::sort::{
    bin_summary, build_bin_series, build_bivariate_series, compute_characteristics,
    CharacteristicVector, SummaryStats, CHARACTERISTIC_NAMES,
};

use crate::config::{CliError, RunConfig};
use crate::files;

/// Realizes each record's following month with the same arithmetic the
/// projection cycle used; records whose focal has no return that month are
/// skipped, exactly as the cycle skipped them.
fn realize(
    records: &[sarp_core::replicate::ProjectionRecord],
    monthly: &MonthlyReturnPanel,
    cfg: &RunConfig,
) -> Result<Vec<Realization>, CliError> {
    let mut out = Vec::with_capacity(records.len());
    for record in records {
        let month = MonthKey::from_date(record.month_end).next();
        let replicate = replicate_return(record, monthly, month, cfg.missing_policy)
            .map_err(|e| CliError::Data(e.to_string()))?;
        let focal = monthly.value_by_id(&record.focal, month);
        if let (Some(rep), Some(foc)) = (replicate, focal) {
            let rf = monthly.rf(month).ok_or_else(|| {
                CliError::Data(format!("missing risk-free rate for {month}"))
            })?;
            out.push(Realization {
                month_end: record.month_end,
                asset: record.focal.clone(),
                month,
                focal_return: foc,
                replicate_return: rep,
                long_short: long_short_return(foc, rep),
                rf,
            });
        }
    }
    Ok(out)
}

pub fn run(cfg: &RunConfig) -> Result<String, CliError> {
    let records = files::read_projection_records(
        &cfg.out.join("projections.csv"),
        &cfg.out.join("weights.csv"),
    )?;
    if records.is_empty() {
        return Err(CliError::Run("no projection records to sort".into()));
    }
    let monthly = MonthlyReturnPanel::load(&cfg.monthly_returns, &cfg.risk_free)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let realizations = realize(&records, &monthly, cfg)?;

    let (assignments, series) = build_bin_series(&records, &realizations, false)
        .map_err(|e| CliError::Run(e.to_string()))?;
    let (_, series_min_risky) = build_bin_series(&records, &realizations, true)
        .map_err(|e| CliError::Run(e.to_string()))?;
    if series.is_empty() {
        eprintln!("warning: no month had enough realized assets to sort");
    }
    files::write_bins(&cfg.out.join("bins.csv"), &series)?;
    files::write_bins(&cfg.out.join("bins_min_risky.csv"), &series_min_risky)?;

    // Characteristics: the table itself is optional (its columns just stay
    // empty), the daily panel and factor table are not.
    let chars = if cfg.characteristics.exists() {
        CharacteristicsTable::load(&cfg.characteristics)
            .map_err(|e| CliError::Data(e.to_string()))?
    } else {
        eprintln!(
            "warning: characteristics file {} not found; size, value, and volume fields stay empty",
            cfg.characteristics.display()
        );
        CharacteristicsTable::from_rows(Vec::new()).map_err(|e| CliError::Data(e.to_string()))?
    };
    let daily = DailyReturnPanel::load(&cfg.daily).map_err(|e| CliError::Data(e.to_string()))?;
    let factors =
        FactorTable::load(&cfg.factors_daily).map_err(|e| CliError::Data(e.to_string()))?;

    let mut month_ends: Vec<NaiveDate> = records.iter().map(|r| r.month_end).collect();
    month_ends.sort_unstable();
    month_ends.dedup();
    let mut char_map: HashMap<(NaiveDate, AssetId), CharacteristicVector> = HashMap::new();
    for &me in &month_ends {
        for vector in compute_characteristics(&daily, &monthly, &chars, &factors, me)
            .map_err(|e| CliError::Run(e.to_string()))?
        {
            char_map.insert((me, vector.asset.clone()), vector);
        }
    }
    let universe: BTreeSet<AssetId> = chars
        .rows()
        .filter(|(_, row)| row.breakpoint_universe)
        .map(|((asset, _), _)| asset.clone())
        .collect();

    let mut summary_rows: Vec<(String, usize, SummaryStats)> = Vec::new();
    let mut bivariate: Vec<(String, sarp_core::sort::BinSeries)> = Vec::new();
    for name in CHARACTERISTIC_NAMES {
        let value_of = |date: NaiveDate, asset: &str| -> Option<f64> {
            char_map.get(&(date, asset.to_string())).and_then(|v| v.get(name))
        };
        for (bin, stats) in bin_summary(&assignments, value_of).iter().enumerate() {
            if let Some(stats) = stats {
                summary_rows.push((name.to_string(), bin + 1, *stats));
            }
        }
        let breakpoints = if (name == "MktCap" || name == "B/M") && !universe.is_empty() {
            Some(&universe)
        } else {
            None
        };
        match build_bivariate_series(&records, &realizations, value_of, breakpoints, cfg.min_risky)
        {
            Ok(series) if !series.is_empty() => bivariate.push((name.to_string(), series)),
            Ok(_) => eprintln!("warning: bivariate sort on {name} had no usable months"),
            Err(e) => eprintln!("warning: bivariate sort on {name} failed: {e}"),
        }
    }
    files::write_characteristic_summary(
        &cfg.out.join("characteristics_summary.csv"),
        &summary_rows,
    )?;
    files::write_bivariate_bins(&cfg.out.join("bins_bivariate.csv"), &bivariate)?;
    files::write_manifest(&cfg.out, &cfg.manifest_rows("sort"))?;

    Ok(format!(
        "sort: {} sorted months ({} min-risky), {} bivariate characteristics into {}",
        series.rows.len(),
        series_min_risky.rows.len(),
        bivariate.len(),
        cfg.out.display()
    ))
}
