//! `report`: turns the sorted bin series into the study's tables and plot
//! data: robust mean tests per bin, three- and five-factor alphas, the
//! arbitrage-risk factor and its two-pass pricing test, ARMA(1,1) fits,
//! performance summaries, correlations, and the macro regression on changes
//! in average fit.

use chrono::NaiveDate;
use nalgebra::DMatrix;
use sarp_core::dates::MonthKey;
use sarp_core::inference::{
    arma11_fit, correlation_matrix, factor_alpha, fama_macbeth, macro_regression, mean_test,
    performance_stats, sar_factor_from_bins, FactorModel, PerformanceStats,
};
use sarp_core::market_data::{FactorTable, MacroSeries, MonthlyReturnPanel, FACTOR_NAMES};
use sarp_core::sort::{BinSeries, Leg, N_BINS};

use crate::config::{CliError, RunConfig};
use crate::files::{self, ReportRow};

const ROLLING_WINDOWS: [usize; 3] = [12, 36, 60];

fn bin_label(bin: usize) -> String {
    format!("bin{:02}", bin + 1)
}

/// Named return series of one bin table row: the ten bins plus the average
/// and low-minus-high composites.
fn row_series(series: &BinSeries, leg: Leg) -> Vec<(String, Vec<f64>)> {
    let mut out: Vec<(String, Vec<f64>)> = (0..N_BINS)
        .map(|b| (bin_label(b), series.bin_series(b, leg)))
        .collect();
    out.push(("avg".into(), series.avg_series(leg)));
    out.push(("lo_hi".into(), series.lo_hi_series(leg)));
    out
}

pub fn run(cfg: &RunConfig) -> Result<String, CliError> {
    let bins_file = if cfg.min_risky { "bins_min_risky.csv" } else { "bins.csv" };
    let series = files::read_bins(&cfg.out.join(bins_file))?;
    if series.rows.is_empty() {
        return Err(CliError::Run(format!("{bins_file} holds no sorted months")));
    }
    let months = series.months();
    let n_months = months.len();

    let monthly = MonthlyReturnPanel::load(&cfg.monthly_returns, &cfg.risk_free)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let rf: Vec<f64> = months
        .iter()
        .map(|m| {
            monthly
                .rf(*m)
                .ok_or_else(|| CliError::Data(format!("missing risk-free rate for {m}")))
        })
        .collect::<Result<_, _>>()?;

    let factor_table =
        FactorTable::load(&cfg.factors_monthly).map_err(|e| CliError::Data(e.to_string()))?;
    let factor_map = factor_table.month_map().map_err(|e| CliError::Data(e.to_string()))?;
    let factor_rows: Vec<[f64; 6]> = months
        .iter()
        .map(|m| {
            factor_map
                .get(m)
                .copied()
                .ok_or_else(|| CliError::Data(format!("factor table is missing month {m}")))
        })
        .collect::<Result<_, _>>()?;
    let factors = DMatrix::from_fn(n_months, 6, |r, c| factor_rows[r][c]);
    let mktrf: Vec<f64> = factor_rows.iter().map(|r| r[0]).collect();

    let sar = sar_factor_from_bins(&series).map_err(|e| CliError::Run(e.to_string()))?;
    let mut rows: Vec<ReportRow> = Vec::new();

    // Mean excess returns per bin and leg, HAC t-statistics.
    for (leg, leg_name) in [(Leg::Focal, "foc"), (Leg::Replicate, "rep"), (Leg::LongShort, "ls")]
    {
        for (row, values) in row_series(&series, leg) {
            let test = mean_test(&values, cfg.nw_lags).map_err(|e| CliError::Run(e.to_string()))?;
            rows.push(ReportRow::new("mean_excess", &row, leg_name, test.mean, test.t_statistic));
        }
    }

    // Factor alphas of the long-short legs.
    for (model, table) in [(FactorModel::Ff3, "alpha_ff3"), (FactorModel::Ff5, "alpha_ff5")] {
        let nf = model.n_factors();
        let mut targets: Vec<(String, Vec<f64>)> = (0..N_BINS)
            .map(|b| (bin_label(b), series.bin_series(b, Leg::LongShort)))
            .collect();
        targets.push(("lo_hi".into(), series.lo_hi_series(Leg::LongShort)));
        for (row, values) in targets {
            match factor_alpha(&values, &factors, model, cfg.nw_lags) {
                Ok(fit) => {
                    rows.push(ReportRow::new(
                        table,
                        &row,
                        "alpha",
                        fit.coefficients[0],
                        Some(fit.t_statistics[0]),
                    ));
                    for (j, name) in FACTOR_NAMES.iter().take(nf).enumerate() {
                        rows.push(ReportRow::new(
                            table,
                            &row,
                            name,
                            fit.coefficients[j + 1],
                            Some(fit.t_statistics[j + 1]),
                        ));
                    }
                }
                Err(e) => eprintln!("warning: {table} {row} skipped: {e}"),
            }
        }
    }

    // Two-pass pricing of the ten focal bins on the arbitrage-risk factor
    // plus the three-factor set.
    let fm_names = ["sar", "mktrf", "smb", "hml"];
    let fm_factors = DMatrix::from_fn(n_months, 4, |r, c| match c {
        0 => sar.returns[r],
        j => factors[(r, j - 1)],
    });
    let assets: Vec<Vec<f64>> = (0..N_BINS).map(|b| series.bin_series(b, Leg::Focal)).collect();
    match fama_macbeth(&assets, &fm_factors, true) {
        Ok(fm) => {
            rows.push(ReportRow::new(
                "fama_macbeth",
                "lambda",
                "const",
                fm.lambda[0],
                Some(fm.fm_t_statistics[0]),
            ));
            for (j, name) in fm_names.iter().enumerate() {
                rows.push(ReportRow::new(
                    "fama_macbeth",
                    "lambda",
                    name,
                    fm.lambda[j + 1],
                    Some(fm.fm_t_statistics[j + 1]),
                ));
            }
            rows.push(ReportRow::new("fama_macbeth", "chi2", "stat", fm.chi2_statistic, None));
            rows.push(ReportRow::new(
                "fama_macbeth",
                "chi2",
                "dof",
                fm.chi2_dof as f64,
                None,
            ));
            rows.push(ReportRow::new("fama_macbeth", "chi2", "p_value", fm.chi2_p_value, None));
        }
        Err(e) => eprintln!("warning: fama_macbeth skipped: {e}"),
    }

    // ARMA(1,1) persistence fits.
    for (name, values) in [
        ("sar", &sar.returns),
        ("lo_hi_foc", &series.lo_hi_series(Leg::Focal)),
        ("mktrf", &mktrf),
    ] {
        match arma11_fit(values) {
            Ok(fit) => {
                let t = |i: usize| fit.t_statistics.map(|ts| ts[i]);
                rows.push(ReportRow::new("arma", name, "c", fit.c, t(0)));
                rows.push(ReportRow::new("arma", name, "a", fit.a, t(1)));
                rows.push(ReportRow::new("arma", name, "b", fit.b, t(2)));
            }
            Err(e) => eprintln!("warning: arma {name} skipped: {e}"),
        }
    }

    // Macro regression on changes in average fit, when projections and macro
    // data are available.
    let projections_path = cfg.out.join("projections.csv");
    let mean_r2 = if projections_path.exists() {
        files::read_mean_r2(&projections_path)?
    } else {
        eprintln!("warning: {} not found; fit plot data and macro rows skipped", projections_path.display());
        Vec::new()
    };
    if !mean_r2.is_empty() && cfg.macro_path.exists() {
        let macro_series =
            MacroSeries::load(&cfg.macro_path).map_err(|e| CliError::Data(e.to_string()))?;
        let r2_months: Vec<MonthKey> =
            mean_r2.iter().map(|(me, _)| MonthKey::from_date(*me)).collect();
        let values: Vec<f64> = mean_r2.iter().map(|(_, v)| *v).collect();
        let names: Vec<String> = macro_series.names().iter().map(|s| s.to_string()).collect();
        let levels: Vec<Vec<Option<f64>>> = names
            .iter()
            .map(|name| {
                let level = macro_series.get(name).expect("listed series exists");
                r2_months.iter().map(|m| level.get(m).copied()).collect()
            })
            .collect();
        let market: Vec<Option<f64>> =
            r2_months.iter().map(|m| factor_map.get(m).map(|r| r[0])).collect();
        match macro_regression(&values, &names, &levels, &market, cfg.nw_lags) {
            Ok(reg) => {
                for (j, name) in reg.regressor_names.iter().enumerate() {
                    rows.push(ReportRow::new(
                        "macro",
                        name,
                        "coef",
                        reg.result.coefficients[j],
                        Some(reg.result.t_statistics[j]),
                    ));
                }
                rows.push(ReportRow::new("macro", "months", "n_used", reg.n_used as f64, None));
                rows.push(ReportRow::new(
                    "macro",
                    "months",
                    "n_dropped",
                    reg.n_dropped as f64,
                    None,
                ));
            }
            Err(e) => eprintln!("warning: macro regression skipped: {e}"),
        }
    } else if !cfg.macro_path.exists() {
        eprintln!("warning: macro file {} not found; macro rows skipped", cfg.macro_path.display());
    }

    files::write_report(&cfg.out.join("report.csv"), &rows)?;

    // Correlations of the factor set.
    let mut corr_names: Vec<String> = vec!["sar".into()];
    corr_names.extend(FACTOR_NAMES.iter().map(|s| s.to_string()));
    let mut corr_series: Vec<Vec<f64>> = vec![sar.returns.clone()];
    for j in 0..6 {
        corr_series.push(factor_rows.iter().map(|r| r[j]).collect());
    }
    let corr = correlation_matrix(&corr_series).map_err(|e| CliError::Run(e.to_string()))?;
    files::write_correlations(&cfg.out.join("corr.csv"), &corr_names, &corr)?;

    // Performance stats: self-financing series compound as-is, asset legs and
    // the market add the risk-free leg back for compounding.
    let zeros = vec![0.0; n_months];
    let stats = |name: &str, excess: &[f64], rf_leg: &[f64]| -> Result<(String, PerformanceStats), CliError> {
        Ok((
            name.to_string(),
            performance_stats(excess, rf_leg).map_err(|e| CliError::Run(e.to_string()))?,
        ))
    };
    let perf_rows = vec![
        stats("sar", &sar.returns, &zeros)?,
        stats("lo_ls", &sar.lo_ls, &zeros)?,
        stats("hi_ls", &sar.hi_ls, &zeros)?,
        stats("lo_foc", &series.bin_series(0, Leg::Focal), &rf)?,
        stats("hi_foc", &series.bin_series(N_BINS - 1, Leg::Focal), &rf)?,
        stats("mktrf", &mktrf, &rf)?,
    ];
    files::write_performance(&cfg.out.join("perf.csv"), &perf_rows)?;

    // Plot data.
    let plot_dir = cfg.out.join("plotdata");
    let log_series: Vec<(String, Vec<f64>)> = perf_rows
        .iter()
        .map(|(name, stats)| (name.clone(), stats.log_cumulative_path.clone()))
        .collect();
    files::write_log_cumulative(&plot_dir.join("log_cumulative.csv"), &months, &log_series)?;

    let mut rolling: Vec<(String, usize, Vec<f64>)> = Vec::new();
    for (name, stats) in &perf_rows {
        for (window, values) in ROLLING_WINDOWS
            .iter()
            .zip([&stats.rolling_12, &stats.rolling_36, &stats.rolling_60])
        {
            if !values.is_empty() {
                rolling.push((name.clone(), *window, values.to_vec()));
            }
        }
    }
    files::write_rolling(&plot_dir.join("rolling.csv"), &months, &rolling)?;

    let avg_r2_rows: Vec<(NaiveDate, f64, Option<f64>)> = mean_r2
        .iter()
        .enumerate()
        .map(|(i, &(me, v))| {
            let delta = if i == 0 { None } else { Some(v - mean_r2[i - 1].1) };
            (me, v, delta)
        })
        .collect();
    files::write_avg_r2(&plot_dir.join("avg_r2.csv"), &avg_r2_rows)?;

    files::write_manifest(&cfg.out, &cfg.manifest_rows("report"))?;
    Ok(format!(
        "report: {} table rows over {} months into {}",
        rows.len(),
        n_months,
        cfg.out.display()
    ))
}
