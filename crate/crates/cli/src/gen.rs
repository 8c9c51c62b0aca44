//! `gen`: writes a complete synthetic study input set into the output
//! directory: daily and monthly return panels, risk-free series, daily and
//! monthly factor tables, month-end characteristics, macro series, and the
//! ground-truth sidecar with the intercepts and loadings the panels were
//! built from.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sarp_core::dates::MonthKey;
use sarp_core::market_data::{CharRow, CharacteristicsTable, FactorTable, MacroSeries};
use sarp_core::synth::{generate, EconomyConfig, EconomyGroundTruth};

use crate::config::{CliError, RunConfig};
use crate::files::{self, fmt_f64};

/// Seed offsets for the side streams so every generated table is independent
/// of the economy draws and of each other.
const PAD_FACTOR_STREAM: u64 = 0x00FA_C001;
const CHARACTERISTIC_STREAM: u64 = 0x00C4_A201;
const MACRO_STREAM: u64 = 0x003A_C201;

pub fn run(cfg: &RunConfig) -> Result<String, CliError> {
    let economy = |n_days: usize| -> EconomyConfig {
        let k = cfg.gen.n_factors;
        let vol2 = cfg.gen.factor_vol * cfg.gen.factor_vol;
        let rho = cfg.gen.factor_corr;
        let mut factor_cov = DMatrix::from_element(k, k, vol2 * rho);
        for j in 0..k {
            factor_cov[(j, j)] = vol2;
        }
        EconomyConfig {
            n_assets: cfg.gen.n_assets,
            n_factors: k,
            n_days,
            n_months: cfg.gen.n_months,
            factor_mean: DVector::from_element(k, cfg.gen.premium),
            factor_cov,
            alpha_scale: cfg.gen.alpha_scale,
            beta_scale: cfg.gen.beta_scale,
            idio_vol: cfg.gen.idio_vol,
            seed: cfg.seed,
        }
    };

    // n_days = 0 means cover the monthly span exactly: probe with one day to
    // learn how many trading days the months need, then generate for real.
    let n_days = if cfg.gen.n_days == 0 {
        let probe = generate(&economy(1)).map_err(|e| CliError::Run(e.to_string()))?;
        probe.draw_dates.len()
    } else {
        cfg.gen.n_days
    };
    let truth = generate(&economy(n_days)).map_err(|e| CliError::Run(e.to_string()))?;

    for path in [&cfg.daily, &cfg.monthly_returns, &cfg.risk_free, &cfg.factors_daily, &cfg.factors_monthly, &cfg.characteristics, &cfg.macro_path]
    {
        files::ensure_parent(path)?;
    }
    truth.daily.write(&cfg.daily).map_err(|e| CliError::Io(e.to_string()))?;
    truth
        .monthly
        .write(&cfg.monthly_returns, &cfg.risk_free)
        .map_err(|e| CliError::Io(e.to_string()))?;
    write_truth_sidecar(cfg, &truth)?;
    write_factor_tables(cfg, &truth)?;
    write_characteristics(cfg, &truth)?;
    write_macro(cfg, &truth)?;
    files::write_manifest(&cfg.out, &cfg.manifest_rows("gen"))?;

    Ok(format!(
        "gen: {} assets, {} factors, {} trading days, {} months into {}",
        truth.n_assets(),
        cfg.gen.n_factors,
        truth.daily.n_dates(),
        truth.monthly.months().len(),
        cfg.out.display()
    ))
}

fn write_truth_sidecar(cfg: &RunConfig, truth: &EconomyGroundTruth) -> Result<(), CliError> {
    let path = cfg.out.join("truth.csv");
    let mut rows: Vec<(String, String, String)> = Vec::new();
    for i in 0..truth.n_assets() {
        let asset = truth.daily.assets()[i].clone();
        rows.push((asset.clone(), "alpha".into(), fmt_f64(truth.alphas[i])));
        for k in 0..truth.betas.ncols() {
            rows.push((asset.clone(), format!("beta{}", k + 1), fmt_f64(truth.betas[(i, k)])));
        }
    }
    let file = std::fs::File::create(&path)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))?;
    let mut writer = csv::Writer::from_writer(file);
    writer
        .write_record(["asset_id", "field", "value"])
        .and_then(|()| {
            rows.iter().try_for_each(|(a, f, v)| writer.write_record([a, f, v]))
        })
        .and_then(|()| writer.flush().map_err(Into::into))
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Builds the six-column factor tables. The first `min(K, 6)` columns carry
/// the economy's daily factor draws; any remaining columns are filled with
/// independent seeded noise at half the factor volatility so the tables are
/// full rank. The monthly table compounds the same daily values over each
/// complete month, so the two tables describe one set of factor paths.
fn write_factor_tables(cfg: &RunConfig, truth: &EconomyGroundTruth) -> Result<(), CliError> {
    let k = truth.betas.ncols();
    let n_draws = truth.draw_dates.len();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(6);
    for j in 0..6 {
        if j < k {
            columns.push((0..n_draws).map(|d| truth.factor_draws[(d, j)]).collect());
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(
                cfg.seed.wrapping_add(PAD_FACTOR_STREAM + j as u64),
            );
            let vol = cfg.gen.factor_vol * 0.5;
            columns.push(
                (0..n_draws)
                    .map(|_| vol * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
        }
    }

    let daily_rows: Vec<(chrono::NaiveDate, [f64; 6])> = truth
        .daily
        .dates()
        .iter()
        .enumerate()
        .map(|(d, &date)| (date, std::array::from_fn(|j| columns[j][d])))
        .collect();
    FactorTable::from_rows(daily_rows)
        .and_then(|t| t.write(&cfg.factors_daily))
        .map_err(|e| CliError::Data(e.to_string()))?;

    let mut monthly_rows: Vec<(chrono::NaiveDate, [f64; 6])> = Vec::new();
    for &month in truth.monthly.months() {
        let mut gross = [1.0f64; 6];
        for (d, &date) in truth.draw_dates.iter().enumerate() {
            if MonthKey::from_date(date) == month {
                for j in 0..6 {
                    gross[j] *= 1.0 + columns[j][d];
                }
            }
        }
        let stamp = truth
            .monthly
            .month_date(month)
            .ok_or_else(|| CliError::Run(format!("monthly panel lacks a date for {month}")))?;
        monthly_rows.push((stamp, std::array::from_fn(|j| gross[j] - 1.0)));
    }
    FactorTable::from_rows(monthly_rows)
        .and_then(|t| t.write(&cfg.factors_monthly))
        .map_err(|e| CliError::Data(e.to_string()))
}

/// Month-end characteristics: persistent lognormal size and book-to-market
/// paths per asset, fresh lognormal volume and price each month, and a
/// stable breakpoint universe of the even-indexed assets.
fn write_characteristics(cfg: &RunConfig, truth: &EconomyGroundTruth) -> Result<(), CliError> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(CHARACTERISTIC_STREAM));
    let months = truth.monthly.months().to_vec();
    let mut rows: Vec<(chrono::NaiveDate, String, CharRow)> = Vec::new();
    for (i, asset) in truth.monthly.assets().iter().enumerate() {
        let mut cap = 500.0 * f64::exp(rng.sample::<f64, _>(StandardNormal));
        let mut book_to_market = 0.6 * f64::exp(0.4 * rng.sample::<f64, _>(StandardNormal));
        for &month in &months {
            cap *= f64::exp(0.05 * rng.sample::<f64, _>(StandardNormal));
            book_to_market *= f64::exp(0.05 * rng.sample::<f64, _>(StandardNormal));
            let volume =
                (1e6 * f64::exp(0.8 * rng.sample::<f64, _>(StandardNormal))).round();
            let close = 30.0 * f64::exp(0.5 * rng.sample::<f64, _>(StandardNormal));
            let stamp = truth
                .monthly
                .month_date(month)
                .ok_or_else(|| CliError::Run(format!("monthly panel lacks a date for {month}")))?;
            rows.push((
                stamp,
                asset.clone(),
                CharRow {
                    market_cap: Some(cap),
                    book_to_market: Some(book_to_market),
                    volume: Some(volume),
                    close_price: Some(close),
                    breakpoint_universe: i % 2 == 0,
                },
            ));
        }
    }
    CharacteristicsTable::from_rows(rows)
        .and_then(|t| t.write(&cfg.characteristics))
        .map_err(|e| CliError::Data(e.to_string()))
}

/// Four random-walk macro levels over the monthly span.
fn write_macro(cfg: &RunConfig, truth: &EconomyGroundTruth) -> Result<(), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(MACRO_STREAM));
    let series: [(&str, f64, f64); 4] =
        [("ip", 100.0, 0.5), ("cons", 100.0, 0.5), ("unemp", 5.0, 0.2), ("sent", 50.0, 2.0)];
    let mut rows: Vec<(chrono::NaiveDate, String, f64)> = Vec::new();
    for (name, start, step) in series {
        let mut level = start;
        for &month in truth.monthly.months() {
            level += step * rng.sample::<f64, _>(StandardNormal);
            let stamp = truth
                .monthly
                .month_date(month)
                .ok_or_else(|| CliError::Run(format!("monthly panel lacks a date for {month}")))?;
            rows.push((stamp, name.to_string(), level));
        }
    }
    MacroSeries::from_rows(rows)
        .and_then(|t| t.write(&cfg.macro_path))
        .map_err(|e| CliError::Data(e.to_string()))
}
