//! CSV surfaces owned by the CLI: projection outputs, bin series, report
//! tables, plot data, and the run manifest. Floats are written in Rust's
//! default shortest round-trip form, so identical runs produce byte-identical
//! files and downstream stages reread the exact values the producer held.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use sarp_core::dates::MonthKey;
use sarp_core::inference::PerformanceStats;
use sarp_core::market_data::AssetId;
use sarp_core::replicate::ProjectionRecord;
use sarp_core::sort::{BinRow, BinSeries, SummaryStats, N_BINS};

use crate::config::{parse_month, CliError};

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Creates the directory a file will land in.
pub fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Io(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    Ok(())
}

fn open_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    ensure_parent(path)?;
    let file = File::create(path)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))?;
    Ok(csv::Writer::from_writer(file))
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn finish(mut writer: csv::Writer<File>, path: &Path) -> Result<(), CliError> {
    writer
        .flush()
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn write_row(
    writer: &mut csv::Writer<File>,
    path: &Path,
    fields: &[String],
) -> Result<(), CliError> {
    writer
        .write_record(fields)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn parse_date(text: &str, path: &Path) -> Result<NaiveDate, CliError> {
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .map_err(|_| CliError::Data(format!("bad date '{text}' in {}", path.display())))
}

fn parse_float(text: &str, path: &Path) -> Result<f64, CliError> {
    text.parse()
        .map_err(|_| CliError::Data(format!("bad number '{text}' in {}", path.display())))
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

pub fn write_manifest(out_dir: &Path, rows: &[(String, String)]) -> Result<(), CliError> {
    let path = out_dir.join("run_manifest.csv");
    let mut writer = open_writer(&path)?;
    write_row(&mut writer, &path, &["key".into(), "value".into()])?;
    for (key, value) in rows {
        write_row(&mut writer, &path, &[key.clone(), value.clone()])?;
    }
    finish(writer, &path)
}

// ---------------------------------------------------------------------------
// Projection outputs
// ---------------------------------------------------------------------------

pub fn write_projections(path: &Path, records: &[ProjectionRecord]) -> Result<(), CliError> {
    let mut writer = open_writer(path)?;
    write_row(
        &mut writer,
        path,
        &[
            "month_end".into(),
            "asset_id".into(),
            "r2".into(),
            "n_nonzero".into(),
            "equity_proportion".into(),
            "lambda".into(),
        ],
    )?;
    for r in records {
        write_row(
            &mut writer,
            path,
            &[
                r.month_end.to_string(),
                r.focal.clone(),
                fmt_f64(r.r_squared),
                r.n_nonzero.to_string(),
                fmt_f64(r.equity_proportion),
                fmt_f64(r.lambda),
            ],
        )?;
    }
    finish(writer, path)
}

pub fn write_weights(path: &Path, records: &[ProjectionRecord]) -> Result<(), CliError> {
    let mut writer = open_writer(path)?;
    write_row(
        &mut writer,
        path,
        &["month_end".into(), "asset_id".into(), "peer_id".into(), "weight".into()],
    )?;
    for r in records {
        for (peer, w) in &r.beta_tilde {
            write_row(
                &mut writer,
                path,
                &[r.month_end.to_string(), r.focal.clone(), peer.clone(), fmt_f64(*w)],
            )?;
        }
    }
    finish(writer, path)
}

/// Rebuilds projection records from `projections.csv` plus `weights.csv`.
/// Only what downstream stages use survives the round trip: the raw
/// coefficients are not persisted, and `converged` is not either, so the
/// rebuilt records carry an empty `beta_hat` and `converged = true`.
pub fn read_projection_records(
    projections: &Path,
    weights: &Path,
) -> Result<Vec<ProjectionRecord>, CliError> {
    let mut weight_map: BTreeMap<(NaiveDate, AssetId), Vec<(AssetId, f64)>> = BTreeMap::new();
    let mut reader = open_reader(weights)?;
    for record in reader.records() {
        let record =
            record.map_err(|e| CliError::Data(format!("{}: {e}", weights.display())))?;
        if record.len() != 4 {
            return Err(CliError::Data(format!(
                "{} rows need 4 fields, got {}",
                weights.display(),
                record.len()
            )));
        }
        let month_end = parse_date(&record[0], weights)?;
        let asset = record[1].to_string();
        let peer = record[2].to_string();
        let weight = parse_float(&record[3], weights)?;
        weight_map.entry((month_end, asset)).or_default().push((peer, weight));
    }

    let mut out = Vec::new();
    let mut reader = open_reader(projections)?;
    for record in reader.records() {
        let record =
            record.map_err(|e| CliError::Data(format!("{}: {e}", projections.display())))?;
        if record.len() != 6 {
            return Err(CliError::Data(format!(
                "{} rows need 6 fields, got {}",
                projections.display(),
                record.len()
            )));
        }
        let month_end = parse_date(&record[0], projections)?;
        let focal = record[1].to_string();
        let r_squared = parse_float(&record[2], projections)?;
        let n_nonzero: usize = record[3]
            .parse()
            .map_err(|_| CliError::Data(format!("bad count '{}'", &record[3])))?;
        let equity_proportion = parse_float(&record[4], projections)?;
        let lambda = parse_float(&record[5], projections)?;
        let beta_tilde =
            weight_map.remove(&(month_end, focal.clone())).unwrap_or_default();
        if beta_tilde.len() != n_nonzero {
            return Err(CliError::Data(format!(
                "{focal} at {month_end}: {} weights for {n_nonzero} nonzero coefficients",
                beta_tilde.len()
            )));
        }
        out.push(ProjectionRecord {
            focal,
            month_end,
            r_squared,
            beta_hat: Vec::new(),
            beta_tilde,
            n_nonzero,
            equity_proportion,
            lambda,
            converged: true,
        });
    }
    if let Some(((month_end, asset), _)) = weight_map.iter().next() {
        return Err(CliError::Data(format!(
            "weights for {asset} at {month_end} have no projection record"
        )));
    }
    Ok(out)
}

/// Cross-sectional average fit per projection month-end from
/// `projections.csv`, in month order.
pub fn read_mean_r2(projections: &Path) -> Result<Vec<(NaiveDate, f64)>, CliError> {
    let mut sums: BTreeMap<NaiveDate, (f64, usize)> = BTreeMap::new();
    let mut reader = open_reader(projections)?;
    for record in reader.records() {
        let record =
            record.map_err(|e| CliError::Data(format!("{}: {e}", projections.display())))?;
        if record.len() != 6 {
            return Err(CliError::Data(format!(
                "{} rows need 6 fields, got {}",
                projections.display(),
                record.len()
            )));
        }
        let month_end = parse_date(&record[0], projections)?;
        let r2 = parse_float(&record[2], projections)?;
        let entry = sums.entry(month_end).or_insert((0.0, 0));
        entry.0 += r2;
        entry.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(month_end, (sum, n))| (month_end, sum / n as f64))
        .collect())
}

// ---------------------------------------------------------------------------
// Bin series
// ---------------------------------------------------------------------------

const LEG_NAMES: [&str; 3] = ["foc", "rep", "ls"];

fn bin_rows(
    writer: &mut csv::Writer<File>,
    path: &Path,
    prefix: Option<&str>,
    series: &BinSeries,
) -> Result<(), CliError> {
    for row in &series.rows {
        for bin in 0..N_BINS {
            for (leg, values) in LEG_NAMES.iter().zip([&row.foc, &row.rep, &row.ls]) {
                let mut fields = Vec::with_capacity(5);
                if let Some(name) = prefix {
                    fields.push(name.to_string());
                }
                fields.extend([
                    row.month.to_string(),
                    (bin + 1).to_string(),
                    (*leg).to_string(),
                    fmt_f64(values[bin]),
                ]);
                write_row(writer, path, &fields)?;
            }
        }
    }
    Ok(())
}

pub fn write_bins(path: &Path, series: &BinSeries) -> Result<(), CliError> {
    let mut writer = open_writer(path)?;
    write_row(
        &mut writer,
        path,
        &["month".into(), "bin".into(), "leg".into(), "return".into()],
    )?;
    bin_rows(&mut writer, path, None, series)?;
    finish(writer, path)
}

pub fn write_bivariate_bins(
    path: &Path,
    series_by_characteristic: &[(String, BinSeries)],
) -> Result<(), CliError> {
    let mut writer = open_writer(path)?;
    write_row(
        &mut writer,
        path,
        &[
            "characteristic".into(),
            "month".into(),
            "bin".into(),
            "leg".into(),
            "return".into(),
        ],
    )?;
    for (name, series) in series_by_characteristic {
        bin_rows(&mut writer, path, Some(name), series)?;
    }
    finish(writer, path)
}

pub fn read_bins(path: &Path) -> Result<BinSeries, CliError> {
    let mut by_month: BTreeMap<MonthKey, ([Vec<f64>; 3], [usize; 3])> = BTreeMap::new();
    let mut reader = open_reader(path)?;
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if record.len() != 4 {
            return Err(CliError::Data(format!(
                "{} rows need 4 fields, got {}",
                path.display(),
                record.len()
            )));
        }
        let month = parse_month(&record[0]).map_err(|_| {
            CliError::Data(format!("bad month '{}' in {}", &record[0], path.display()))
        })?;
        let bin: usize = record[1]
            .parse()
            .map_err(|_| CliError::Data(format!("bad bin '{}'", &record[1])))?;
        if !(1..=N_BINS).contains(&bin) {
            return Err(CliError::Data(format!("bin {bin} out of range in {}", path.display())));
        }
        let leg = LEG_NAMES
            .iter()
            .position(|l| *l == &record[2])
            .ok_or_else(|| CliError::Data(format!("bad leg '{}'", &record[2])))?;
        let value = parse_float(&record[3], path)?;
        let entry = by_month
            .entry(month)
            .or_insert_with(|| (std::array::from_fn(|_| vec![f64::NAN; N_BINS]), [0; 3]));
        entry.0[leg][bin - 1] = value;
        entry.1[leg] += 1;
    }
    let mut rows = Vec::with_capacity(by_month.len());
    for (month, (legs, counts)) in by_month {
        if counts != [N_BINS; 3] {
            return Err(CliError::Data(format!(
                "month {month} in {} is incomplete: {counts:?} leg entries",
                path.display()
            )));
        }
        let pick = |leg: usize| -> [f64; N_BINS] {
            std::array::from_fn(|bin| legs[leg][bin])
        };
        rows.push(BinRow { month, foc: pick(0), rep: pick(1), ls: pick(2) });
    }
    Ok(BinSeries { rows })
}

// ---------------------------------------------------------------------------
// Characteristic summary
// ---------------------------------------------------------------------------

pub fn write_characteristic_summary(
    path: &Path,
    rows: &[(String, usize, SummaryStats)],
) -> Result<(), CliError> {
    let mut writer = open_writer(path)?;
    write_row(
        &mut writer,
        path,
        &[
            "characteristic".into(),
            "bin".into(),
            "mean".into(),
            "sd".into(),
            "p5".into(),
            "p95".into(),
            "n_months".into(),
        ],
    )?;
    for (name, bin, stats) in rows {
        write_row(
            &mut writer,
            path,
            &[
                name.clone(),
                bin.to_string(),
                fmt_f64(stats.mean),
                fmt_f64(stats.sd),
                fmt_f64(stats.p5),
                fmt_f64(stats.p95),
                stats.n_months.to_string(),
            ],
        )?;
    }
    finish(writer, path)
}

// ---------------------------------------------------------------------------
// Report tables
// ---------------------------------------------------------------------------

/// One line of `report.csv`: a named estimate with its optional t-statistic.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub table: String,
    pub row: String,
    pub term: String,
    pub estimate: f64,
    pub t_stat: Option<f64>,
}

impl ReportRow {
    pub fn new(
        table: &str,
        row: &str,
        term: &str,
        estimate: f64,
        t_stat: Option<f64>,
    ) -> Self {
        ReportRow {
            table: table.into(),
            row: row.into(),
            term: term.into(),
            estimate,
            t_stat,
        }
    }
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<(), CliError> {
    let mut writer = open_writer(path)?;
    write_row(
        &mut writer,
        path,
        &[
            "table".into(),
            "row".into(),
            "term".into(),
            "estimate".into(),
            "t_stat".into(),
        ],
    )?;
    for r in rows {
        write_row(
            &mut writer,
            path,
            &[r.table.clone(), r.row.clone(), r.term.clone(), fmt_f64(r.estimate), fmt_opt(r.t_stat)],
        )?;
    }
    finish(writer, path)
}

pub fn write_correlations(
    path: &Path,
    names: &[String],
    matrix: &DMatrix<f64>,
) -> Result<(), CliError> {
    let mut writer = open_writer(path)?;
    let mut header = vec!["series".to_string()];
    header.extend(names.iter().cloned());
    write_row(&mut writer, path, &header)?;
    for (i, name) in names.iter().enumerate() {
        let mut fields = vec![name.clone()];
        for j in 0..names.len() {
            fields.push(fmt_f64(matrix[(i, j)]));
        }
        write_row(&mut writer, path, &fields)?;
    }
    finish(writer, path)
}

pub fn write_performance(
    path: &Path,
    rows: &[(String, PerformanceStats)],
) -> Result<(), CliError> {
    let mut writer = open_writer(path)?;
    write_row(
        &mut writer,
        path,
        &[
            "series".into(),
            "cumulative_value".into(),
            "sharpe".into(),
            "mean".into(),
            "sd".into(),
            "skewness".into(),
            "kurtosis".into(),
            "p5".into(),
            "p95".into(),
            "n_months".into(),
        ],
    )?;
    for (name, stats) in rows {
        write_row(
            &mut writer,
            path,
            &[
                name.clone(),
                fmt_f64(stats.cumulative_value),
                fmt_opt(stats.sharpe),
                fmt_f64(stats.mean),
                fmt_f64(stats.sd),
                fmt_opt(stats.skewness),
                fmt_opt(stats.kurtosis),
                fmt_f64(stats.p5),
                fmt_f64(stats.p95),
                stats.log_cumulative_path.len().to_string(),
            ],
        )?;
    }
    finish(writer, path)
}

// ---------------------------------------------------------------------------
// Plot data
// ---------------------------------------------------------------------------

pub fn write_log_cumulative(
    path: &Path,
    months: &[MonthKey],
    series: &[(String, Vec<f64>)],
) -> Result<(), CliError> {
    let mut writer = open_writer(path)?;
    write_row(
        &mut writer,
        path,
        &["month".into(), "series".into(), "log_value".into()],
    )?;
    for (name, values) in series {
        for (month, value) in months.iter().zip(values) {
            write_row(
                &mut writer,
                path,
                &[month.to_string(), name.clone(), fmt_f64(*value)],
            )?;
        }
    }
    finish(writer, path)
}

pub fn write_rolling(
    path: &Path,
    months: &[MonthKey],
    series: &[(String, usize, Vec<f64>)],
) -> Result<(), CliError> {
    let mut writer = open_writer(path)?;
    write_row(
        &mut writer,
        path,
        &["month".into(), "series".into(), "window".into(), "value".into()],
    )?;
    for (name, window, values) in series {
        for (i, value) in values.iter().enumerate() {
            write_row(
                &mut writer,
                path,
                &[
                    months[window - 1 + i].to_string(),
                    name.clone(),
                    window.to_string(),
                    fmt_f64(*value),
                ],
            )?;
        }
    }
    finish(writer, path)
}

pub fn write_avg_r2(
    path: &Path,
    rows: &[(NaiveDate, f64, Option<f64>)],
) -> Result<(), CliError> {
    let mut writer = open_writer(path)?;
    write_row(
        &mut writer,
        path,
        &["month_end".into(), "mean_r2".into(), "delta_r2".into()],
    )?;
    for (month_end, mean, delta) in rows {
        write_row(
            &mut writer,
            path,
            &[month_end.to_string(), fmt_f64(*mean), fmt_opt(*delta)],
        )?;
    }
    finish(writer, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn projection_records_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            ProjectionRecord {
                focal: "A00001".into(),
                month_end: date(2002, 1, 31),
                r_squared: 0.123_456_789_123_456_78,
                beta_hat: vec![("A00002".into(), 0.4)],
                beta_tilde: vec![("A00002".into(), 1.0)],
                n_nonzero: 1,
                equity_proportion: 1.0,
                lambda: 1e-4,
                converged: true,
            },
            ProjectionRecord {
                focal: "A00002".into(),
                month_end: date(2002, 1, 31),
                r_squared: -0.25,
                beta_hat: Vec::new(),
                beta_tilde: Vec::new(),
                n_nonzero: 0,
                equity_proportion: 0.0,
                lambda: 0.5,
                converged: true,
            },
        ];
        let proj = dir.path().join("projections.csv");
        let weights = dir.path().join("weights.csv");
        write_projections(&proj, &records).unwrap();
        write_weights(&weights, &records).unwrap();
        let rebuilt = read_projection_records(&proj, &weights).unwrap();
        assert_eq!(rebuilt.len(), 2);
        assert_eq!(rebuilt[0].focal, "A00001");
        assert_eq!(rebuilt[0].r_squared, records[0].r_squared);
        assert_eq!(rebuilt[0].beta_tilde, records[0].beta_tilde);
        assert_eq!(rebuilt[0].lambda, records[0].lambda);
        assert_eq!(rebuilt[1].n_nonzero, 0);
        assert!(rebuilt[1].beta_tilde.is_empty());
    }

    #[test]
    fn orphan_weights_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let proj = dir.path().join("projections.csv");
        let weights = dir.path().join("weights.csv");
        write_projections(&proj, &[]).unwrap();
        let record = ProjectionRecord {
            focal: "A00001".into(),
            month_end: date(2002, 1, 31),
            r_squared: 0.5,
            beta_hat: Vec::new(),
            beta_tilde: vec![("A00002".into(), 1.0)],
            n_nonzero: 1,
            equity_proportion: 1.0,
            lambda: 0.1,
            converged: true,
        };
        write_weights(&weights, &[record]).unwrap();
        assert!(read_projection_records(&proj, &weights).is_err());
    }

    #[test]
    fn bin_series_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = Vec::new();
        for m in 1..=3u32 {
            let base = m as f64 / 7.0;
            rows.push(BinRow {
                month: MonthKey::new(2002, m),
                foc: std::array::from_fn(|b| base + b as f64 * 0.001),
                rep: std::array::from_fn(|b| base - b as f64 * 0.002),
                ls: std::array::from_fn(|b| base * 0.1 + b as f64 * 0.003),
            });
        }
        let series = BinSeries { rows };
        let path = dir.path().join("bins.csv");
        write_bins(&path, &series).unwrap();
        let rebuilt = read_bins(&path).unwrap();
        assert_eq!(rebuilt, series);
    }

    #[test]
    fn incomplete_bin_month_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bins.csv");
        std::fs::write(&path, "month,bin,leg,return\n2002-01,1,foc,0.01\n").unwrap();
        assert!(read_bins(&path).is_err());
    }

    #[test]
    fn floats_round_trip_through_display_form() {
        for v in [0.1, -1e-17, 1.0 / 3.0, 12345.678901234567, f64::MIN_POSITIVE] {
            let text = fmt_f64(v);
            let back: f64 = text.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits());
        }
        assert_eq!(fmt_opt(None), "");
    }
}
