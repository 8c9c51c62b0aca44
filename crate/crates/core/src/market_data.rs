//! Return panels, factor and macro series, and their CSV contracts.
//!
//! All files are UTF-8 with a mandatory header row, ISO-8601 dates, and
//! returns as decimal fractions. Loaders validate as they read: malformed
//! rows, duplicate keys, non-finite values, and returns at or below -100%
//! are reported with the offending line number. Panels are stored dense with
//! a NaN sentinel for absent (asset, date) cells; the sentinel never escapes
//! through the public accessors, which return `Option<f64>`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use thiserror::Error;

use crate::dates::{one_year_before, MonthKey};

/// Asset identifiers are opaque strings; ordering is lexicographic.
pub type AssetId = String;

/// Column order of factor files and tables.
pub const FACTOR_NAMES: [&str; 6] = ["mktrf", "smb", "hml", "cma", "rmw", "mom"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {msg}")]
    Row { path: String, line: u64, msg: String },
    #[error("{path}: {msg}")]
    File { path: String, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

impl DataError {
    fn row(path: &Path, line: u64, msg: impl Into<String>) -> Self {
        DataError::Row { path: path.display().to_string(), line, msg: msg.into() }
    }

    fn file(path: &Path, msg: impl Into<String>) -> Self {
        DataError::File { path: path.display().to_string(), msg: msg.into() }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io { path: path.display().to_string(), source }
    }
}

fn parse_date(s: &str) -> Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| format!("bad date {s:?}"))
}

fn parse_f64(s: &str, what: &str) -> Result<f64, String> {
    s.parse::<f64>().map_err(|_| format!("bad {what} {s:?}"))
}

/// A return is storable when it is finite and above -100%.
fn validate_return(r: f64) -> Result<f64, String> {
    if !r.is_finite() {
        Err(format!("non-finite return {r}"))
    } else if r <= -1.0 {
        Err(format!("return {r} is at or below -100%"))
    } else {
        Ok(r)
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<BufReader<File>>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file)))
}

fn check_header(
    rdr: &mut csv::Reader<BufReader<File>>,
    path: &Path,
    expected: &[&str],
) -> Result<(), DataError> {
    let headers = rdr
        .headers()
        .map_err(|e| DataError::file(path, format!("cannot read header: {e}")))?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(DataError::file(
            path,
            format!("expected header {expected:?}, found {got:?}"),
        ));
    }
    Ok(())
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

/// Reads all records of `path`, checking the header first.
fn read_records(
    path: &Path,
    expected_header: &[&str],
) -> Result<Vec<csv::StringRecord>, DataError> {
    let mut rdr = open_reader(path)?;
    check_header(&mut rdr, path, expected_header)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DataError::file(path, format!("csv error: {e}")))?;
        if rec.len() != expected_header.len() {
            return Err(DataError::row(
                path,
                record_line(&rec),
                format!("expected {} fields, found {}", expected_header.len(), rec.len()),
            ));
        }
        out.push(rec);
    }
    Ok(out)
}

fn write_file(path: &Path, body: &str) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(body.as_bytes()).map_err(|e| DataError::io(path, e))?;
    w.flush().map_err(|e| DataError::io(path, e))
}

// ---------------------------------------------------------------------------
// Daily panel
// ---------------------------------------------------------------------------

/// Sparse (asset, trading day) return table stored dense with NaN for absent
/// cells. Assets and dates are sorted, so index order is identifier order.
#[derive(Debug, Clone)]
pub struct DailyReturnPanel {
    assets: Vec<AssetId>,
    dates: Vec<NaiveDate>,
    /// Asset-major: `values[a * dates.len() + d]`.
    values: Vec<f64>,
    asset_index: HashMap<AssetId, usize>,
    date_index: HashMap<NaiveDate, usize>,
    /// Last trading date of each calendar month present, ascending.
    month_ends: Vec<NaiveDate>,
}

impl DailyReturnPanel {
    /// Builds a panel from raw rows, enforcing the storage invariants.
    pub fn from_rows(rows: Vec<(NaiveDate, AssetId, f64)>) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::Invalid("empty panel".into()));
        }
        let mut cells: BTreeMap<(AssetId, NaiveDate), f64> = BTreeMap::new();
        for (date, asset, ret) in rows {
            let ret = validate_return(ret)
                .map_err(|msg| DataError::Invalid(format!("{asset} {date}: {msg}")))?;
            if cells.insert((asset.clone(), date), ret).is_some() {
                return Err(DataError::Invalid(format!(
                    "duplicate (asset, date) entry ({asset}, {date})"
                )));
            }
        }
        Ok(Self::from_cells(cells))
    }

    fn from_cells(cells: BTreeMap<(AssetId, NaiveDate), f64>) -> Self {
        let mut assets: Vec<AssetId> = cells.keys().map(|(a, _)| a.clone()).collect();
        assets.dedup();
        let mut dates: Vec<NaiveDate> = cells.keys().map(|&(_, d)| d).collect();
        dates.sort_unstable();
        dates.dedup();
        let asset_index: HashMap<AssetId, usize> =
            assets.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        let date_index: HashMap<NaiveDate, usize> =
            dates.iter().enumerate().map(|(i, &d)| (d, i)).collect();
        let mut values = vec![f64::NAN; assets.len() * dates.len()];
        for ((asset, date), ret) in &cells {
            let a = asset_index[asset];
            let d = date_index[date];
            values[a * dates.len() + d] = *ret;
        }
        let mut month_ends: Vec<NaiveDate> = Vec::new();
        for &d in &dates {
            match month_ends.last_mut() {
                Some(last) if MonthKey::from_date(*last) == MonthKey::from_date(d) => *last = d,
                _ => month_ends.push(d),
            }
        }
        DailyReturnPanel { assets, dates, values, asset_index, date_index, month_ends }
    }

    /// Loads a `date,asset_id,return` file.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let records = read_records(path, &["date", "asset_id", "return"])?;
        if records.is_empty() {
            return Err(DataError::file(path, "empty panel"));
        }
        let mut cells: BTreeMap<(AssetId, NaiveDate), f64> = BTreeMap::new();
        for rec in &records {
            let line = record_line(rec);
            let date = parse_date(&rec[0]).map_err(|m| DataError::row(path, line, m))?;
            let asset = rec[1].to_string();
            if asset.is_empty() {
                return Err(DataError::row(path, line, "empty asset_id"));
            }
            let ret = parse_f64(&rec[2], "return")
                .and_then(validate_return)
                .map_err(|m| DataError::row(path, line, m))?;
            if cells.insert((asset.clone(), date), ret).is_some() {
                return Err(DataError::row(
                    path,
                    line,
                    format!("duplicate (asset, date) entry ({asset}, {date})"),
                ));
            }
        }
        Ok(Self::from_cells(cells))
    }

    /// Writes the panel sorted by (date, asset); exact values survive a
    /// round-trip because floats are printed shortest-round-trip.
    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let mut body = String::from("date,asset_id,return\n");
        for (d, &date) in self.dates.iter().enumerate() {
            for (a, asset) in self.assets.iter().enumerate() {
                let v = self.values[a * self.dates.len() + d];
                if v.is_finite() {
                    body.push_str(&format!("{date},{asset},{v}\n"));
                }
            }
        }
        write_file(path, &body)
    }

    pub fn assets(&self) -> &[AssetId] {
        &self.assets
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn asset_index(&self, id: &str) -> Option<usize> {
        self.asset_index.get(id).copied()
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.date_index.get(&date).copied()
    }

    /// Dense row for one asset; NaN marks days the asset did not trade.
    /// Callers must treat NaN cells as absent, never as values.
    pub fn row(&self, asset: usize) -> &[f64] {
        &self.values[asset * self.dates.len()..(asset + 1) * self.dates.len()]
    }

    pub fn value(&self, asset: usize, date: usize) -> Option<f64> {
        let v = self.values[asset * self.dates.len() + date];
        v.is_finite().then_some(v)
    }

    /// Last trading date of each calendar month in the panel.
    pub fn month_ends(&self) -> &[NaiveDate] {
        &self.month_ends
    }

    pub fn is_month_end(&self, date: NaiveDate) -> bool {
        self.month_ends.binary_search(&date).is_ok()
    }

    /// Date-index range of the trailing-year window `(month_end - 1y, month_end]`.
    ///
    /// `month_end` must be one of the panel's month-end trading dates.
    pub fn window_range(&self, month_end: NaiveDate) -> Result<Range<usize>, DataError> {
        if !self.is_month_end(month_end) {
            return Err(DataError::Invalid(format!(
                "{month_end} is not a month-end trading date of the panel"
            )));
        }
        let lower = one_year_before(month_end);
        let start = self.dates.partition_point(|&d| d <= lower);
        let end = self.dates.partition_point(|&d| d <= month_end);
        Ok(start..end)
    }

    /// Dates within `range` on which `asset` has a stored return.
    pub fn asset_days_in(&self, asset: usize, range: Range<usize>) -> Vec<usize> {
        let row = self.row(asset);
        range.filter(|&d| row[d].is_finite()).collect()
    }

    /// Whether `asset` has a stored return on every one of `days`.
    pub fn covers_days(&self, asset: usize, days: &[usize]) -> bool {
        let row = self.row(asset);
        days.iter().all(|&d| row[d].is_finite())
    }

    /// Asset indices with at least `min_days` stored returns in the trailing
    /// year ending at `month_end`. Output is ascending, i.e. identifier order.
    pub fn eligible_assets(
        &self,
        month_end: NaiveDate,
        min_days: usize,
    ) -> Result<Vec<usize>, DataError> {
        if min_days == 0 {
            return Err(DataError::Invalid("min_days must be at least 1".into()));
        }
        let range = self.window_range(month_end)?;
        let mut out = Vec::new();
        for a in 0..self.assets.len() {
            let row = self.row(a);
            let count = range.clone().filter(|&d| row[d].is_finite()).count();
            if count >= min_days {
                out.push(a);
            }
        }
        Ok(out)
    }

    /// Present cells as (date, asset, value), sorted by (date, asset).
    pub fn rows(&self) -> Vec<(NaiveDate, AssetId, f64)> {
        let mut out = Vec::new();
        for (d, &date) in self.dates.iter().enumerate() {
            for (a, asset) in self.assets.iter().enumerate() {
                let v = self.values[a * self.dates.len() + d];
                if v.is_finite() {
                    out.push((date, asset.clone(), v));
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Monthly panel
// ---------------------------------------------------------------------------

/// Monthly return panel keyed by calendar month, with the risk-free series.
///
/// Each calendar month must carry a consistent date stamp across rows; the
/// stamp is preserved so outputs can echo the source's month-end convention.
#[derive(Debug, Clone)]
pub struct MonthlyReturnPanel {
    assets: Vec<AssetId>,
    months: Vec<MonthKey>,
    month_dates: Vec<NaiveDate>,
    /// Asset-major: `values[a * months.len() + m]`; NaN = absent.
    values: Vec<f64>,
    /// Aligned with `months`; NaN where the risk-free file has no row.
    rf: Vec<f64>,
    asset_index: HashMap<AssetId, usize>,
    month_index: HashMap<MonthKey, usize>,
}

impl MonthlyReturnPanel {
    pub fn from_rows(
        return_rows: Vec<(NaiveDate, AssetId, f64)>,
        rf_rows: Vec<(NaiveDate, f64)>,
    ) -> Result<Self, DataError> {
        if return_rows.is_empty() {
            return Err(DataError::Invalid("empty panel".into()));
        }
        let mut stamp: BTreeMap<MonthKey, NaiveDate> = BTreeMap::new();
        let mut cells: BTreeMap<(AssetId, MonthKey), f64> = BTreeMap::new();
        for (date, asset, ret) in return_rows {
            let month = MonthKey::from_date(date);
            let ret = validate_return(ret)
                .map_err(|msg| DataError::Invalid(format!("{asset} {date}: {msg}")))?;
            match stamp.get(&month) {
                Some(&d) if d != date => {
                    return Err(DataError::Invalid(format!(
                        "month {month} stamped with both {d} and {date}"
                    )));
                }
                _ => {
                    stamp.insert(month, date);
                }
            }
            if cells.insert((asset.clone(), month), ret).is_some() {
                return Err(DataError::Invalid(format!(
                    "duplicate (asset, month) entry ({asset}, {month})"
                )));
            }
        }
        let mut rf_map: BTreeMap<MonthKey, f64> = BTreeMap::new();
        for (date, r) in rf_rows {
            if !r.is_finite() {
                return Err(DataError::Invalid(format!("non-finite risk-free rate at {date}")));
            }
            let month = MonthKey::from_date(date);
            if rf_map.insert(month, r).is_some() {
                return Err(DataError::Invalid(format!("duplicate risk-free month {month}")));
            }
        }

        let mut assets: Vec<AssetId> = cells.keys().map(|(a, _)| a.clone()).collect();
        assets.dedup();
        let months: Vec<MonthKey> = stamp.keys().copied().collect();
        let month_dates: Vec<NaiveDate> = stamp.values().copied().collect();
        let asset_index: HashMap<AssetId, usize> =
            assets.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        let month_index: HashMap<MonthKey, usize> =
            months.iter().enumerate().map(|(i, &m)| (m, i)).collect();
        let mut values = vec![f64::NAN; assets.len() * months.len()];
        for ((asset, month), ret) in &cells {
            values[asset_index[asset] * months.len() + month_index[month]] = *ret;
        }
        let rf = months
            .iter()
            .map(|m| rf_map.get(m).copied().unwrap_or(f64::NAN))
            .collect();
        Ok(MonthlyReturnPanel { assets, months, month_dates, values, rf, asset_index, month_index })
    }

    /// Loads `date,asset_id,return` monthly returns plus a `date,rf` file.
    pub fn load(returns_path: &Path, rf_path: &Path) -> Result<Self, DataError> {
        let mut return_rows = Vec::new();
        for rec in read_records(returns_path, &["date", "asset_id", "return"])? {
            let line = record_line(&rec);
            let date = parse_date(&rec[0]).map_err(|m| DataError::row(returns_path, line, m))?;
            let asset = rec[1].to_string();
            if asset.is_empty() {
                return Err(DataError::row(returns_path, line, "empty asset_id"));
            }
            let ret = parse_f64(&rec[2], "return")
                .map_err(|m| DataError::row(returns_path, line, m))?;
            return_rows.push((date, asset, ret));
        }
        let mut rf_rows = Vec::new();
        for rec in read_records(rf_path, &["date", "rf"])? {
            let line = record_line(&rec);
            let date = parse_date(&rec[0]).map_err(|m| DataError::row(rf_path, line, m))?;
            let r = parse_f64(&rec[1], "rf").map_err(|m| DataError::row(rf_path, line, m))?;
            rf_rows.push((date, r));
        }
        Self::from_rows(return_rows, rf_rows)
    }

    pub fn write(&self, returns_path: &Path, rf_path: &Path) -> Result<(), DataError> {
        let mut body = String::from("date,asset_id,return\n");
        for (m, &date) in self.month_dates.iter().enumerate() {
            for (a, asset) in self.assets.iter().enumerate() {
                let v = self.values[a * self.months.len() + m];
                if v.is_finite() {
                    body.push_str(&format!("{date},{asset},{v}\n"));
                }
            }
        }
        write_file(returns_path, &body)?;
        let mut rf_body = String::from("date,rf\n");
        for (m, &date) in self.month_dates.iter().enumerate() {
            let r = self.rf[m];
            if r.is_finite() {
                rf_body.push_str(&format!("{date},{r}\n"));
            }
        }
        write_file(rf_path, &rf_body)
    }

    pub fn assets(&self) -> &[AssetId] {
        &self.assets
    }

    pub fn months(&self) -> &[MonthKey] {
        &self.months
    }

    pub fn asset_index(&self, id: &str) -> Option<usize> {
        self.asset_index.get(id).copied()
    }

    pub fn month_index(&self, month: MonthKey) -> Option<usize> {
        self.month_index.get(&month).copied()
    }

    /// Date stamp the source used for this month, e.g. its last trading day.
    pub fn month_date(&self, month: MonthKey) -> Option<NaiveDate> {
        self.month_index(month).map(|i| self.month_dates[i])
    }

    pub fn value(&self, asset: usize, month: MonthKey) -> Option<f64> {
        let m = self.month_index(month)?;
        let v = self.values[asset * self.months.len() + m];
        v.is_finite().then_some(v)
    }

    pub fn value_by_id(&self, asset: &str, month: MonthKey) -> Option<f64> {
        self.value(self.asset_index(asset)?, month)
    }

    pub fn rf(&self, month: MonthKey) -> Option<f64> {
        let m = self.month_index(month)?;
        let v = self.rf[m];
        v.is_finite().then_some(v)
    }

    pub fn return_rows(&self) -> Vec<(NaiveDate, AssetId, f64)> {
        let mut out = Vec::new();
        for (m, &date) in self.month_dates.iter().enumerate() {
            for (a, asset) in self.assets.iter().enumerate() {
                let v = self.values[a * self.months.len() + m];
                if v.is_finite() {
                    out.push((date, asset.clone(), v));
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Factor table
// ---------------------------------------------------------------------------

/// One factor file (daily or monthly): six named columns on a date grid.
#[derive(Debug, Clone)]
pub struct FactorTable {
    dates: Vec<NaiveDate>,
    values: Vec<[f64; 6]>,
    date_index: HashMap<NaiveDate, usize>,
}

impl FactorTable {
    pub fn from_rows(rows: Vec<(NaiveDate, [f64; 6])>) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::Invalid("empty factor table".into()));
        }
        let mut map: BTreeMap<NaiveDate, [f64; 6]> = BTreeMap::new();
        for (date, vals) in rows {
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(DataError::Invalid(format!("non-finite factor value at {date}")));
            }
            if map.insert(date, vals).is_some() {
                return Err(DataError::Invalid(format!("duplicate factor date {date}")));
            }
        }
        let dates: Vec<NaiveDate> = map.keys().copied().collect();
        let values: Vec<[f64; 6]> = map.values().copied().collect();
        let date_index = dates.iter().enumerate().map(|(i, &d)| (d, i)).collect();
        Ok(FactorTable { dates, values, date_index })
    }

    /// Loads a `date,mktrf,smb,hml,cma,rmw,mom` file.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let header: Vec<&str> =
            std::iter::once("date").chain(FACTOR_NAMES.iter().copied()).collect();
        let mut rows = Vec::new();
        for rec in read_records(path, &header)? {
            let line = record_line(&rec);
            let date = parse_date(&rec[0]).map_err(|m| DataError::row(path, line, m))?;
            let mut vals = [0.0; 6];
            for (k, v) in vals.iter_mut().enumerate() {
                *v = parse_f64(&rec[k + 1], FACTOR_NAMES[k])
                    .map_err(|m| DataError::row(path, line, m))?;
            }
            rows.push((date, vals));
        }
        Self::from_rows(rows).map_err(|e| match e {
            DataError::Invalid(msg) => DataError::file(path, msg),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let mut body = format!("date,{}\n", FACTOR_NAMES.join(","));
        for (i, &date) in self.dates.iter().enumerate() {
            let vals: Vec<String> = self.values[i].iter().map(|v| v.to_string()).collect();
            body.push_str(&format!("{date},{}\n", vals.join(",")));
        }
        write_file(path, &body)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn by_date(&self, date: NaiveDate) -> Option<&[f64; 6]> {
        self.date_index.get(&date).map(|&i| &self.values[i])
    }

    /// Month-keyed view for monthly tables; errors if any month has two rows.
    pub fn month_map(&self) -> Result<BTreeMap<MonthKey, [f64; 6]>, DataError> {
        let mut map = BTreeMap::new();
        for (i, &date) in self.dates.iter().enumerate() {
            if map.insert(MonthKey::from_date(date), self.values[i]).is_some() {
                return Err(DataError::Invalid(format!(
                    "factor table has multiple rows in month {}",
                    MonthKey::from_date(date)
                )));
            }
        }
        Ok(map)
    }

    pub fn rows(&self) -> Vec<(NaiveDate, [f64; 6])> {
        self.dates.iter().copied().zip(self.values.iter().copied()).collect()
    }
}

// ---------------------------------------------------------------------------
// Characteristics table
// ---------------------------------------------------------------------------

/// Month-end security characteristics used by the sorts.
#[derive(Debug, Clone, PartialEq)]
pub struct CharRow {
    /// Market capitalization in millions; positive where present.
    pub market_cap: Option<f64>,
    pub book_to_market: Option<f64>,
    /// Share volume on the month's last trading day.
    pub volume: Option<f64>,
    pub close_price: Option<f64>,
    /// Member of the universe that defines size and value breakpoints.
    pub breakpoint_universe: bool,
}

#[derive(Debug, Clone)]
pub struct CharacteristicsTable {
    rows: BTreeMap<(AssetId, MonthKey), CharRow>,
    stamp: BTreeMap<MonthKey, NaiveDate>,
}

impl CharacteristicsTable {
    pub fn from_rows(
        rows: Vec<(NaiveDate, AssetId, CharRow)>,
    ) -> Result<Self, DataError> {
        let mut map = BTreeMap::new();
        let mut stamp: BTreeMap<MonthKey, NaiveDate> = BTreeMap::new();
        for (date, asset, row) in rows {
            let month = MonthKey::from_date(date);
            if let Some(cap) = row.market_cap {
                if !(cap.is_finite() && cap > 0.0) {
                    return Err(DataError::Invalid(format!(
                        "{asset} {month}: market_cap must be positive, got {cap}"
                    )));
                }
            }
            if let Some(bm) = row.book_to_market {
                if !bm.is_finite() {
                    return Err(DataError::Invalid(format!(
                        "{asset} {month}: non-finite book_to_market"
                    )));
                }
            }
            for (name, v) in [("volume", row.volume), ("close_price", row.close_price)] {
                if let Some(v) = v {
                    if !(v.is_finite() && v >= 0.0) {
                        return Err(DataError::Invalid(format!(
                            "{asset} {month}: {name} must be non-negative, got {v}"
                        )));
                    }
                }
            }
            match stamp.get(&month) {
                Some(&d) if d != date => {
                    return Err(DataError::Invalid(format!(
                        "month {month} stamped with both {d} and {date}"
                    )));
                }
                _ => {
                    stamp.insert(month, date);
                }
            }
            if map.insert((asset.clone(), month), row).is_some() {
                return Err(DataError::Invalid(format!(
                    "duplicate characteristics row ({asset}, {month})"
                )));
            }
        }
        Ok(CharacteristicsTable { rows: map, stamp })
    }

    /// Loads `date,asset_id,market_cap,book_to_market,volume,close_price,breakpoint_universe`.
    /// Numeric fields may be empty (absent).
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let header = [
            "date",
            "asset_id",
            "market_cap",
            "book_to_market",
            "volume",
            "close_price",
            "breakpoint_universe",
        ];
        let mut rows = Vec::new();
        for rec in read_records(path, &header)? {
            let line = record_line(&rec);
            let date = parse_date(&rec[0]).map_err(|m| DataError::row(path, line, m))?;
            let asset = rec[1].to_string();
            if asset.is_empty() {
                return Err(DataError::row(path, line, "empty asset_id"));
            }
            let opt = |s: &str, what: &str| -> Result<Option<f64>, DataError> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    parse_f64(s, what).map(Some).map_err(|m| DataError::row(path, line, m))
                }
            };
            let breakpoint = match &rec[6] {
                "true" => true,
                "false" => false,
                other => {
                    return Err(DataError::row(
                        path,
                        line,
                        format!("bad breakpoint_universe {other:?}, expected true or false"),
                    ))
                }
            };
            rows.push((
                date,
                asset,
                CharRow {
                    market_cap: opt(&rec[2], "market_cap")?,
                    book_to_market: opt(&rec[3], "book_to_market")?,
                    volume: opt(&rec[4], "volume")?,
                    close_price: opt(&rec[5], "close_price")?,
                    breakpoint_universe: breakpoint,
                },
            ));
        }
        Self::from_rows(rows).map_err(|e| match e {
            DataError::Invalid(msg) => DataError::file(path, msg),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut body = String::from(
            "date,asset_id,market_cap,book_to_market,volume,close_price,breakpoint_universe\n",
        );
        let mut keys: Vec<&(AssetId, MonthKey)> = self.rows.keys().collect();
        keys.sort_by_key(|(a, m)| (*m, a.clone()));
        for key in keys {
            let (asset, month) = key;
            let row = &self.rows[key];
            let date = self.stamp[month];
            body.push_str(&format!(
                "{date},{asset},{},{},{},{},{}\n",
                fmt_opt(row.market_cap),
                fmt_opt(row.book_to_market),
                fmt_opt(row.volume),
                fmt_opt(row.close_price),
                row.breakpoint_universe,
            ));
        }
        write_file(path, &body)
    }

    pub fn get(&self, asset: &str, month: MonthKey) -> Option<&CharRow> {
        self.rows.get(&(asset.to_string(), month))
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&(AssetId, MonthKey), &CharRow)> {
        self.rows.iter()
    }
}

// ---------------------------------------------------------------------------
// Macro series
// ---------------------------------------------------------------------------

/// Named monthly macro series; months may be missing but gaps are reported.
#[derive(Debug, Clone)]
pub struct MacroSeries {
    series: BTreeMap<String, BTreeMap<MonthKey, f64>>,
}

impl MacroSeries {
    pub fn from_rows(rows: Vec<(NaiveDate, String, f64)>) -> Result<Self, DataError> {
        let mut series: BTreeMap<String, BTreeMap<MonthKey, f64>> = BTreeMap::new();
        for (date, name, value) in rows {
            if !value.is_finite() {
                return Err(DataError::Invalid(format!(
                    "non-finite value for {name} at {date}"
                )));
            }
            let month = MonthKey::from_date(date);
            if series.entry(name.clone()).or_default().insert(month, value).is_some() {
                return Err(DataError::Invalid(format!(
                    "duplicate macro row ({name}, {month})"
                )));
            }
        }
        Ok(MacroSeries { series })
    }

    /// Loads a `date,series,value` file.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let mut rows = Vec::new();
        for rec in read_records(path, &["date", "series", "value"])? {
            let line = record_line(&rec);
            let date = parse_date(&rec[0]).map_err(|m| DataError::row(path, line, m))?;
            let name = rec[1].to_string();
            if name.is_empty() {
                return Err(DataError::row(path, line, "empty series name"));
            }
            let value =
                parse_f64(&rec[2], "value").map_err(|m| DataError::row(path, line, m))?;
            rows.push((date, name, value));
        }
        Self::from_rows(rows).map_err(|e| match e {
            DataError::Invalid(msg) => DataError::file(path, msg),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let mut body = String::from("date,series,value\n");
        for (name, months) in &self.series {
            for (&month, &value) in months {
                body.push_str(&format!("{},{name},{value}\n", month.last_day()));
            }
        }
        write_file(path, &body)
    }

    pub fn names(&self) -> Vec<&str> {
        self.series.keys().map(|s| s.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&BTreeMap<MonthKey, f64>> {
        self.series.get(name)
    }

    /// Months missing between a series' first and last observation.
    pub fn gaps(&self, name: &str) -> Vec<MonthKey> {
        let Some(months) = self.series.get(name) else {
            return Vec::new();
        };
        let (Some(&first), Some(&last)) = (months.keys().next(), months.keys().last()) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let mut m = first;
        while m < last {
            m = m.next();
            if !months.contains_key(&m) {
                out.push(m);
            }
        }
        out
    }
}
