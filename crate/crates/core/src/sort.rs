//! Portfolio sorts on projection fit: decile assignment, equal-weighted bin
//! return series for the focal, replicate, and long-short legs, bivariate
//! dependent sorts that control for a characteristic, characteristic
//! computation from the raw panels, and per-bin summary statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::NaiveDate;
use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::dates::MonthKey;
use crate::market_data::{AssetId, CharacteristicsTable, DailyReturnPanel, FactorTable, MonthlyReturnPanel};
use crate::replicate::{ProjectionRecord, Realization};

pub const N_BINS: usize = 10;
pub const N_QUINTILES: usize = 5;

#[derive(Debug, Error)]
pub enum SortError {
    #[error("{0}")]
    BadInput(String),
}

/// One month-end's decile assignment: every sorted asset maps to a bin in
/// `1..=10` (1 = "Lo", 10 = "Hi"), and populations differ by at most one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinAssignment {
    pub month_end: NaiveDate,
    pub bins: BTreeMap<AssetId, usize>,
    pub populations: [usize; N_BINS],
}

impl BinAssignment {
    /// Assets in the given bin (1-based), in ascending id order.
    pub fn assets_in(&self, bin: usize) -> Vec<&AssetId> {
        self.bins.iter().filter(|(_, &b)| b == bin).map(|(id, _)| id).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leg {
    Focal,
    Replicate,
    LongShort,
}

/// One month of bin returns. The focal and replicate legs are excess
/// returns; the long-short leg is their difference, with no further
/// risk-free adjustment.
#[derive(Debug, Clone, PartialEq)]
pub struct BinRow {
    pub month: MonthKey,
    pub foc: [f64; N_BINS],
    pub rep: [f64; N_BINS],
    pub ls: [f64; N_BINS],
}

impl BinRow {
    pub fn leg(&self, leg: Leg) -> &[f64; N_BINS] {
        match leg {
            Leg::Focal => &self.foc,
            Leg::Replicate => &self.rep,
            Leg::LongShort => &self.ls,
        }
    }

    /// Simple mean over the ten bins.
    pub fn avg(&self, leg: Leg) -> f64 {
        self.leg(leg).iter().sum::<f64>() / N_BINS as f64
    }

    /// "Lo - Hi": bin 1 minus bin 10.
    pub fn lo_hi(&self, leg: Leg) -> f64 {
        let v = self.leg(leg);
        v[0] - v[N_BINS - 1]
    }
}

/// Monthly bin returns across the sample, one row per realized month.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BinSeries {
    pub rows: Vec<BinRow>,
}

impl BinSeries {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn months(&self) -> Vec<MonthKey> {
        self.rows.iter().map(|r| r.month).collect()
    }

    /// The time series of one bin (0-based index) on one leg.
    pub fn bin_series(&self, bin: usize, leg: Leg) -> Vec<f64> {
        self.rows.iter().map(|r| r.leg(leg)[bin]).collect()
    }

    pub fn avg_series(&self, leg: Leg) -> Vec<f64> {
        self.rows.iter().map(|r| r.avg(leg)).collect()
    }

    pub fn lo_hi_series(&self, leg: Leg) -> Vec<f64> {
        self.rows.iter().map(|r| r.lo_hi(leg)).collect()
    }
}

/// Ten characteristics for one (asset, month-end); fields that cannot be
/// computed from the available data stay `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicVector {
    pub asset: AssetId,
    pub month_end: NaiveDate,
    pub mkt_cap: Option<f64>,
    pub book_to_market: Option<f64>,
    pub idio_vol: Option<f64>,
    pub total_vol: Option<f64>,
    pub idio_skew: Option<f64>,
    pub total_skew: Option<f64>,
    pub amihud_illiq: Option<f64>,
    pub momentum: Option<f64>,
    pub short_term_reversal: Option<f64>,
    pub vold: Option<f64>,
}

pub const CHARACTERISTIC_NAMES: [&str; 10] = [
    "MktCap",
    "B/M",
    "IdioVol",
    "TotalVol",
    "IdioSkew",
    "TotalSkew",
    "AmihudIlliq",
    "Mom",
    "STR",
    "VOLD",
];

impl CharacteristicVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "MktCap" => self.mkt_cap,
            "B/M" => self.book_to_market,
            "IdioVol" => self.idio_vol,
            "TotalVol" => self.total_vol,
            "IdioSkew" => self.idio_skew,
            "TotalSkew" => self.total_skew,
            "AmihudIlliq" => self.amihud_illiq,
            "Mom" => self.momentum,
            "STR" => self.short_term_reversal,
            "VOLD" => self.vold,
            _ => None,
        }
    }
}

/// Splits scored assets into `n_bins` rank bins: ascending score, ties broken
/// by ascending asset id, and when sizes are uneven the lowest-index bins
/// take one extra asset each. Returns (asset, 1-based bin) pairs.
fn rank_bins(
    scores: &[(AssetId, f64)],
    n_bins: usize,
) -> Result<Vec<(AssetId, usize)>, SortError> {
    if scores.len() < n_bins {
        return Err(SortError::BadInput(format!(
            "need at least {n_bins} scored assets, got {}",
            scores.len()
        )));
    }
    if let Some((id, s)) = scores.iter().find(|(_, s)| !s.is_finite()) {
        return Err(SortError::BadInput(format!("non-finite score {s} for asset {id}")));
    }
    let mut ordered: Vec<&(AssetId, f64)> = scores.iter().collect();
    ordered.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));

    let base = scores.len() / n_bins;
    let extra = scores.len() % n_bins;
    let mut out = Vec::with_capacity(scores.len());
    let mut cursor = 0;
    for bin in 0..n_bins {
        let size = base + usize::from(bin < extra);
        for item in &ordered[cursor..cursor + size] {
            out.push((item.0.clone(), bin + 1));
        }
        cursor += size;
    }
    Ok(out)
}

/// Sorts assets into ascending-score deciles for one month-end.
pub fn decile_sort(
    scores: &[(AssetId, f64)],
    month_end: NaiveDate,
) -> Result<BinAssignment, SortError> {
    let assigned = rank_bins(scores, N_BINS)?;
    let mut bins = BTreeMap::new();
    let mut populations = [0usize; N_BINS];
    for (id, bin) in assigned {
        populations[bin - 1] += 1;
        if bins.insert(id.clone(), bin).is_some() {
            return Err(SortError::BadInput(format!("asset {id} scored twice")));
        }
    }
    Ok(BinAssignment { month_end, bins, populations })
}

/// Equal-weighted bin returns for one realized month. Both legs are excess
/// returns over `rf`; the long-short leg subtracts the replicate row from
/// the focal row with no further adjustment.
pub fn bin_returns(
    assignment: &BinAssignment,
    legs: &HashMap<AssetId, (f64, f64)>,
    rf: f64,
    month: MonthKey,
) -> Result<BinRow, SortError> {
    let mut foc_sum = [0.0; N_BINS];
    let mut rep_sum = [0.0; N_BINS];
    for (asset, &bin) in &assignment.bins {
        let &(focal, replicate) = legs.get(asset).ok_or_else(|| {
            SortError::BadInput(format!("asset {asset} has no realized return in {month}"))
        })?;
        foc_sum[bin - 1] += focal - rf;
        rep_sum[bin - 1] += replicate - rf;
    }
    let mut foc = [0.0; N_BINS];
    let mut rep = [0.0; N_BINS];
    let mut ls = [0.0; N_BINS];
    for k in 0..N_BINS {
        let n = assignment.populations[k];
        if n == 0 {
            return Err(SortError::BadInput(format!("bin {} is empty", k + 1)));
        }
        foc[k] = foc_sum[k] / n as f64;
        rep[k] = rep_sum[k] / n as f64;
        ls[k] = foc[k] - rep[k];
    }
    Ok(BinRow { month, foc, rep, ls })
}

/// Keeps records whose replicate holds at least one risky asset.
pub fn min_risky_filter(records: &[ProjectionRecord]) -> Vec<ProjectionRecord> {
    records.iter().filter(|r| r.n_nonzero >= 1).cloned().collect()
}

/// Groups projection records and realizations by month, sorts each month's
/// cross-section into fit deciles, and builds the monthly bin return series.
/// Months with fewer than ten realized assets are skipped. Records without a
/// realized focal return are left out of that month's sort.
pub fn build_bin_series(
    records: &[ProjectionRecord],
    realizations: &[Realization],
    min_risky: bool,
) -> Result<(Vec<BinAssignment>, BinSeries), SortError> {
    let filtered;
    let records = if min_risky {
        filtered = min_risky_filter(records);
        &filtered[..]
    } else {
        records
    };

    let realized: HashMap<(NaiveDate, &str), &Realization> =
        realizations.iter().map(|r| ((r.month_end, r.asset.as_str()), r)).collect();

    let mut by_month: BTreeMap<NaiveDate, Vec<(&ProjectionRecord, &Realization)>> =
        BTreeMap::new();
    for record in records {
        if let Some(&real) = realized.get(&(record.month_end, record.focal.as_str())) {
            by_month.entry(record.month_end).or_default().push((record, real));
        }
    }

    let mut assignments = Vec::new();
    let mut series = BinSeries::default();
    for (month_end, pairs) in by_month {
        if pairs.len() < N_BINS {
            continue;
        }
        let scores: Vec<(AssetId, f64)> =
            pairs.iter().map(|(rec, _)| (rec.focal.clone(), rec.r_squared)).collect();
        let assignment = decile_sort(&scores, month_end)?;
        let legs: HashMap<AssetId, (f64, f64)> = pairs
            .iter()
            .map(|(_, real)| (real.asset.clone(), (real.focal_return, real.replicate_return)))
            .collect();
        let (month, rf) = (pairs[0].1.month, pairs[0].1.rf);
        series.rows.push(bin_returns(&assignment, &legs, rf, month)?);
        assignments.push(assignment);
    }
    Ok((assignments, series))
}

/// Pooled focal-replicate correlation per fit decile: all (focal, replicate)
/// excess-return pairs of assets assigned to the bin, across months, reduced
/// to one Pearson correlation per bin. Bins with fewer than two pairs give
/// NaN.
pub fn bin_focal_replicate_correlation(
    assignments: &[BinAssignment],
    realizations: &[Realization],
) -> [f64; N_BINS] {
    let realized: HashMap<(NaiveDate, &str), &Realization> =
        realizations.iter().map(|r| ((r.month_end, r.asset.as_str()), r)).collect();
    let mut pools: Vec<Vec<(f64, f64)>> = vec![Vec::new(); N_BINS];
    for assignment in assignments {
        for (asset, &bin) in &assignment.bins {
            if let Some(real) = realized.get(&(assignment.month_end, asset.as_str())) {
                pools[bin - 1]
                    .push((real.focal_return - real.rf, real.replicate_return - real.rf));
            }
        }
    }
    let mut out = [f64::NAN; N_BINS];
    for (k, pool) in pools.iter().enumerate() {
        out[k] = pearson_pairs(pool);
    }
    out
}

fn pearson_pairs(pairs: &[(f64, f64)]) -> f64 {
    if pairs.len() < 2 {
        return f64::NAN;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in pairs {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Nearest-rank quintile breakpoints (20th/40th/60th/80th percentiles) of the
/// given scores, used to assign the full cross-section when the boundary
/// universe is a subset.
pub fn quintile_breakpoints(scores: &[f64]) -> Result<[f64; N_QUINTILES - 1], SortError> {
    if scores.len() < N_QUINTILES {
        return Err(SortError::BadInput(format!(
            "need at least {N_QUINTILES} scores for breakpoints, got {}",
            scores.len()
        )));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let mut out = [0.0; N_QUINTILES - 1];
    for (j, slot) in out.iter_mut().enumerate() {
        let rank = ((j + 1) * m).div_ceil(N_QUINTILES);
        *slot = sorted[rank - 1];
    }
    Ok(out)
}

fn quintile_of(score: f64, breakpoints: &[f64; N_QUINTILES - 1]) -> usize {
    1 + breakpoints.iter().filter(|&&b| score > b).count()
}

/// Bivariate dependent sort for the months covered by the records: each
/// month, assets are first split into characteristic quintiles (from
/// breakpoint-universe scores when given, otherwise rank quintiles of the
/// full cross-section), then sorted into fit deciles within each quintile;
/// each output bin is the simple mean of its within-quintile cells over the
/// nonempty quintiles. Quintiles with fewer than ten assets contribute no
/// cells; months with no usable quintile are skipped.
pub fn build_bivariate_series<F>(
    records: &[ProjectionRecord],
    realizations: &[Realization],
    characteristic: F,
    breakpoint_ids: Option<&BTreeSet<AssetId>>,
    min_risky: bool,
) -> Result<BinSeries, SortError>
where
    F: Fn(NaiveDate, &str) -> Option<f64>,
{
    let filtered;
    let records = if min_risky {
        filtered = min_risky_filter(records);
        &filtered[..]
    } else {
        records
    };
    let realized: HashMap<(NaiveDate, &str), &Realization> =
        realizations.iter().map(|r| ((r.month_end, r.asset.as_str()), r)).collect();

    let mut by_month: BTreeMap<NaiveDate, Vec<QuintileEntry>> = BTreeMap::new();
    for record in records {
        let real = match realized.get(&(record.month_end, record.focal.as_str())) {
            Some(&r) => r,
            None => continue,
        };
        let score = match characteristic(record.month_end, &record.focal) {
            Some(s) if s.is_finite() => s,
            _ => continue,
        };
        by_month.entry(record.month_end).or_default().push((record, real, score));
    }

    let mut series = BinSeries::default();
    for (month_end, entries) in by_month {
        let quintiles = match split_into_quintiles(&entries, breakpoint_ids) {
            Some(q) => q,
            None => continue,
        };
        let mut foc_cells: Vec<Vec<f64>> = vec![Vec::new(); N_BINS];
        let mut rep_cells: Vec<Vec<f64>> = vec![Vec::new(); N_BINS];
        let mut month = None;
        for members in quintiles {
            if members.len() < N_BINS {
                continue;
            }
            let scores: Vec<(AssetId, f64)> = members
                .iter()
                .map(|&(rec, _, _)| (rec.focal.clone(), rec.r_squared))
                .collect();
            let assignment = decile_sort(&scores, month_end)?;
            let mut foc_sum = [0.0; N_BINS];
            let mut rep_sum = [0.0; N_BINS];
            for &(rec, real, _) in &members {
                let bin = assignment.bins[&rec.focal];
                foc_sum[bin - 1] += real.focal_return - real.rf;
                rep_sum[bin - 1] += real.replicate_return - real.rf;
                month = Some(real.month);
            }
            for k in 0..N_BINS {
                let n = assignment.populations[k];
                if n > 0 {
                    foc_cells[k].push(foc_sum[k] / n as f64);
                    rep_cells[k].push(rep_sum[k] / n as f64);
                }
            }
        }
        let month = match month {
            Some(m) => m,
            None => continue,
        };
        let mut foc = [0.0; N_BINS];
        let mut rep = [0.0; N_BINS];
        let mut ls = [0.0; N_BINS];
        let mut complete = true;
        for k in 0..N_BINS {
            if foc_cells[k].is_empty() {
                complete = false;
                break;
            }
            foc[k] = foc_cells[k].iter().sum::<f64>() / foc_cells[k].len() as f64;
            rep[k] = rep_cells[k].iter().sum::<f64>() / rep_cells[k].len() as f64;
            ls[k] = foc[k] - rep[k];
        }
        if complete {
            series.rows.push(BinRow { month, foc, rep, ls });
        }
    }
    Ok(series)
}

type QuintileEntry<'a> = (&'a ProjectionRecord, &'a Realization, f64);

/// Splits one month's entries into five characteristic quintiles. With a
/// breakpoint universe, boundaries come from that subset's scores and every
/// asset is assigned by comparison; otherwise rank quintiles of the full
/// cross-section. Returns None when no quintile can be formed.
fn split_into_quintiles<'a>(
    entries: &[QuintileEntry<'a>],
    breakpoint_ids: Option<&BTreeSet<AssetId>>,
) -> Option<Vec<Vec<QuintileEntry<'a>>>> {
    if entries.len() < N_QUINTILES {
        return None;
    }
    let mut quintiles: Vec<Vec<QuintileEntry>> = vec![Vec::new(); N_QUINTILES];
    match breakpoint_ids {
        Some(universe) => {
            let subset: Vec<f64> = entries
                .iter()
                .filter(|(rec, _, _)| universe.contains(&rec.focal))
                .map(|&(_, _, s)| s)
                .collect();
            let breaks = quintile_breakpoints(&subset).ok()?;
            for &(rec, real, score) in entries {
                quintiles[quintile_of(score, &breaks) - 1].push((rec, real, score));
            }
        }
        None => {
            let scores: Vec<(AssetId, f64)> =
                entries.iter().map(|&(rec, _, s)| (rec.focal.clone(), s)).collect();
            let assigned = rank_bins(&scores, N_QUINTILES).ok()?;
            let bin_of: HashMap<&str, usize> =
                assigned.iter().map(|(id, b)| (id.as_str(), *b)).collect();
            for &(rec, real, score) in entries {
                quintiles[bin_of[rec.focal.as_str()] - 1].push((rec, real, score));
            }
        }
    }
    Some(quintiles)
}

/// Per-bin time-averaged summary of a characteristic: the cross-sectional
/// mean within each bin each month, then the time-series mean, standard
/// deviation, and 5th/95th percentiles of those monthly means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats {
    pub mean: f64,
    pub sd: f64,
    pub p5: f64,
    pub p95: f64,
    pub n_months: usize,
}

pub fn bin_summary<F>(
    assignments: &[BinAssignment],
    characteristic: F,
) -> [Option<SummaryStats>; N_BINS]
where
    F: Fn(NaiveDate, &str) -> Option<f64>,
{
    let mut monthly_means: Vec<Vec<f64>> = vec![Vec::new(); N_BINS];
    for assignment in assignments {
        let mut sums = [0.0; N_BINS];
        let mut counts = [0usize; N_BINS];
        for (asset, &bin) in &assignment.bins {
            if let Some(v) = characteristic(assignment.month_end, asset) {
                sums[bin - 1] += v;
                counts[bin - 1] += 1;
            }
        }
        for k in 0..N_BINS {
            if counts[k] > 0 {
                monthly_means[k].push(sums[k] / counts[k] as f64);
            }
        }
    }
    let mut out = [None; N_BINS];
    for (k, means) in monthly_means.iter().enumerate() {
        if means.is_empty() {
            continue;
        }
        let n = means.len() as f64;
        let mean = means.iter().sum::<f64>() / n;
        let sd = if means.len() < 2 {
            0.0
        } else {
            (means.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        out[k] = Some(SummaryStats {
            mean,
            sd,
            p5: percentile(means, 0.05),
            p95: percentile(means, 0.95),
            n_months: means.len(),
        });
    }
    out
}

/// Linear-interpolation percentile on the closed rank range (the spreadsheet
/// convention): rank = p (n - 1), interpolating between the bracketing order
/// statistics.
fn percentile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Computes the ten characteristics for every asset in the daily panel at
/// one month-end. Daily moments use the trailing twelve months of the
/// asset's returns; the idiosyncratic ones come from an OLS regression with
/// intercept on the first three factor columns; monthly fields use the
/// monthly panel and the characteristics table. Anything that cannot be
/// computed stays None.
pub fn compute_characteristics(
    daily: &DailyReturnPanel,
    monthly: &MonthlyReturnPanel,
    chars: &CharacteristicsTable,
    factors: &FactorTable,
    month_end: NaiveDate,
) -> Result<Vec<CharacteristicVector>, SortError> {
    let range = daily
        .window_range(month_end)
        .map_err(|e| SortError::BadInput(e.to_string()))?;
    let held_month = MonthKey::from_date(month_end);
    let next_month = held_month.next();

    let mut out = Vec::with_capacity(daily.n_assets());
    for a in 0..daily.n_assets() {
        let asset = &daily.assets()[a];
        let days = daily.asset_days_in(a, range.clone());
        let returns: Vec<f64> = days.iter().map(|&d| daily.row(a)[d]).collect();

        let total_vol = sample_std(&returns);
        let total_skew = skewness(&returns);

        let (idio_vol, idio_skew) = idio_moments(daily, factors, &days, &returns);

        let amihud_illiq = amihud(daily, chars, asset, &days, &returns);

        let row = chars.get(asset, held_month);
        let mkt_cap = row.and_then(|r| r.market_cap);
        let book_to_market = row.and_then(|r| r.book_to_market);
        let vold = row.and_then(vold_of);

        let momentum = compounded_return(monthly, asset, next_month.plus_months(-12), 11);
        let short_term_reversal =
            monthly.value_by_id(asset, held_month).map(|r| 100.0 * r);

        out.push(CharacteristicVector {
            asset: asset.clone(),
            month_end,
            mkt_cap,
            book_to_market,
            idio_vol,
            total_vol,
            idio_skew,
            total_skew,
            amihud_illiq,
            momentum,
            short_term_reversal,
            vold,
        });
    }
    Ok(out)
}

/// Dollar volume: share volume times closing price, in millions.
fn vold_of(row: &crate::market_data::CharRow) -> Option<f64> {
    match (row.volume, row.close_price) {
        (Some(v), Some(c)) if v > 0.0 && c > 0.0 => Some(v * c / 1e6),
        _ => None,
    }
}

fn sample_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    Some((xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Pearson's moment coefficient of skewness, m3 / m2^(3/2), without bias
/// adjustment. Undefined for fewer than three points or zero variance.
fn skewness(xs: &[f64]) -> Option<f64> {
    if xs.len() < 3 {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if m2 == 0.0 {
        return None;
    }
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    Some(m3 / m2.powf(1.5))
}

/// Residual volatility and skewness from an OLS regression with intercept on
/// the first three factor columns over the asset's window days.
fn idio_moments(
    daily: &DailyReturnPanel,
    factors: &FactorTable,
    days: &[usize],
    returns: &[f64],
) -> (Option<f64>, Option<f64>) {
    if days.len() < 5 {
        return (None, None);
    }
    let mut x = DMatrix::zeros(days.len(), 4);
    for (r, &d) in days.iter().enumerate() {
        let date = daily.dates()[d];
        let Some(row) = factors.by_date(date) else {
            return (None, None);
        };
        x[(r, 0)] = 1.0;
        x[(r, 1)] = row[0];
        x[(r, 2)] = row[1];
        x[(r, 3)] = row[2];
    }
    let y = DVector::from_column_slice(returns);
    let xtx = x.transpose() * &x;
    let Some(chol) = Cholesky::new(xtx) else {
        return (None, None);
    };
    let beta = chol.solve(&(x.transpose() * &y));
    let resid: Vec<f64> = (&y - &x * beta).iter().copied().collect();
    (sample_std(&resid), skewness(&resid))
}

/// Mean of |return| / dollar volume over the asset's window days, using the
/// asset's month-end dollar volume for every day of that month.
fn amihud(
    daily: &DailyReturnPanel,
    chars: &CharacteristicsTable,
    asset: &str,
    days: &[usize],
    returns: &[f64],
) -> Option<f64> {
    if days.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for (&d, &r) in days.iter().zip(returns) {
        let month = MonthKey::from_date(daily.dates()[d]);
        let vold = chars.get(asset, month).and_then(vold_of)?;
        sum += r.abs() / vold;
    }
    Some(sum / days.len() as f64)
}

/// Compounded return over `n_months` consecutive months starting at `start`;
/// None when any month is missing.
fn compounded_return(
    monthly: &MonthlyReturnPanel,
    asset: &str,
    start: MonthKey,
    n_months: usize,
) -> Option<f64> {
    let mut growth = 1.0;
    let mut m = start;
    for _ in 0..n_months {
        growth *= 1.0 + monthly.value_by_id(asset, m)?;
        m = m.next();
    }
    Some(growth - 1.0)
}
