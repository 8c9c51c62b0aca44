//! Per-asset replicate construction: projection windows, weight
//! normalization, replicate and long-short returns, and the projection cycle
//! that runs them over every eligible (asset, month-end) pair.
//!
//! At each month-end the focal asset's trailing-year daily returns are
//! projected onto the pooled returns of every other asset that traded on all
//! of the focal's window days. The penalized projection vector, normalized by
//! its L1 norm, becomes investment weights into those peers; the remainder
//! `1 - sum(weights)` sits in the risk-free asset. The replicate's
//! one-month-ahead return is compared against the focal's, and the difference
//! (long focal, short replicate) is the hedged return whose premium the rest
//! of the pipeline studies.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::dates::MonthKey;
use crate::enet::{self, CvConfig, EnetError};
use crate::market_data::{AssetId, DailyReturnPanel, DataError, MonthlyReturnPanel};

#[derive(Debug, Error)]
pub enum ReplicateError {
    #[error("{0}")]
    Ineligible(String),
    #[error("no spanning universe")]
    NoPeers,
    #[error("{0}")]
    BadInput(String),
    #[error("{0}")]
    MissingData(String),
    #[error(transparent)]
    Enet(#[from] EnetError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// What to do when a peer with nonzero weight has no monthly return at
/// realization (for instance a delisting between projection and realization).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingPolicy {
    /// Reallocate the missing peer's weight to the risk-free leg, keeping the
    /// replicate fully invested. The default.
    Riskfree,
    /// Drop the record from the cycle output entirely.
    Drop,
}

/// One projection design: the focal's window days and the peer columns that
/// cover all of them.
#[derive(Debug, Clone)]
pub struct ProjectionWindow {
    pub focal: AssetId,
    pub focal_index: usize,
    pub month_end: NaiveDate,
    /// Focal daily returns on its own trading days within the window.
    pub y: DVector<f64>,
    /// Peer daily returns on exactly those days, one column per peer.
    pub x: DMatrix<f64>,
    /// Ascending asset ids, aligned with the columns of `x`.
    pub peer_ids: Vec<AssetId>,
    pub peer_indices: Vec<usize>,
}

/// Output of one projection: the fit, the raw and normalized sparse weights
/// (keyed by peer asset id, ascending), and the selected penalty level.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionRecord {
    pub focal: AssetId,
    pub month_end: NaiveDate,
    pub r_squared: f64,
    pub beta_hat: Vec<(AssetId, f64)>,
    pub beta_tilde: Vec<(AssetId, f64)>,
    pub n_nonzero: usize,
    /// `1' beta_tilde`: the fraction of the replicate invested in equities.
    pub equity_proportion: f64,
    pub lambda: f64,
    pub converged: bool,
}

/// One realized month for a projection: focal and replicate returns for the
/// month immediately after the window, plus the risk-free rate used.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub month_end: NaiveDate,
    pub asset: AssetId,
    pub month: MonthKey,
    pub focal_return: f64,
    pub replicate_return: f64,
    pub long_short: f64,
    pub rf: f64,
}

/// A window or realization that could not be produced; the cycle records it
/// and moves on.
#[derive(Debug, Clone)]
pub struct CycleFailure {
    pub month_end: NaiveDate,
    pub asset: AssetId,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct CycleConfig {
    pub cv: CvConfig,
    pub min_days: usize,
    pub policy: MissingPolicy,
}

impl Default for CycleConfig {
    fn default() -> Self {
        CycleConfig { cv: CvConfig::default(), min_days: 60, policy: MissingPolicy::Riskfree }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CycleOutput {
    /// One record per surviving (month-end, asset), sorted by (month-end,
    /// asset id).
    pub records: Vec<ProjectionRecord>,
    /// Realized legs aligned with `records`, minus entries whose focal has no
    /// realization-month return.
    pub realizations: Vec<Realization>,
    pub failures: Vec<CycleFailure>,
}

/// Assembles the projection design for one (focal, month-end): the focal's
/// trading days within the trailing twelve calendar months, and every other
/// asset whose trading days cover all of them, in ascending id order.
pub fn build_window(
    panel: &DailyReturnPanel,
    focal: &str,
    month_end: NaiveDate,
    min_days: usize,
) -> Result<ProjectionWindow, ReplicateError> {
    if min_days == 0 {
        return Err(ReplicateError::BadInput("min_days must be at least 1".into()));
    }
    let focal_index = panel
        .asset_index(focal)
        .ok_or_else(|| ReplicateError::BadInput(format!("unknown asset {focal}")))?;
    let range = panel.window_range(month_end)?;
    let days = panel.asset_days_in(focal_index, range);
    if days.len() < min_days {
        return Err(ReplicateError::Ineligible(format!(
            "asset {focal} has {} trading days before {month_end}, needs {min_days}",
            days.len()
        )));
    }
    let mut peer_indices = Vec::new();
    for a in 0..panel.n_assets() {
        if a != focal_index && panel.covers_days(a, &days) {
            peer_indices.push(a);
        }
    }
    if peer_indices.is_empty() {
        return Err(ReplicateError::NoPeers);
    }
    let focal_row = panel.row(focal_index);
    let y = DVector::from_fn(days.len(), |r, _| focal_row[days[r]]);
    let x = DMatrix::from_fn(days.len(), peer_indices.len(), |r, c| {
        panel.row(peer_indices[c])[days[r]]
    });
    let peer_ids = peer_indices.iter().map(|&a| panel.assets()[a].clone()).collect();
    Ok(ProjectionWindow {
        focal: focal.to_string(),
        focal_index,
        month_end,
        y,
        x,
        peer_ids,
        peer_indices,
    })
}

/// Divides a sparse coefficient vector by its L1 norm; the zero vector maps
/// to the zero vector. Signs are preserved and the result's L1 norm is 1.
pub fn normalize_weights(beta_hat: &[(AssetId, f64)]) -> Vec<(AssetId, f64)> {
    let norm: f64 = beta_hat.iter().map(|(_, v)| v.abs()).sum();
    if norm == 0.0 {
        return Vec::new();
    }
    beta_hat.iter().map(|(id, v)| (id.clone(), v / norm)).collect()
}

/// The replicate's return for one month: the normalized weights buy the
/// peers, and `1 - sum(weights)` earns the risk-free rate, so the position is
/// fully invested by construction. Returns `Ok(None)` when a weighted peer
/// has no return and the policy drops the record.
pub fn replicate_return(
    record: &ProjectionRecord,
    monthly: &MonthlyReturnPanel,
    month: MonthKey,
    policy: MissingPolicy,
) -> Result<Option<f64>, ReplicateError> {
    let rf = monthly
        .rf(month)
        .ok_or_else(|| ReplicateError::MissingData(format!("missing risk-free rate for {month}")))?;
    let mut equity = 0.0;
    let mut resolved_weight = 0.0;
    for (peer, w) in &record.beta_tilde {
        match monthly.value_by_id(peer, month) {
            Some(r) => {
                equity += w * r;
                resolved_weight += w;
            }
            None => match policy {
                MissingPolicy::Riskfree => {}
                MissingPolicy::Drop => return Ok(None),
            },
        }
    }
    Ok(Some((1.0 - resolved_weight) * rf + equity))
}

/// Long the focal, short its replicate.
pub fn long_short_return(focal_return: f64, replicate_return: f64) -> f64 {
    focal_return - replicate_return
}

/// Runs the full projection cycle: for every month-end in `month_ends` and
/// every asset, build the window, select the penalty by cross-validation,
/// record the projection, and realize the one-month-ahead returns.
///
/// Tasks run as a parallel map over an immutable panel and are collected in
/// canonical (month-end, asset id) order, so output is byte-identical for any
/// worker count. Window failures (ineligibility, no peers, degenerate fits)
/// are recorded and skipped.
pub fn run_projection_cycle(
    daily: &DailyReturnPanel,
    monthly: &MonthlyReturnPanel,
    month_ends: &[NaiveDate],
    config: &CycleConfig,
) -> CycleOutput {
    let tasks: Vec<(NaiveDate, usize)> = month_ends
        .iter()
        .flat_map(|&me| (0..daily.n_assets()).map(move |a| (me, a)))
        .collect();

    let results: Vec<Result<(ProjectionRecord, Option<Realization>), CycleFailure>> = tasks
        .par_iter()
        .map(|&(month_end, asset)| project_one(daily, monthly, month_end, asset, config))
        .collect();

    let mut out = CycleOutput::default();
    for result in results {
        match result {
            Ok((record, realization)) => {
                out.records.push(record);
                if let Some(r) = realization {
                    out.realizations.push(r);
                }
            }
            Err(failure) => out.failures.push(failure),
        }
    }
    out
}

fn project_one(
    daily: &DailyReturnPanel,
    monthly: &MonthlyReturnPanel,
    month_end: NaiveDate,
    asset: usize,
    config: &CycleConfig,
) -> Result<(ProjectionRecord, Option<Realization>), CycleFailure> {
    let focal = daily.assets()[asset].clone();
    let fail = |reason: String| CycleFailure { month_end, asset: focal.clone(), reason };

    let window = build_window(daily, &focal, month_end, config.min_days)
        .map_err(|e| fail(e.to_string()))?;
    let cv = enet::cross_validate(&window.x, &window.y, &config.cv)
        .map_err(|e| fail(e.to_string()))?;
    let r_squared = enet::r_squared(&window.x, &window.y, &cv.solution.beta)
        .map_err(|e| fail(e.to_string()))?;

    let beta_hat: Vec<(AssetId, f64)> = cv
        .solution
        .beta
        .iter()
        .map(|&(j, v)| (window.peer_ids[j].clone(), v))
        .collect();
    let beta_tilde = normalize_weights(&beta_hat);
    let equity_proportion: f64 = beta_tilde.iter().map(|(_, v)| v).sum();
    let record = ProjectionRecord {
        focal: focal.clone(),
        month_end,
        r_squared,
        n_nonzero: beta_hat.len(),
        beta_hat,
        beta_tilde,
        equity_proportion,
        lambda: cv.lambda,
        converged: cv.solution.converged,
    };

    let month = MonthKey::from_date(month_end).next();
    let replicate = replicate_return(&record, monthly, month, config.policy)
        .map_err(|e| fail(e.to_string()))?;
    let realization = match (replicate, monthly.value_by_id(&focal, month)) {
        (Some(rep), Some(foc)) => Some(Realization {
            month_end,
            asset: focal,
            month,
            focal_return: foc,
            replicate_return: rep,
            long_short: long_short_return(foc, rep),
            rf: monthly.rf(month).unwrap_or(f64::NAN),
        }),
        (None, _) => {
            // Drop policy: a weighted peer vanished, discard the record too.
            return Err(fail(format!("peer return missing in {month} under drop policy")));
        }
        (Some(_), None) => None,
    };
    Ok((record, realization))
}

/// Projection of the focal window onto daily factor series by unpenalized
/// least squares without an intercept, plus the factor-built replicate's
/// return for the realization month.
#[derive(Debug, Clone)]
pub struct FactorReplicate {
    pub r_squared: f64,
    pub beta_hat: DVector<f64>,
    pub beta_tilde: DVector<f64>,
    pub replicate_return: f64,
}

/// Replicates the focal from `z` factor series (3 or 5) instead of peers.
/// All-zero factor columns take coefficient zero; any other singular design
/// is an error. Normalization and the realized return follow the same
/// L1-normalized, fully invested construction as the peer replicate.
pub fn ff_ols_replicate(
    y: &DVector<f64>,
    daily_factors: &DMatrix<f64>,
    monthly_factors: &[f64],
    rf: f64,
) -> Result<FactorReplicate, ReplicateError> {
    let z = daily_factors.ncols();
    if z != 3 && z != 5 {
        return Err(ReplicateError::BadInput(format!("expected 3 or 5 factor columns, got {z}")));
    }
    if daily_factors.nrows() != y.len() {
        return Err(ReplicateError::BadInput(format!(
            "{} factor rows for {} focal days",
            daily_factors.nrows(),
            y.len()
        )));
    }
    if monthly_factors.len() != z {
        return Err(ReplicateError::BadInput(format!(
            "{} monthly factor values for {z} factors",
            monthly_factors.len()
        )));
    }
    let live: Vec<usize> =
        (0..z).filter(|&k| daily_factors.column(k).iter().any(|&v| v != 0.0)).collect();
    let mut beta_hat = DVector::zeros(z);
    if !live.is_empty() {
        let xl = DMatrix::from_fn(y.len(), live.len(), |r, c| daily_factors[(r, live[c])]);
        let xtx = xl.transpose() * &xl;
        let xty = xl.transpose() * y;
        let chol = nalgebra::Cholesky::new(xtx)
            .ok_or_else(|| ReplicateError::BadInput("singular factor design".into()))?;
        let b = chol.solve(&xty);
        for (c, &k) in live.iter().enumerate() {
            beta_hat[k] = b[c];
        }
    }

    let resid = y - daily_factors * &beta_hat;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if sst == 0.0 {
        return Err(ReplicateError::BadInput("degenerate focal series".into()));
    }
    let r_squared = 1.0 - resid.norm_squared() / sst;

    let norm: f64 = beta_hat.iter().map(|v| v.abs()).sum();
    let beta_tilde = if norm == 0.0 { DVector::zeros(z) } else { &beta_hat / norm };
    let equity: f64 = beta_tilde.iter().sum();
    let replicate_return = (1.0 - equity) * rf
        + beta_tilde.iter().zip(monthly_factors).map(|(w, f)| w * f).sum::<f64>();
    Ok(FactorReplicate { r_squared, beta_hat, beta_tilde, replicate_return })
}
