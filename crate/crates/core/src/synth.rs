//! Synthetic linear-factor economies with known ground truth.
//!
//! Generated assets follow `R_{i,d} = alpha_i + beta_i' F_d + eps_{i,d}` with
//! Gaussian factor and idiosyncratic draws, deterministic in the seed. The
//! loading matrix uses a two-cluster design: a dense cluster of near-identical
//! rows (assets with many close substitutes) plus isolated rows that swap
//! common loading for an asset-specific direction orthogonal to it (assets
//! with no close substitute). Each isolated direction is reflected into the
//! half-space where its expected factor return is positive, so the economy
//! has a built-in gradient: the harder an asset is to replicate from its
//! peers, the larger the average return its unhedged exposure earns.
//! Downstream statistics are verified against this gradient.
//!
//! Ground truth keeps every draw, so tests can reconstruct any return exactly
//! and compare pipeline estimates against the generating parameters.

use chrono::{Days, NaiveDate};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::dates::{is_weekday, MonthKey};
use crate::market_data::{AssetId, DailyReturnPanel, DataError, MonthlyReturnPanel};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{0}")]
    BadConfig(String),
    #[error("factor covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Parameters of one synthetic economy. `n_assets` counts the focal universe
/// (N + 1 assets); the factor structure must leave strictly more risky assets
/// than factors, `n_assets - 1 > n_factors >= 1`.
#[derive(Debug, Clone)]
pub struct EconomyConfig {
    pub n_assets: usize,
    pub n_factors: usize,
    /// Trading days in the daily panel.
    pub n_days: usize,
    /// Complete calendar months in the monthly panel.
    pub n_months: usize,
    /// Daily factor means (decimal returns).
    pub factor_mean: DVector<f64>,
    /// Daily factor covariance; symmetric positive-definite.
    pub factor_cov: DMatrix<f64>,
    /// Dispersion of intercepts around zero; 0 gives exact factor pricing.
    pub alpha_scale: f64,
    /// Dispersion of loadings around the common base loading of 1; 0 gives
    /// identical loadings for every asset.
    pub beta_scale: f64,
    /// Daily idiosyncratic volatility, >= 0.
    pub idio_vol: f64,
    pub seed: u64,
}

impl EconomyConfig {
    fn validate(&self) -> Result<(), SynthError> {
        if self.n_factors == 0 {
            return Err(SynthError::BadConfig("n_factors must be at least 1".into()));
        }
        if self.n_assets < self.n_factors + 2 {
            return Err(SynthError::BadConfig(format!(
                "need strictly more risky assets than factors: n_assets = {} leaves N = {} <= K = {}",
                self.n_assets,
                self.n_assets.saturating_sub(1),
                self.n_factors
            )));
        }
        if self.n_days == 0 || self.n_months == 0 {
            return Err(SynthError::BadConfig("n_days and n_months must be positive".into()));
        }
        if self.factor_mean.len() != self.n_factors {
            return Err(SynthError::BadConfig(format!(
                "factor_mean has {} entries for {} factors",
                self.factor_mean.len(),
                self.n_factors
            )));
        }
        if self.factor_cov.nrows() != self.n_factors || self.factor_cov.ncols() != self.n_factors {
            return Err(SynthError::BadConfig(format!(
                "factor_cov is {}x{} for {} factors",
                self.factor_cov.nrows(),
                self.factor_cov.ncols(),
                self.n_factors
            )));
        }
        if self.factor_mean.iter().any(|v| !v.is_finite())
            || self.factor_cov.iter().any(|v| !v.is_finite())
        {
            return Err(SynthError::BadConfig("non-finite factor parameters".into()));
        }
        let max_abs = self.factor_cov.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..self.n_factors {
            for j in (i + 1)..self.n_factors {
                if (self.factor_cov[(i, j)] - self.factor_cov[(j, i)]).abs() > 1e-12 * max_abs {
                    return Err(SynthError::BadConfig("factor_cov is not symmetric".into()));
                }
            }
        }
        if !(self.alpha_scale >= 0.0 && self.alpha_scale.is_finite()) {
            return Err(SynthError::BadConfig("alpha_scale must be nonnegative".into()));
        }
        if !(self.beta_scale >= 0.0 && self.beta_scale.is_finite()) {
            return Err(SynthError::BadConfig("beta_scale must be nonnegative".into()));
        }
        if !(self.idio_vol >= 0.0 && self.idio_vol.is_finite()) {
            return Err(SynthError::BadConfig("idio_vol must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Everything the generator drew, plus the panels built from it. The daily
/// panel holds the first `n_days` trading days; the monthly panel compounds
/// the first `n_months` complete calendar months. Both derive from the same
/// draws, whose dates are `draw_dates`.
#[derive(Debug, Clone)]
pub struct EconomyGroundTruth {
    pub alphas: DVector<f64>,
    /// One row of loadings per asset, `n_assets x n_factors`.
    pub betas: DMatrix<f64>,
    /// `draw_dates.len() x n_factors`.
    pub factor_draws: DMatrix<f64>,
    /// `draw_dates.len() x n_assets`.
    pub idio_draws: DMatrix<f64>,
    pub draw_dates: Vec<NaiveDate>,
    pub daily: DailyReturnPanel,
    pub monthly: MonthlyReturnPanel,
}

impl EconomyGroundTruth {
    pub fn n_assets(&self) -> usize {
        self.alphas.len()
    }
}

/// Asset identifiers are zero-padded indices, so lexicographic order equals
/// index order.
pub fn asset_name(index: usize) -> AssetId {
    format!("A{index:05}")
}

/// Weekday calendar from 2001-01-01 covering at least `n_days` days and at
/// least the first `n_months` complete calendar months.
fn trading_calendar(n_days: usize, n_months: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2001, 1, 1).expect("valid epoch");
    let last_month = MonthKey::new(2001, 1).plus_months(n_months as i64 - 1);
    let mut dates = Vec::new();
    let mut d = start;
    while dates.len() < n_days || MonthKey::from_date(d) <= last_month {
        if is_weekday(d) {
            dates.push(d);
        }
        d = d.checked_add_days(Days::new(1)).expect("date range");
    }
    dates
}

/// Draws one economy. All randomness comes from a ChaCha stream seeded with
/// `config.seed`, consumed in a fixed documented order (alphas, loadings,
/// factor draws day-major, idiosyncratic draws day-major), so identical
/// configs give bitwise-identical output.
pub fn generate(config: &EconomyConfig) -> Result<EconomyGroundTruth, SynthError> {
    config.validate()?;
    let chol =
        Cholesky::new(config.factor_cov.clone()).ok_or(SynthError::NotPositiveDefinite)?;
    let l = chol.l();
    let n_assets = config.n_assets;
    let k = config.n_factors;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let alphas =
        DVector::from_fn(n_assets, |_, _| config.alpha_scale * normal(&mut rng));

    // Two-cluster loadings around the common base loading 1. Dense rows are
    // tight perturbations of the all-ones row, so each has hundreds of close
    // substitutes. Isolated rows trade the common loading away for an
    // asset-specific direction orthogonal to it: the common coupling shrinks
    // as the own direction grows, the way a niche firm responds less to
    // market-wide factors and more to its own fortunes. The own direction is
    // reflected into the half-space where its expected factor return is
    // nonnegative (falling back to the all-ones direction when factor means
    // are zero), so unreplicable exposure carries a nonnegative premium.
    // beta_scale = 0 collapses both clusters to identical rows.
    let n_dense = n_assets * 2 / 5;
    let premium_dir: Vec<f64> = if config.factor_mean.iter().all(|&m| m == 0.0) {
        vec![1.0; k]
    } else {
        config.factor_mean.iter().copied().collect()
    };
    let mut betas = DMatrix::zeros(n_assets, k);
    for i in 0..n_assets {
        if i < n_dense {
            for j in 0..k {
                betas[(i, j)] = 1.0 + 0.2 * config.beta_scale * normal(&mut rng);
            }
        } else {
            let mut z: Vec<f64> = (0..k).map(|_| normal(&mut rng)).collect();
            // Orthogonal to the cluster's common loading, so isolated assets
            // differ from every dense basket in direction, not merely scale.
            let zbar = z.iter().sum::<f64>() / k as f64;
            for v in z.iter_mut() {
                *v -= zbar;
            }
            let own = 1.5 * config.beta_scale;
            let znorm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let coupling = 1.0 / (1.0 + own * znorm);
            let align: f64 = z.iter().zip(&premium_dir).map(|(a, b)| a * b).sum();
            let flip = if align < 0.0 { -1.0 } else { 1.0 };
            for j in 0..k {
                betas[(i, j)] = coupling + own * flip * z[j];
            }
        }
    }

    let dates = trading_calendar(config.n_days, config.n_months);
    let n_draw_days = dates.len();

    let mut factor_draws = DMatrix::zeros(n_draw_days, k);
    let mut z = DVector::zeros(k);
    for d in 0..n_draw_days {
        for j in 0..k {
            z[j] = normal(&mut rng);
        }
        let f = &config.factor_mean + &l * &z;
        for j in 0..k {
            factor_draws[(d, j)] = f[j];
        }
    }

    let mut idio_draws = DMatrix::zeros(n_draw_days, n_assets);
    for d in 0..n_draw_days {
        for i in 0..n_assets {
            idio_draws[(d, i)] = config.idio_vol * normal(&mut rng);
        }
    }

    // R_{i,d} = alpha_i + beta_i' F_d + eps_{i,d}; the loop shape below is
    // the reference order tests replay to check bitwise reproduction.
    let returns = |i: usize, d: usize| -> f64 {
        let mut r = alphas[i];
        for j in 0..k {
            r += betas[(i, j)] * factor_draws[(d, j)];
        }
        r + idio_draws[(d, i)]
    };

    let mut daily_rows = Vec::with_capacity(config.n_days * n_assets);
    for (d, &date) in dates.iter().take(config.n_days).enumerate() {
        for i in 0..n_assets {
            daily_rows.push((date, asset_name(i), returns(i, d)));
        }
    }
    let daily = DailyReturnPanel::from_rows(daily_rows).map_err(|e| {
        SynthError::Invalid(format!(
            "generated daily returns violate the panel contract ({e}); reduce the scale parameters"
        ))
    })?;

    let last_month = MonthKey::new(2001, 1).plus_months(config.n_months as i64 - 1);
    let mut monthly_rows = Vec::with_capacity(config.n_months * n_assets);
    let mut rf_rows = Vec::with_capacity(config.n_months);
    let mut d = 0usize;
    while d < n_draw_days {
        let month = MonthKey::from_date(dates[d]);
        let mut end = d;
        while end + 1 < n_draw_days && MonthKey::from_date(dates[end + 1]) == month {
            end += 1;
        }
        if month <= last_month {
            let stamp = dates[end];
            rf_rows.push((stamp, 0.0));
            for i in 0..n_assets {
                let mut growth = 1.0;
                for day in d..=end {
                    growth *= 1.0 + returns(i, day);
                }
                monthly_rows.push((stamp, asset_name(i), growth - 1.0));
            }
        }
        d = end + 1;
    }
    let monthly = MonthlyReturnPanel::from_rows(monthly_rows, rf_rows).map_err(|e| {
        SynthError::Invalid(format!(
            "generated monthly returns violate the panel contract ({e}); reduce the scale parameters"
        ))
    })?;

    Ok(EconomyGroundTruth {
        alphas,
        betas,
        factor_draws,
        idio_draws,
        draw_dates: dates,
        daily,
        monthly,
    })
}

#[inline]
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Unpenalized projection of one asset's daily returns on all other assets.
#[derive(Debug, Clone)]
pub struct OracleReplication {
    /// Weight per peer, aligned with `peer_indices`.
    pub weights: DVector<f64>,
    pub residuals: DVector<f64>,
    /// Asset indices of the peers, ascending (every asset except the focal).
    pub peer_indices: Vec<usize>,
    /// True when the peer return matrix is rank-deficient and the weights are
    /// the minimum-norm least-squares solution rather than the unique one.
    pub degenerate: bool,
}

/// No-intercept least squares of the focal asset's daily returns on the
/// pooled returns of every other asset. Requires a tall system
/// (`n_days > n_assets - 1`). Rank-deficient designs yield the minimum-norm
/// solution with `degenerate = true`.
pub fn oracle_replication(
    truth: &EconomyGroundTruth,
    asset: usize,
) -> Result<OracleReplication, SynthError> {
    let n_assets = truth.daily.n_assets();
    if asset >= n_assets {
        return Err(SynthError::BadConfig(format!(
            "asset index {asset} out of range for {n_assets} assets"
        )));
    }
    let t = truth.daily.n_dates();
    let n_peers = n_assets - 1;
    if t <= n_peers {
        return Err(SynthError::BadConfig(format!(
            "projection needs more days than peers: {t} days for {n_peers} peers"
        )));
    }
    let peer_indices: Vec<usize> = (0..n_assets).filter(|&i| i != asset).collect();
    let y_row = truth.daily.row(asset);
    if y_row.iter().any(|v| !v.is_finite()) {
        return Err(SynthError::Invalid("focal series has missing days".into()));
    }
    let y = DVector::from_column_slice(y_row);
    let x = DMatrix::from_fn(t, n_peers, |r, c| truth.daily.row(peer_indices[c])[r]);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SynthError::Invalid("a peer series has missing days".into()));
    }

    let svd = x.clone().svd(true, true);
    let s_max = svd.singular_values.iter().fold(0.0f64, |m, &v| m.max(v));
    let eps = s_max * f64::EPSILON * t.max(n_peers) as f64;
    let rank = svd.singular_values.iter().filter(|&&v| v > eps).count();
    let weights = svd
        .solve(&y, eps)
        .map_err(|e| SynthError::Invalid(format!("least-squares solve failed: {e}")))?;
    let residuals = &y - &x * &weights;
    Ok(OracleReplication { weights, residuals, peer_indices, degenerate: rank < n_peers })
}

/// Sample mean of the monthly hedged return `R_i - b' R_peers`, the direct
/// empirical estimate of the asset's unexplained premium under the weights
/// `b` (aligned with ascending peer indices, i.e. every asset except the
/// focal one).
pub fn empirical_sarp_oracle(
    truth: &EconomyGroundTruth,
    asset: usize,
    weights: &DVector<f64>,
) -> Result<f64, SynthError> {
    let n_assets = truth.monthly.assets().len();
    if asset >= n_assets {
        return Err(SynthError::BadConfig(format!(
            "asset index {asset} out of range for {n_assets} assets"
        )));
    }
    if weights.len() != n_assets - 1 {
        return Err(SynthError::BadConfig(format!(
            "{} weights for {} peers",
            weights.len(),
            n_assets - 1
        )));
    }
    let peer_indices: Vec<usize> = (0..n_assets).filter(|&i| i != asset).collect();
    let months = truth.monthly.months().to_vec();
    if months.is_empty() {
        return Err(SynthError::Invalid("empty monthly panel".into()));
    }
    let mut total = 0.0;
    for &m in &months {
        let focal = truth
            .monthly
            .value(asset, m)
            .ok_or_else(|| SynthError::Invalid(format!("missing monthly return at {m}")))?;
        let mut hedge = 0.0;
        for (j, &p) in peer_indices.iter().enumerate() {
            if weights[j] != 0.0 {
                let r = truth.monthly.value(p, m).ok_or_else(|| {
                    SynthError::Invalid(format!("missing monthly return at {m}"))
                })?;
                hedge += weights[j] * r;
            }
        }
        total += focal - hedge;
    }
    Ok(total / months.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dates::MonthKey;

    fn base_config() -> EconomyConfig {
        EconomyConfig {
            n_assets: 11,
            n_factors: 3,
            n_days: 60,
            n_months: 3,
            factor_mean: DVector::from_element(3, 4e-4),
            factor_cov: DMatrix::from_diagonal_element(3, 3, 1e-4),
            alpha_scale: 0.0,
            beta_scale: 1.0,
            idio_vol: 0.0,
            seed: 7,
        }
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for i in 0..a.len() {
            sab += (a[i] - ma) * (b[i] - mb);
            saa += (a[i] - ma) * (a[i] - ma);
            sbb += (b[i] - mb) * (b[i] - mb);
        }
        sab / (saa * sbb).sqrt()
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        let ranks = |v: &[f64]| -> Vec<f64> {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
            let mut r = vec![0.0; v.len()];
            for (rank, &i) in idx.iter().enumerate() {
                r[i] = rank as f64;
            }
            r
        };
        pearson(&ranks(a), &ranks(b))
    }

    #[test]
    fn config_invariants_are_enforced() {
        let mut c = base_config();
        c.n_factors = 0;
        assert!(matches!(generate(&c), Err(SynthError::BadConfig(_))));

        let mut c = base_config();
        c.n_assets = 4; // N = 3 is not > K = 3
        assert!(matches!(generate(&c), Err(SynthError::BadConfig(_))));

        let mut c = base_config();
        c.factor_cov = DMatrix::from_row_slice(3, 3, &[
            1e-4, 0.0, 0.0,
            1e-5, 1e-4, 0.0,
            0.0, 0.0, 1e-4,
        ]);
        assert!(matches!(generate(&c), Err(SynthError::BadConfig(msg)) if msg.contains("symmetric")));

        let mut c = base_config();
        // Symmetric but indefinite: off-diagonal dominates the diagonal.
        c.factor_cov = DMatrix::from_row_slice(3, 3, &[
            1e-4, 2e-4, 0.0,
            2e-4, 1e-4, 0.0,
            0.0, 0.0, 1e-4,
        ]);
        assert!(matches!(generate(&c), Err(SynthError::NotPositiveDefinite)));
    }

    #[test]
    fn noiseless_returns_lie_in_factor_span() {
        let truth = generate(&base_config()).unwrap();
        let t = truth.daily.n_dates();
        let m = DMatrix::from_fn(t, 11, |d, i| truth.daily.row(i)[d]);
        let svd = m.svd(false, false);
        let s = &svd.singular_values;
        assert!(s[2] > 1e-10 * s[0], "factor span should fill 3 directions");
        assert!(
            s[3] <= 1e-10 * s[0],
            "rank should be K = 3, got fourth singular value {} vs max {}",
            s[3],
            s[0]
        );
    }

    #[test]
    fn same_seed_reproduces_panels_bitwise() {
        let a = generate(&base_config()).unwrap();
        let b = generate(&base_config()).unwrap();
        let rows_a = a.daily.rows();
        let rows_b = b.daily.rows();
        assert_eq!(rows_a.len(), rows_b.len());
        for (ra, rb) in rows_a.iter().zip(&rows_b) {
            assert_eq!(ra.0, rb.0);
            assert_eq!(ra.1, rb.1);
            assert_eq!(ra.2.to_bits(), rb.2.to_bits());
        }
        for i in 0..11 {
            for &m in a.monthly.months() {
                assert_eq!(
                    a.monthly.value(i, m).unwrap().to_bits(),
                    b.monthly.value(i, m).unwrap().to_bits()
                );
            }
        }

        let mut other = base_config();
        other.seed = 8;
        let c = generate(&other).unwrap();
        assert!(c
            .daily
            .rows()
            .iter()
            .zip(&rows_a)
            .any(|(rc, ra)| rc.2.to_bits() != ra.2.to_bits()));
    }

    #[test]
    fn one_factor_equal_loadings_gives_perfect_correlation() {
        let config = EconomyConfig {
            n_assets: 6,
            n_factors: 1,
            n_days: 40,
            n_months: 1,
            factor_mean: DVector::from_element(1, 2e-4),
            factor_cov: DMatrix::from_element(1, 1, 1e-4),
            alpha_scale: 0.0,
            beta_scale: 0.0,
            idio_vol: 0.0,
            seed: 3,
        };
        let truth = generate(&config).unwrap();
        for i in 0..6 {
            for j in (i + 1)..6 {
                let c = pearson(truth.daily.row(i), truth.daily.row(j));
                assert!((c - 1.0).abs() <= 1e-12, "assets {i},{j} correlate at {c}");
            }
        }
    }

    #[test]
    fn panels_reproduce_the_factor_equation_bitwise() {
        let mut config = base_config();
        config.alpha_scale = 1e-4;
        config.idio_vol = 0.006;
        config.seed = 11;
        let truth = generate(&config).unwrap();
        // Same loop shape as the generator, so equality is exact.
        for i in 0..config.n_assets {
            let row = truth.daily.row(i);
            for (d, &got) in row.iter().enumerate() {
                let mut want = truth.alphas[i];
                for j in 0..config.n_factors {
                    want += truth.betas[(i, j)] * truth.factor_draws[(d, j)];
                }
                want += truth.idio_draws[(d, i)];
                assert_eq!(got.to_bits(), want.to_bits(), "asset {i} day {d}");
            }
        }
    }

    #[test]
    fn monthly_panel_compounds_daily_returns() {
        let mut config = base_config();
        config.idio_vol = 0.004;
        config.n_days = 70;
        config.n_months = 3;
        let truth = generate(&config).unwrap();
        assert_eq!(truth.monthly.months().len(), 3);
        for i in 0..config.n_assets {
            for &month in truth.monthly.months() {
                let mut growth = 1.0;
                for (d, &date) in truth.draw_dates.iter().enumerate() {
                    if MonthKey::from_date(date) == month {
                        let mut r = truth.alphas[i];
                        for j in 0..config.n_factors {
                            r += truth.betas[(i, j)] * truth.factor_draws[(d, j)];
                        }
                        r += truth.idio_draws[(d, i)];
                        growth *= 1.0 + r;
                    }
                }
                let got = truth.monthly.value(i, month).unwrap();
                assert_eq!(got.to_bits(), (growth - 1.0).to_bits(), "asset {i} month {month}");
            }
        }
        // Month stamps are the last trading day of each month.
        let stamp = truth.monthly.month_date(MonthKey::new(2001, 1)).unwrap();
        assert_eq!(stamp, NaiveDate::from_ymd_opt(2001, 1, 31).unwrap());
    }

    #[test]
    fn idiosyncratic_draws_are_centered_and_uncorrelated() {
        let config = EconomyConfig {
            n_assets: 6,
            n_factors: 2,
            n_days: 3000,
            n_months: 1,
            factor_mean: DVector::zeros(2),
            factor_cov: DMatrix::from_diagonal_element(2, 2, 1e-4),
            alpha_scale: 0.0,
            beta_scale: 1.0,
            idio_vol: 0.01,
            seed: 5,
        };
        let truth = generate(&config).unwrap();
        let d = truth.draw_dates.len();
        let bound = 5.0 / (d as f64).sqrt();
        let col = |i: usize| -> Vec<f64> { (0..d).map(|r| truth.idio_draws[(r, i)]).collect() };
        for i in 0..6 {
            let e = col(i);
            let mean = e.iter().sum::<f64>() / d as f64;
            assert!(mean.abs() <= 5.0 * config.idio_vol / (d as f64).sqrt(), "mean {mean}");
            for j in (i + 1)..6 {
                let c = pearson(&e, &col(j));
                assert!(c.abs() <= bound, "eps {i},{j} correlate at {c}");
            }
            for k in 0..2 {
                let f: Vec<f64> = (0..d).map(|r| truth.factor_draws[(r, k)]).collect();
                let c = pearson(&e, &f);
                assert!(c.abs() <= bound, "eps {i} and factor {k} correlate at {c}");
            }
        }
    }

    #[test]
    fn oracle_spans_noiseless_economy() {
        let mut config = base_config();
        config.n_assets = 11;
        config.n_days = 500;
        config.seed = 21;
        let truth = generate(&config).unwrap();
        for asset in [0usize, 5, 10] {
            let rep = oracle_replication(&truth, asset).unwrap();
            let sup = rep.residuals.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            assert!(sup <= 1e-8, "asset {asset} residual sup-norm {sup}");
            assert!(rep.degenerate, "noiseless peer matrix has rank K < N");
        }
    }

    #[test]
    fn oracle_puts_unit_weight_on_a_duplicated_asset() {
        let mut config = base_config();
        config.idio_vol = 0.005;
        config.n_days = 120;
        config.seed = 31;
        let truth = generate(&config).unwrap();
        // Rebuild the daily panel with asset 4 an exact copy of asset 2.
        let dates = truth.daily.dates().to_vec();
        let mut rows = Vec::new();
        for i in 0..config.n_assets {
            let src = if i == 4 { 2 } else { i };
            let data = truth.daily.row(src).to_vec();
            for (d, &date) in dates.iter().enumerate() {
                rows.push((date, asset_name(i), data[d]));
            }
        }
        let mut truth = truth;
        truth.daily = DailyReturnPanel::from_rows(rows).unwrap();

        let rep = oracle_replication(&truth, 2).unwrap();
        assert!(!rep.degenerate);
        let dup_pos = rep.peer_indices.iter().position(|&p| p == 4).unwrap();
        for (j, &w) in rep.weights.iter().enumerate() {
            let want = if j == dup_pos { 1.0 } else { 0.0 };
            assert!((w - want).abs() <= 1e-8, "peer {j} weight {w}, want {want}");
        }
        let sup = rep.residuals.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(sup <= 1e-10, "duplicate fit should be exact, sup {sup}");
    }

    #[test]
    fn oracle_residual_variance_retains_idiosyncratic_risk() {
        let config = EconomyConfig {
            n_assets: 11,
            n_factors: 2,
            n_days: 5000,
            n_months: 1,
            factor_mean: DVector::from_element(2, 3e-4),
            factor_cov: DMatrix::from_diagonal_element(2, 2, 1e-4),
            alpha_scale: 0.0,
            beta_scale: 1.0,
            idio_vol: 0.01,
            seed: 41,
        };
        let truth = generate(&config).unwrap();
        let rep = oracle_replication(&truth, 0).unwrap();
        let t = rep.residuals.len();
        let mean = rep.residuals.iter().sum::<f64>() / t as f64;
        let var = rep.residuals.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
            / (t as f64 - 1.0);
        let floor = config.idio_vol * config.idio_vol * (1.0 - 1e-2);
        assert!(var >= floor, "residual variance {var} below floor {floor}");
    }

    #[test]
    fn oracle_requires_tall_system() {
        let mut config = base_config();
        config.n_days = 10;
        let truth = generate(&config).unwrap();
        assert!(matches!(oracle_replication(&truth, 0), Err(SynthError::BadConfig(_))));
    }

    #[test]
    fn sarp_oracle_with_zero_weights_is_the_mean_return() {
        let mut config = base_config();
        config.idio_vol = 0.004;
        config.n_months = 6;
        config.n_days = 140;
        let truth = generate(&config).unwrap();
        let est = empirical_sarp_oracle(&truth, 3, &DVector::zeros(10)).unwrap();
        let months = truth.monthly.months().to_vec();
        let mean = months.iter().map(|&m| truth.monthly.value(3, m).unwrap()).sum::<f64>()
            / months.len() as f64;
        assert_eq!(est.to_bits(), mean.to_bits());
    }

    #[test]
    fn sarp_oracle_vanishes_in_a_zero_premium_economy() {
        let config = EconomyConfig {
            n_assets: 9,
            n_factors: 2,
            n_days: 100,
            n_months: 120,
            factor_mean: DVector::zeros(2),
            factor_cov: DMatrix::from_diagonal_element(2, 2, 1e-4),
            alpha_scale: 0.0,
            beta_scale: 1.0,
            idio_vol: 0.006,
            seed: 51,
        };
        let truth = generate(&config).unwrap();
        let rep = oracle_replication(&truth, 2).unwrap();
        let est = empirical_sarp_oracle(&truth, 2, &rep.weights).unwrap();
        let months = truth.monthly.months().to_vec();
        let peer_indices = rep.peer_indices.clone();
        let series: Vec<f64> = months
            .iter()
            .map(|&m| {
                let focal = truth.monthly.value(2, m).unwrap();
                let hedge: f64 = peer_indices
                    .iter()
                    .enumerate()
                    .map(|(j, &p)| rep.weights[j] * truth.monthly.value(p, m).unwrap())
                    .sum();
                focal - hedge
            })
            .collect();
        let sd = {
            let n = series.len() as f64;
            let mean = series.iter().sum::<f64>() / n;
            (series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        let se = sd / (series.len() as f64).sqrt();
        assert!(est.abs() <= 3.0 * se, "estimate {est} exceeds 3 x SE {se}");
    }

    #[test]
    fn sarp_oracle_recovers_alpha_when_hedged_exactly() {
        // Scales small enough that compounding is linear to high accuracy.
        let config = EconomyConfig {
            n_assets: 8,
            n_factors: 1,
            n_days: 100,
            n_months: 180,
            factor_mean: DVector::from_element(1, 3e-5),
            factor_cov: DMatrix::from_element(1, 1, 1e-6),
            alpha_scale: 2e-5,
            beta_scale: 0.2,
            idio_vol: 5e-4,
            seed: 61,
        };
        let truth = generate(&config).unwrap();
        let asset = 1usize;
        let rep = oracle_replication(&truth, asset).unwrap();
        let est = empirical_sarp_oracle(&truth, asset, &rep.weights).unwrap();

        let months = truth.monthly.months().to_vec();
        // Hedging removes the factor leg and the peers' alphas enter with the
        // fitted weights, so the expected monthly value is days-in-month times
        // the net alpha of the hedged position.
        let net_alpha_daily: f64 = truth.alphas[asset]
            - rep
                .peer_indices
                .iter()
                .enumerate()
                .map(|(j, &p)| rep.weights[j] * truth.alphas[p])
                .sum::<f64>();
        let days_per_month: f64 = truth
            .draw_dates
            .iter()
            .filter(|d| MonthKey::from_date(**d) <= *months.last().unwrap())
            .count() as f64
            / months.len() as f64;
        let expected = net_alpha_daily * days_per_month;

        let series: Vec<f64> = months
            .iter()
            .map(|&m| {
                let focal = truth.monthly.value(asset, m).unwrap();
                let hedge: f64 = rep
                    .peer_indices
                    .iter()
                    .enumerate()
                    .map(|(j, &p)| rep.weights[j] * truth.monthly.value(p, m).unwrap())
                    .sum();
                focal - hedge
            })
            .collect();
        let n = series.len() as f64;
        let mean = series.iter().sum::<f64>() / n;
        let sd = (series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        let se = sd / n.sqrt();
        assert!(
            (est - expected).abs() <= 3.0 * se,
            "estimate {est} vs expected {expected} (3 x SE = {})",
            3.0 * se
        );
    }

    #[test]
    fn low_projection_fit_pairs_with_high_hedged_premium() {
        // Heterogeneous hedgeability by construction: dense-cluster assets are
        // nearly replicable; isolated assets point in near-orthogonal
        // directions of a high-dimensional factor space, so most of their
        // exposure cannot be projected onto peers at any weight. The premium
        // vector alternates sign, leaving it orthogonal to the dense cluster's
        // common direction; the unhedgeable part of each isolated asset is
        // reflected to earn it positively. Projection fit and hedged mean
        // return must then rank-correlate negatively.
        let k = 18;
        let mut negatives = 0;
        let n_seeds = 10;
        for seed in 0..n_seeds {
            let config = EconomyConfig {
                n_assets: 30,
                n_factors: k,
                n_days: 1500,
                n_months: 120,
                factor_mean: DVector::from_fn(k, |j, _| {
                    if j % 2 == 0 {
                        8e-4
                    } else {
                        -8e-4
                    }
                }),
                factor_cov: DMatrix::from_diagonal_element(k, k, 1e-4),
                alpha_scale: 0.0,
                beta_scale: 1.0,
                idio_vol: 0.008,
                seed: 900 + seed,
            };
            let truth = generate(&config).unwrap();
            let mut fits = Vec::new();
            let mut premia = Vec::new();
            for asset in 0..config.n_assets {
                let rep = oracle_replication(&truth, asset).unwrap();
                let y = truth.daily.row(asset);
                let t = y.len() as f64;
                let mean = y.iter().sum::<f64>() / t;
                let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
                let sse: f64 = rep.residuals.iter().map(|e| e * e).sum();
                fits.push(1.0 - sse / sst);
                premia.push(empirical_sarp_oracle(&truth, asset, &rep.weights).unwrap());
            }
            if spearman(&fits, &premia) < 0.0 {
                negatives += 1;
            }
        }
        assert!(
            negatives >= 9,
            "fit-premium rank correlation negative in only {negatives}/{n_seeds} economies"
        );
    }
}
