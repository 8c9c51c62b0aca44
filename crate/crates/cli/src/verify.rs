//! `verify`: self-contained oracle and invariant checks on synthetic data,
//! seeded from the run configuration. Each check prints one PASS or FAIL
//! line and lands in `verification.csv`; any failure makes the command exit
//! nonzero.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sarp_core::dates::one_year_before;
use sarp_core::enet::{cross_validate, kkt_residual, solve, EnetProblem};
use sarp_core::inference::{newey_west, ols};
use sarp_core::market_data::{
    CharRow, CharacteristicsTable, DailyReturnPanel, FactorTable, MonthlyReturnPanel,
};
use sarp_core::replicate::{run_projection_cycle, CycleConfig, MissingPolicy};
use sarp_core::sort::{build_bin_series, compute_characteristics, Leg, N_BINS};
use sarp_core::synth::{generate, oracle_replication, EconomyConfig};

use crate::config::{CliError, RunConfig};
use crate::files;

type CheckResult = Result<String, String>;

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn normal_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Every converged cross-validated solution must carry a tight optimality
/// certificate at its selected penalties.
fn check_kkt(cfg: &RunConfig) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(101));
    let mut worst = 0.0f64;
    for i in 0..10 {
        let t = rng.random_range(30..=80);
        let n = rng.random_range(10..=60);
        let x = normal_matrix(&mut rng, t, n);
        let y = normal_vector(&mut rng, t);
        let cv = cross_validate(&x, &y, &cfg.cv).map_err(|e| format!("problem {i}: {e}"))?;
        if !cv.solution.converged {
            return Err(format!("problem {i} did not converge"));
        }
        let lambda1 = cv.lambda * cfg.cv.ell;
        let lambda2 = cv.lambda * (1.0 - cfg.cv.ell) / 2.0;
        let residual = kkt_residual(&x, &y, &cv.solution.beta, lambda1, lambda2);
        worst = worst.max(residual);
    }
    if worst <= 1e-6 {
        Ok(format!("10 problems, max KKT residual {worst:.3e}"))
    } else {
        Err(format!("max KKT residual {worst:.3e} exceeds 1e-6"))
    }
}

/// With the L1 penalty off, coordinate descent must land on the ridge
/// closed form.
fn check_ridge(cfg: &RunConfig) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(211));
    let mut worst = 0.0f64;
    for i in 0..3 {
        let (t, n) = (60, 8);
        let x = normal_matrix(&mut rng, t, n);
        let y = normal_vector(&mut rng, t);
        let lambda2 = 0.25 * (i + 1) as f64;
        let problem = EnetProblem::new(x.clone(), y.clone(), 0.0, lambda2)
            .map_err(|e| e.to_string())?;
        let solution = solve(&problem, 1e-12, 200_000).map_err(|e| e.to_string())?;
        let lhs = &x.transpose() * &x / t as f64
            + DMatrix::identity(n, n) * (2.0 * lambda2);
        let rhs = &x.transpose() * &y / t as f64;
        let oracle = lhs
            .cholesky()
            .ok_or("ridge normal equations are not positive definite")?
            .solve(&rhs);
        let diff = (solution.dense(n) - oracle).amax();
        worst = worst.max(diff);
    }
    if worst <= 1e-8 {
        Ok(format!("3 penalty levels, max coefficient gap {worst:.3e}"))
    } else {
        Err(format!("coefficient gap {worst:.3e} exceeds 1e-8"))
    }
}

/// In a noiseless spanning economy every asset is an exact combination of
/// its peers, so the unpenalized replication residual must vanish.
fn check_noiseless_span(cfg: &RunConfig) -> CheckResult {
    let config = EconomyConfig {
        n_assets: 10,
        n_factors: 3,
        n_days: 500,
        n_months: 18,
        factor_mean: DVector::from_element(3, 0.0003),
        factor_cov: DMatrix::identity(3, 3) * 1.6e-5,
        alpha_scale: 0.0,
        beta_scale: 0.8,
        idio_vol: 0.0,
        seed: cfg.seed.wrapping_add(307),
    };
    let truth = generate(&config).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for asset in 0..10 {
        let oracle = oracle_replication(&truth, asset).map_err(|e| e.to_string())?;
        worst = worst.max(oracle.residuals.amax());
    }
    if worst <= 1e-8 {
        Ok(format!("10 assets, max replication residual {worst:.3e}"))
    } else {
        Err(format!("replication residual {worst:.3e} exceeds 1e-8"))
    }
}

/// Exact bookkeeping identities of the projection cycle and the sort:
/// normalized weights sum to one in absolute value, the long-short leg is
/// focal minus replicate, and the average bin is the mean of the ten bins.
fn check_identities(cfg: &RunConfig) -> CheckResult {
    let economy = |n_days: usize| EconomyConfig {
        n_assets: 24,
        n_factors: 3,
        n_days,
        n_months: 16,
        factor_mean: DVector::from_element(3, 0.0003),
        factor_cov: DMatrix::identity(3, 3) * 1.6e-5,
        alpha_scale: 0.0,
        beta_scale: 1.0,
        idio_vol: 0.004,
        seed: cfg.seed.wrapping_add(401),
    };
    let probe = generate(&economy(1)).map_err(|e| e.to_string())?;
    let truth = generate(&economy(probe.draw_dates.len())).map_err(|e| e.to_string())?;

    let first = truth.daily.dates()[0];
    let month_ends: Vec<NaiveDate> = truth
        .daily
        .month_ends()
        .iter()
        .copied()
        .filter(|&me| {
            one_year_before(me) >= first
                && truth
                    .monthly
                    .rf(sarp_core::dates::MonthKey::from_date(me).next())
                    .is_some()
        })
        .take(2)
        .collect();
    if month_ends.is_empty() {
        return Err("no eligible month-ends in the identity economy".into());
    }
    let cycle = CycleConfig { min_days: 40, policy: MissingPolicy::Riskfree, ..Default::default() };
    let output = run_projection_cycle(&truth.daily, &truth.monthly, &month_ends, &cycle);
    if output.records.is_empty() {
        return Err("identity cycle produced no records".into());
    }

    let mut worst = 0.0f64;
    for record in &output.records {
        if record.n_nonzero > 0 {
            let norm: f64 = record.beta_tilde.iter().map(|(_, w)| w.abs()).sum();
            worst = worst.max((norm - 1.0).abs());
        }
        let equity: f64 = record.beta_tilde.iter().map(|(_, w)| w).sum();
        worst = worst.max((record.equity_proportion - equity).abs());
    }
    for real in &output.realizations {
        worst = worst.max(
            (real.long_short - (real.focal_return - real.replicate_return)).abs(),
        );
    }
    let (_, series) = build_bin_series(&output.records, &output.realizations, false)
        .map_err(|e| e.to_string())?;
    for row in &series.rows {
        for leg in [Leg::Focal, Leg::Replicate, Leg::LongShort] {
            let values = row.leg(leg);
            let mean = values.iter().sum::<f64>() / N_BINS as f64;
            worst = worst.max((row.avg(leg) - mean).abs());
        }
        for bin in 0..N_BINS {
            worst = worst.max((row.ls[bin] - (row.foc[bin] - row.rep[bin])).abs());
        }
    }
    if worst <= 1e-12 {
        Ok(format!(
            "{} records, {} sorted months, max identity gap {worst:.3e}",
            output.records.len(),
            series.rows.len()
        ))
    } else {
        Err(format!("identity gap {worst:.3e} exceeds 1e-12"))
    }
}

/// The HAC covariance must match a brute-force double sum over all weighted
/// residual cross-products, and at zero lags it must be the White estimator.
fn check_hac(cfg: &RunConfig) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(503));
    let mut worst = 0.0f64;
    for lags in 0..5usize {
        let t = 40;
        let x = normal_matrix(&mut rng, t, 2);
        let noise = normal_vector(&mut rng, t);
        let y: Vec<f64> = (0..t)
            .map(|r| 0.5 * x[(r, 0)] - 0.3 * x[(r, 1)] + (1.0 + x[(r, 0)].abs()) * 0.1 * noise[r])
            .collect();
        let fit = ols(&y, &x, true).map_err(|e| e.to_string())?;
        let hac = newey_west(&fit, lags).map_err(|e| e.to_string())?;

        let mut design = DMatrix::zeros(t, 3);
        for r in 0..t {
            design[(r, 0)] = 1.0;
            design[(r, 1)] = x[(r, 0)];
            design[(r, 2)] = x[(r, 1)];
        }
        let mut meat = DMatrix::zeros(3, 3);
        for a in 0..t {
            for b in 0..t {
                let gap = a.abs_diff(b);
                if gap > lags {
                    continue;
                }
                let weight = 1.0 - gap as f64 / (lags as f64 + 1.0);
                let xa = design.row(a).transpose();
                let xb = design.row(b);
                meat += xa * xb * (weight * fit.residuals[a] * fit.residuals[b]);
            }
        }
        let xtx_inv = (design.transpose() * &design)
            .try_inverse()
            .ok_or("singular design in HAC check")?;
        let brute = &xtx_inv * meat * &xtx_inv;
        let brute = (&brute + brute.transpose()) * 0.5;
        let scale = brute.amax().max(1.0);
        let diff = (&hac.covariance - &brute).amax() / scale;
        worst = worst.max(diff);
    }
    if worst <= 1e-12 {
        Ok(format!("lags 0..4, max relative covariance gap {worst:.3e}"))
    } else {
        Err(format!("covariance gap {worst:.3e} exceeds 1e-12"))
    }
}

/// Hand-checkable characteristic values on a five-day panel.
fn check_hand_characteristics(_cfg: &RunConfig) -> CheckResult {
    let date = |d: u32| NaiveDate::from_ymd_opt(2001, 1, d).unwrap();
    let days = [2u32, 3, 4, 5, 8];
    let returns = [0.01, -0.02, 0.015, 0.005, -0.01];
    let daily_rows: Vec<(NaiveDate, String, f64)> = days
        .iter()
        .zip(returns)
        .map(|(&d, r)| (date(d), "A00000".to_string(), r))
        .collect();
    let daily = DailyReturnPanel::from_rows(daily_rows).map_err(|e| e.to_string())?;
    let monthly = MonthlyReturnPanel::from_rows(
        vec![(date(31), "A00000".into(), 0.05)],
        vec![(date(31), 0.001)],
    )
    .map_err(|e| e.to_string())?;
    let chars = CharacteristicsTable::from_rows(vec![(
        date(31),
        "A00000".into(),
        CharRow {
            market_cap: Some(100.0),
            book_to_market: Some(0.5),
            volume: Some(2_000_000.0),
            close_price: Some(25.0),
            breakpoint_universe: true,
        },
    )])
    .map_err(|e| e.to_string())?;
    let factor_rows: Vec<(NaiveDate, [f64; 6])> = days
        .iter()
        .enumerate()
        .map(|(i, &d)| (date(d), std::array::from_fn(|j| 1e-4 * ((i + j) as f64 + 1.0))))
        .collect();
    let factors = FactorTable::from_rows(factor_rows).map_err(|e| e.to_string())?;

    let month_end = *daily.month_ends().last().unwrap();
    let vectors = compute_characteristics(&daily, &monthly, &chars, &factors, month_end)
        .map_err(|e| e.to_string())?;
    let v = &vectors[0];

    let mean = returns.iter().sum::<f64>() / 5.0;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / 4.0;
    let expected_vol = var.sqrt();
    let expected_vold = 2_000_000.0 * 25.0 / 1e6;
    let expected_amihud =
        returns.iter().map(|r| r.abs() / expected_vold).sum::<f64>() / 5.0;

    let mut worst = 0.0f64;
    let mut gap = |actual: Option<f64>, expected: f64| match actual {
        Some(a) => {
            worst = worst.max((a - expected).abs());
            Ok(())
        }
        None => Err("characteristic missing".to_string()),
    };
    gap(v.total_vol, expected_vol)?;
    gap(v.short_term_reversal, 5.0)?;
    gap(v.vold, expected_vold)?;
    gap(v.amihud_illiq, expected_amihud)?;
    if worst <= 1e-12 {
        Ok(format!("four characteristics, max gap {worst:.3e}"))
    } else {
        Err(format!("characteristic gap {worst:.3e} exceeds 1e-12"))
    }
}

pub fn run(cfg: &RunConfig) -> Result<String, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Run(format!("cannot build worker pool: {e}")))?;

    let checks: Vec<(&'static str, CheckResult)> = pool.install(|| {
        vec![
            ("enet_kkt_certificate", check_kkt(cfg)),
            ("ridge_closed_form", check_ridge(cfg)),
            ("noiseless_spanning", check_noiseless_span(cfg)),
            ("pipeline_identities", check_identities(cfg)),
            ("hac_double_sum", check_hac(cfg)),
            ("hand_characteristics", check_hand_characteristics(cfg)),
        ]
    });

    let path = cfg.out.join("verification.csv");
    let file = std::fs::File::create(&path).map_err(|e| {
        CliError::Io(format!("cannot create {}: {e}", path.display()))
    })?;
    let mut writer = csv::Writer::from_writer(file);
    writer
        .write_record(["check", "status", "detail"])
        .map_err(|e| CliError::Io(e.to_string()))?;
    let mut failures = 0usize;
    for (name, result) in &checks {
        let (status, detail) = match result {
            Ok(detail) => ("PASS", detail.clone()),
            Err(detail) => {
                failures += 1;
                ("FAIL", detail.clone())
            }
        };
        println!("{status} {name}: {detail}");
        writer
            .write_record([*name, status, &detail])
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::Io(e.to_string()))?;
    files::write_manifest(&cfg.out, &cfg.manifest_rows("verify"))?;

    if failures == 0 {
        Ok(format!("verify: {} checks passed", checks.len()))
    } else {
        Err(CliError::Run(format!(
            "{failures} of {} verification checks failed",
            checks.len()
        )))
    }
}
