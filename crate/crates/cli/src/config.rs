//! Run configuration: defaults, flat config-file parsing, CLI flag
//! overrides, and the resolved key set every command echoes into the run
//! manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use sarp_core::dates::MonthKey;
use sarp_core::enet::CvConfig;
use sarp_core::replicate::MissingPolicy;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("data: {0}")]
    Data(String),
    #[error("run: {0}")]
    Run(String),
}

/// Which projection month-ends a run covers. Eligibility itself (a full
/// trailing-year window inside the daily panel) is decided by the command;
/// the selection narrows the eligible list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MonthSelection {
    All,
    /// The first `n` eligible month-ends.
    Count(usize),
    /// Eligible month-ends whose calendar month falls in the inclusive range.
    Range(MonthKey, MonthKey),
}

impl MonthSelection {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let text = text.trim();
        if text.eq_ignore_ascii_case("all") {
            return Ok(MonthSelection::All);
        }
        if let Ok(n) = text.parse::<usize>() {
            if n == 0 {
                return Err(CliError::Config("month range must be nonempty".into()));
            }
            return Ok(MonthSelection::Count(n));
        }
        if let Some((lo, hi)) = text.split_once("..") {
            let lo = parse_month(lo)?;
            let hi = parse_month(hi)?;
            if hi < lo {
                return Err(CliError::Config(format!(
                    "month range must be nonempty, got {lo}..{hi}"
                )));
            }
            return Ok(MonthSelection::Range(lo, hi));
        }
        Err(CliError::Config(format!(
            "months must be 'all', a count, or YYYY-MM..YYYY-MM, got '{text}'"
        )))
    }

    /// Canonical text form; parses back to the same selection.
    pub fn canonical(&self) -> String {
        match self {
            MonthSelection::All => "all".into(),
            MonthSelection::Count(n) => n.to_string(),
            MonthSelection::Range(lo, hi) => format!("{lo}..{hi}"),
        }
    }

    /// Narrows the eligible month-ends; errors when nothing is left.
    pub fn select(&self, eligible: &[NaiveDate]) -> Result<Vec<NaiveDate>, CliError> {
        let picked: Vec<NaiveDate> = match self {
            MonthSelection::All => eligible.to_vec(),
            MonthSelection::Count(n) => {
                if eligible.len() < *n {
                    return Err(CliError::Run(format!(
                        "requested {n} projection months but only {} are eligible",
                        eligible.len()
                    )));
                }
                eligible[..*n].to_vec()
            }
            MonthSelection::Range(lo, hi) => eligible
                .iter()
                .copied()
                .filter(|d| {
                    let m = MonthKey::from_date(*d);
                    *lo <= m && m <= *hi
                })
                .collect(),
        };
        if picked.is_empty() {
            return Err(CliError::Run(
                "no eligible projection months in the selected range".into(),
            ));
        }
        Ok(picked)
    }
}

pub fn parse_month(text: &str) -> Result<MonthKey, CliError> {
    let text = text.trim();
    let (y, m) = text
        .split_once('-')
        .ok_or_else(|| CliError::Config(format!("month must be YYYY-MM, got '{text}'")))?;
    let year: i32 = y
        .parse()
        .map_err(|_| CliError::Config(format!("bad year in month '{text}'")))?;
    let month: u32 = m
        .parse()
        .map_err(|_| CliError::Config(format!("bad month in '{text}'")))?;
    if !(1..=12).contains(&month) {
        return Err(CliError::Config(format!("month out of range in '{text}'")));
    }
    Ok(MonthKey::new(year, month))
}

/// Synthetic-economy shape for `gen`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    pub n_assets: usize,
    pub n_factors: usize,
    pub n_months: usize,
    /// 0 means cover exactly the complete months of the monthly panel.
    pub n_days: usize,
    pub alpha_scale: f64,
    pub beta_scale: f64,
    pub idio_vol: f64,
    /// Daily factor volatility (per factor).
    pub factor_vol: f64,
    /// Pairwise factor correlation in [0, 1).
    pub factor_corr: f64,
    /// Daily factor mean (per factor).
    pub premium: f64,
}

/// Fully resolved run configuration: defaults, then config file, then CLI
/// flags, most specific wins.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub daily: PathBuf,
    pub monthly_returns: PathBuf,
    pub risk_free: PathBuf,
    pub factors_daily: PathBuf,
    pub factors_monthly: PathBuf,
    pub characteristics: PathBuf,
    pub macro_path: PathBuf,
    pub out: PathBuf,
    pub months: MonthSelection,
    pub min_days: usize,
    pub nw_lags: usize,
    pub seed: u64,
    pub workers: usize,
    pub missing_policy: MissingPolicy,
    pub min_risky: bool,
    pub cv: CvConfig,
    pub gen: GenParams,
}

/// CLI flag values layered on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub config: Option<PathBuf>,
    pub months: Option<String>,
    pub min_days: Option<usize>,
    pub nw_lags: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub missing_policy: Option<String>,
    pub min_risky: bool,
}

const KNOWN_KEYS: &[&str] = &[
    "daily",
    "monthly_returns",
    "risk_free",
    "factors_daily",
    "factors_monthly",
    "characteristics",
    "macro",
    "out",
    "months",
    "min_days",
    "nw_lags",
    "seed",
    "workers",
    "missing_policy",
    "min_risky",
    "cv_folds",
    "cv_ell",
    "cv_grid",
    "cv_decay",
    "cv_tolerance",
    "cv_max_iterations",
    "gen_assets",
    "gen_factors",
    "gen_months",
    "gen_days",
    "gen_alpha_scale",
    "gen_beta_scale",
    "gen_idio_vol",
    "gen_factor_vol",
    "gen_factor_corr",
    "gen_premium",
];

/// Parses a flat `key = value` file: one pair per line, `#` lines are
/// comments, unknown keys are errors.
pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (number, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!(
                "line {} of {} is not 'key = value': '{line}'",
                number + 1,
                path.display()
            ))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(CliError::Config(format!(
                "unknown config key '{key}' on line {} of {}",
                number + 1,
                path.display()
            )));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(CliError::Config(format!("config key '{key}' given twice")));
        }
    }
    Ok(map)
}

/// Builds the resolved configuration from the optional file plus flags.
pub fn resolve(flags: &FlagOverrides) -> Result<RunConfig, CliError> {
    let mut map = match &flags.config {
        Some(path) => parse_config_file(path)?,
        None => BTreeMap::new(),
    };
    if let Some(v) = &flags.months {
        map.insert("months".into(), v.clone());
    }
    if let Some(v) = flags.min_days {
        map.insert("min_days".into(), v.to_string());
    }
    if let Some(v) = flags.nw_lags {
        map.insert("nw_lags".into(), v.to_string());
    }
    if let Some(v) = flags.seed {
        map.insert("seed".into(), v.to_string());
    }
    if let Some(v) = flags.workers {
        map.insert("workers".into(), v.to_string());
    }
    if let Some(v) = &flags.out {
        map.insert("out".into(), v.display().to_string());
    }
    if let Some(v) = &flags.missing_policy {
        map.insert("missing_policy".into(), v.clone());
    }
    if flags.min_risky {
        map.insert("min_risky".into(), "true".into());
    }
    build(map)
}

fn take_parse<T: std::str::FromStr>(
    map: &mut BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T, CliError> {
    match map.remove(key) {
        None => Ok(default),
        Some(text) => text
            .parse()
            .map_err(|_| CliError::Config(format!("cannot parse {key} = '{text}'"))),
    }
}

fn build(mut map: BTreeMap<String, String>) -> Result<RunConfig, CliError> {
    let out = PathBuf::from(map.remove("out").unwrap_or_else(|| "out".into()));
    let path_or = |map: &mut BTreeMap<String, String>, key: &str, name: &str| -> PathBuf {
        map.remove(key).map(PathBuf::from).unwrap_or_else(|| out.join(name))
    };
    let daily = path_or(&mut map, "daily", "daily.csv");
    let monthly_returns = path_or(&mut map, "monthly_returns", "monthly.csv");
    let risk_free = path_or(&mut map, "risk_free", "rf.csv");
    let factors_daily = path_or(&mut map, "factors_daily", "factors_daily.csv");
    let factors_monthly = path_or(&mut map, "factors_monthly", "factors_monthly.csv");
    let characteristics = path_or(&mut map, "characteristics", "characteristics.csv");
    let macro_path = path_or(&mut map, "macro", "macro.csv");

    let months = match map.remove("months") {
        None => MonthSelection::All,
        Some(text) => MonthSelection::parse(&text)?,
    };
    let min_days = take_parse(&mut map, "min_days", 60usize)?;
    let nw_lags = take_parse(&mut map, "nw_lags", 6usize)?;
    let seed = take_parse(&mut map, "seed", 42u64)?;
    let workers = take_parse(&mut map, "workers", 1usize)?;
    if workers == 0 {
        return Err(CliError::Config("workers must be at least 1".into()));
    }
    if min_days == 0 {
        return Err(CliError::Config("min_days must be at least 1".into()));
    }
    let missing_policy = match map.remove("missing_policy").as_deref() {
        None => MissingPolicy::Riskfree,
        Some("riskfree") => MissingPolicy::Riskfree,
        Some("drop") => MissingPolicy::Drop,
        Some(other) => {
            return Err(CliError::Config(format!(
                "missing_policy must be riskfree or drop, got '{other}'"
            )))
        }
    };
    let min_risky = match map.remove("min_risky").as_deref() {
        None => false,
        Some("true") => true,
        Some("false") => false,
        Some(other) => {
            return Err(CliError::Config(format!(
                "min_risky must be true or false, got '{other}'"
            )))
        }
    };

    let defaults = CvConfig::default();
    let cv = CvConfig {
        n_folds: take_parse(&mut map, "cv_folds", defaults.n_folds)?,
        ell: take_parse(&mut map, "cv_ell", defaults.ell)?,
        grid_size: take_parse(&mut map, "cv_grid", defaults.grid_size)?,
        grid_decay: take_parse(&mut map, "cv_decay", defaults.grid_decay)?,
        tolerance: take_parse(&mut map, "cv_tolerance", defaults.tolerance)?,
        max_iterations: take_parse(&mut map, "cv_max_iterations", defaults.max_iterations)?,
    };

    let gen = GenParams {
        n_assets: take_parse(&mut map, "gen_assets", 50usize)?,
        n_factors: take_parse(&mut map, "gen_factors", 3usize)?,
        n_months: take_parse(&mut map, "gen_months", 30usize)?,
        n_days: take_parse(&mut map, "gen_days", 0usize)?,
        alpha_scale: take_parse(&mut map, "gen_alpha_scale", 0.0f64)?,
        beta_scale: take_parse(&mut map, "gen_beta_scale", 1.0f64)?,
        idio_vol: take_parse(&mut map, "gen_idio_vol", 0.01f64)?,
        factor_vol: take_parse(&mut map, "gen_factor_vol", 0.004f64)?,
        factor_corr: take_parse(&mut map, "gen_factor_corr", 0.0f64)?,
        premium: take_parse(&mut map, "gen_premium", 0.0002f64)?,
    };
    if !(0.0..1.0).contains(&gen.factor_corr) {
        return Err(CliError::Config(format!(
            "gen_factor_corr must be in [0, 1), got {}",
            gen.factor_corr
        )));
    }

    if let Some(key) = map.keys().next() {
        return Err(CliError::Config(format!("unhandled config key '{key}'")));
    }

    Ok(RunConfig {
        daily,
        monthly_returns,
        risk_free,
        factors_daily,
        factors_monthly,
        characteristics,
        macro_path,
        out,
        months,
        min_days,
        nw_lags,
        seed,
        workers,
        missing_policy,
        min_risky,
        cv,
        gen,
    })
}

impl RunConfig {
    fn policy_text(&self) -> &'static str {
        match self.missing_policy {
            MissingPolicy::Riskfree => "riskfree",
            MissingPolicy::Drop => "drop",
        }
    }

    /// Resolved configuration as manifest rows: the command first, then every
    /// key in alphabetical order. Values parse back to the same run.
    pub fn manifest_rows(&self, command: &str) -> Vec<(String, String)> {
        let mut rows: Vec<(String, String)> = vec![
            ("characteristics".into(), self.characteristics.display().to_string()),
            ("cv_decay".into(), self.cv.grid_decay.to_string()),
            ("cv_ell".into(), self.cv.ell.to_string()),
            ("cv_folds".into(), self.cv.n_folds.to_string()),
            ("cv_grid".into(), self.cv.grid_size.to_string()),
            ("cv_max_iterations".into(), self.cv.max_iterations.to_string()),
            ("cv_tolerance".into(), self.cv.tolerance.to_string()),
            ("daily".into(), self.daily.display().to_string()),
            ("factors_daily".into(), self.factors_daily.display().to_string()),
            ("factors_monthly".into(), self.factors_monthly.display().to_string()),
            ("gen_alpha_scale".into(), self.gen.alpha_scale.to_string()),
            ("gen_assets".into(), self.gen.n_assets.to_string()),
            ("gen_beta_scale".into(), self.gen.beta_scale.to_string()),
            ("gen_days".into(), self.gen.n_days.to_string()),
            ("gen_factor_corr".into(), self.gen.factor_corr.to_string()),
            ("gen_factor_vol".into(), self.gen.factor_vol.to_string()),
            ("gen_factors".into(), self.gen.n_factors.to_string()),
            ("gen_idio_vol".into(), self.gen.idio_vol.to_string()),
            ("gen_months".into(), self.gen.n_months.to_string()),
            ("gen_premium".into(), self.gen.premium.to_string()),
            ("macro".into(), self.macro_path.display().to_string()),
            ("min_days".into(), self.min_days.to_string()),
            ("min_risky".into(), self.min_risky.to_string()),
            ("missing_policy".into(), self.policy_text().into()),
            ("monthly_returns".into(), self.monthly_returns.display().to_string()),
            ("months".into(), self.months.canonical()),
            ("nw_lags".into(), self.nw_lags.to_string()),
            ("out".into(), self.out.display().to_string()),
            ("risk_free".into(), self.risk_free.display().to_string()),
            ("seed".into(), self.seed.to_string()),
            ("workers".into(), self.workers.to_string()),
        ];
        rows.insert(0, ("command".into(), command.into()));
        rows
    }
}
