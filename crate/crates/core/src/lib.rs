//! Research engine for measuring statistical arbitrage risk.
//!
//! The pipeline takes a panel of daily stock returns, and for each stock and
//! month projects the stock's trailing-year daily returns onto all concurrently
//! traded peers with an elastic net. The projection R-squared measures how
//! hard the stock is to replicate (its statistical arbitrage risk, SAR); the
//! normalized coefficients define a tradable replicate portfolio whose
//! one-month-ahead return is compared with the stock's own. Decile sorts on
//! R-squared, long-short spreads, a SAR factor, and the associated inference
//! (Newey-West means, factor alphas, Fama-MacBeth pricing) are built on top.
//!
//! Modules:
//! - [`market_data`]: CSV panel ingestion, trading calendars, eligibility.
//! - [`enet`]: deterministic elastic-net coordinate descent with KKT
//!   certificates, lambda grids, and blocked cross-validation.
//! - [`synth`]: seeded synthetic factor economies with known ground truth,
//!   plus replication oracles used for verification.
//! - [`replicate`]: projection windows, replicate weights and returns, the
//!   monthly projection cycle, and OLS factor replicates.
//! - [`sort`]: decile sorts, bin return series, stock characteristics, and
//!   bivariate dependent sorts.
//! - [`inference`]: OLS with Newey-West covariance, Fama-MacBeth, the SAR
//!   factor, performance statistics, ARMA(1,1), and macro regressions.

#![deny(unsafe_code)]

pub mod dates;
pub mod enet;
pub mod inference;
pub mod market_data;
pub mod replicate;
pub mod sort;
pub mod synth;
