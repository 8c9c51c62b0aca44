//! Elastic-net estimation by cyclic coordinate descent, without intercept.
//!
//! The estimator minimizes
//!
//! ```text
//!   (1/2T) ||y - X b||_2^2 + lambda1 ||b||_1 + lambda2 ||b||_2^2
//! ```
//!
//! over b with no intercept and no column standardization: all regressors are
//! same-unit daily returns, and standardizing would change which peers are
//! selected. A returned solution with `converged = true` carries a KKT
//! certificate: for every coordinate j,
//!
//! ```text
//!   b_j != 0:  |(1/T) X_j' (y - X b) - lambda1 sign(b_j) - 2 lambda2 b_j| <= 10 tol
//!   b_j == 0:  |(1/T) X_j' (y - X b)| <= lambda1 + 10 tol
//! ```
//!
//! Hyperparameters are selected by blocked cross-validation over a single
//! penalty level `lambda` with the fixed coupling `lambda1 = lambda * ell`,
//! `lambda2 = lambda * (1 - ell) / 2` (`ell = 1/2` by default), so only one
//! dimension is searched.
//!
//! Everything here is deterministic: sweeps visit coordinates in index
//! order, working sets are kept sorted, and identical inputs produce
//! bitwise-identical solutions.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnetError {
    #[error("{0}")]
    BadInput(String),
    #[error("{0}")]
    Degenerate(String),
    #[error("{0}")]
    Numerical(String),
}

/// One elastic-net instance: T observations of a focal series `y` and N
/// candidate regressor columns `X`, with nonnegative penalty weights.
#[derive(Debug, Clone)]
pub struct EnetProblem {
    x: DMatrix<f64>,
    y: DVector<f64>,
    lambda1: f64,
    lambda2: f64,
}

impl EnetProblem {
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        lambda1: f64,
        lambda2: f64,
    ) -> Result<Self, EnetError> {
        validate_design(&x, &y)?;
        if !(lambda1.is_finite() && lambda1 >= 0.0 && lambda2.is_finite() && lambda2 >= 0.0) {
            return Err(EnetError::BadInput(format!(
                "penalties must be finite and nonnegative, got lambda1={lambda1}, lambda2={lambda2}"
            )));
        }
        Ok(EnetProblem { x, y, lambda1, lambda2 })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }
}

fn validate_design(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(), EnetError> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(EnetError::BadInput(format!(
            "design must be non-empty, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    if y.len() != x.nrows() {
        return Err(EnetError::BadInput(format!(
            "y has {} rows but X has {}",
            y.len(),
            x.nrows()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(EnetError::BadInput("non-finite entry in design".into()));
    }
    Ok(())
}

/// Solver output. `beta` stores only strictly nonzero coefficients, sorted by
/// column index.
#[derive(Debug, Clone, PartialEq)]
pub struct EnetSolution {
    pub beta: Vec<(usize, f64)>,
    pub objective_value: f64,
    /// Coordinate-descent sweeps performed (full and active-set).
    pub n_iterations: usize,
    /// True iff the KKT certificate held within 10x tolerance at return.
    pub converged: bool,
}

impl EnetSolution {
    pub fn n_nonzero(&self) -> usize {
        self.beta.len()
    }

    pub fn dense(&self, n: usize) -> DVector<f64> {
        let mut out = DVector::zeros(n);
        for &(j, v) in &self.beta {
            out[j] = v;
        }
        out
    }
}

/// Cross-validation and grid settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub n_folds: usize,
    /// Mixing weight in [0, 1]: lambda1 = lambda * ell, lambda2 = lambda * (1 - ell) / 2.
    pub ell: f64,
    pub grid_size: usize,
    /// Ratio of the smallest grid lambda to lambda_max, in (0, 1].
    pub grid_decay: f64,
    /// Convergence threshold on the max absolute coordinate change per sweep.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            n_folds: 3,
            ell: 0.5,
            grid_size: 100,
            grid_decay: 1e-3,
            tolerance: 1e-7,
            max_iterations: 10_000,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<(), EnetError> {
        if self.n_folds < 2 {
            return Err(EnetError::BadInput("n_folds must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.ell) || !self.ell.is_finite() {
            return Err(EnetError::BadInput(format!("ell must lie in [0, 1], got {}", self.ell)));
        }
        if self.grid_size == 0 {
            return Err(EnetError::BadInput("grid_size must be at least 1".into()));
        }
        if !(self.grid_decay > 0.0 && self.grid_decay <= 1.0) {
            return Err(EnetError::BadInput(format!(
                "grid_decay must lie in (0, 1], got {}",
                self.grid_decay
            )));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(EnetError::BadInput(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(EnetError::BadInput("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Cross-validation outcome: the selected penalty level and the full-data
/// solution at it, plus the (lambda, mean OOF squared error) path.
#[derive(Debug, Clone)]
pub struct CvResult {
    pub lambda: f64,
    pub solution: EnetSolution,
    pub mse_path: Vec<(f64, f64)>,
}

// ---------------------------------------------------------------------------
// Coordinate-descent engine
// ---------------------------------------------------------------------------

#[inline]
fn dot_scalar(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let quads = a.len() / 4 * 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < quads {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        i += 4;
    }
    let mut s = (s0 + s1) + (s2 + s3);
    while i < a.len() {
        s += a[i] * b[i];
        i += 1;
    }
    s
}

#[inline]
fn axpy_scalar(out: &mut [f64], x: &[f64], a: f64) {
    debug_assert_eq!(out.len(), x.len());
    for i in 0..out.len() {
        out[i] += a * x[i];
    }
}

/// AVX2+FMA kernels with one-time runtime detection. Each kernel executes a
/// fixed instruction sequence, so results are reproducible on a given
/// machine; machines without the features take the scalar path instead.
/// The only unsafe code in the crate lives here: unaligned vector loads and
/// stores over slice bounds that are checked by the debug assertions and the
/// loop structure.
#[cfg(target_arch = "x86_64")]
#[allow(unsafe_code)]
mod simd {
    use std::sync::OnceLock;

    pub fn enabled() -> bool {
        static ON: OnceLock<bool> = OnceLock::new();
        *ON.get_or_init(|| {
            std::arch::is_x86_feature_detected!("avx2")
                && std::arch::is_x86_feature_detected!("fma")
        })
    }

    /// # Safety
    /// Caller must have verified avx2 and fma support via `enabled`.
    #[target_feature(enable = "avx2", enable = "fma")]
    pub unsafe fn dot(a: &[f64], b: &[f64]) -> f64 {
        use std::arch::x86_64::*;
        debug_assert_eq!(a.len(), b.len());
        let len = a.len();
        let pa = a.as_ptr();
        let pb = b.as_ptr();
        let mut acc0 = _mm256_setzero_pd();
        let mut acc1 = _mm256_setzero_pd();
        let mut acc2 = _mm256_setzero_pd();
        let mut acc3 = _mm256_setzero_pd();
        let mut i = 0usize;
        while i + 16 <= len {
            acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(pa.add(i)), _mm256_loadu_pd(pb.add(i)), acc0);
            acc1 = _mm256_fmadd_pd(
                _mm256_loadu_pd(pa.add(i + 4)),
                _mm256_loadu_pd(pb.add(i + 4)),
                acc1,
            );
            acc2 = _mm256_fmadd_pd(
                _mm256_loadu_pd(pa.add(i + 8)),
                _mm256_loadu_pd(pb.add(i + 8)),
                acc2,
            );
            acc3 = _mm256_fmadd_pd(
                _mm256_loadu_pd(pa.add(i + 12)),
                _mm256_loadu_pd(pb.add(i + 12)),
                acc3,
            );
            i += 16;
        }
        while i + 4 <= len {
            acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(pa.add(i)), _mm256_loadu_pd(pb.add(i)), acc0);
            i += 4;
        }
        let acc = _mm256_add_pd(_mm256_add_pd(acc0, acc1), _mm256_add_pd(acc2, acc3));
        let mut lanes = [0.0f64; 4];
        _mm256_storeu_pd(lanes.as_mut_ptr(), acc);
        let mut s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
        while i < len {
            s += *pa.add(i) * *pb.add(i);
            i += 1;
        }
        s
    }

    /// # Safety
    /// Caller must have verified avx2 and fma support via `enabled`.
    #[target_feature(enable = "avx2", enable = "fma")]
    pub unsafe fn axpy(out: &mut [f64], x: &[f64], a: f64) {
        use std::arch::x86_64::*;
        debug_assert_eq!(out.len(), x.len());
        let len = out.len();
        let po = out.as_mut_ptr();
        let px = x.as_ptr();
        let va = _mm256_set1_pd(a);
        let mut i = 0usize;
        while i + 8 <= len {
            let o0 =
                _mm256_fmadd_pd(va, _mm256_loadu_pd(px.add(i)), _mm256_loadu_pd(po.add(i)));
            let o1 = _mm256_fmadd_pd(
                va,
                _mm256_loadu_pd(px.add(i + 4)),
                _mm256_loadu_pd(po.add(i + 4)),
            );
            _mm256_storeu_pd(po.add(i), o0);
            _mm256_storeu_pd(po.add(i + 4), o1);
            i += 8;
        }
        while i + 4 <= len {
            _mm256_storeu_pd(
                po.add(i),
                _mm256_fmadd_pd(va, _mm256_loadu_pd(px.add(i)), _mm256_loadu_pd(po.add(i))),
            );
            i += 4;
        }
        while i < len {
            *po.add(i) = a.mul_add(*px.add(i), *po.add(i));
            i += 1;
        }
    }
}

#[inline]
#[allow(unsafe_code)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    #[cfg(target_arch = "x86_64")]
    if simd::enabled() {
        // Safety: enabled() confirmed avx2+fma on this machine.
        return unsafe { simd::dot(a, b) };
    }
    dot_scalar(a, b)
}

#[inline]
#[allow(unsafe_code)]
fn axpy(out: &mut [f64], x: &[f64], a: f64) {
    #[cfg(target_arch = "x86_64")]
    if simd::enabled() {
        // Safety: enabled() confirmed avx2+fma on this machine.
        return unsafe { simd::axpy(out, x, a) };
    }
    axpy_scalar(out, x, a)
}

#[inline]
fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Column-major view of the design plus the per-column quantities the sweeps
/// need. Borrowed for the lifetime of one solve or path.
struct Engine<'a> {
    xs: &'a [f64],
    t: usize,
    n: usize,
    inv_t: f64,
    /// ||X_j||^2 / T per column.
    col_norm: Vec<f64>,
}

impl<'a> Engine<'a> {
    fn new(xs: &'a [f64], t: usize, n: usize) -> Self {
        let inv_t = 1.0 / t as f64;
        let col_norm = (0..n).map(|j| dot(&xs[j * t..(j + 1) * t], &xs[j * t..(j + 1) * t]) * inv_t).collect();
        Engine { xs, t, n, inv_t, col_norm }
    }

    #[inline]
    fn col(&self, j: usize) -> &[f64] {
        &self.xs[j * self.t..(j + 1) * self.t]
    }

    /// One pass over `which` in order; returns the max absolute coordinate change.
    fn sweep(
        &self,
        which: &[usize],
        beta: &mut [f64],
        resid: &mut [f64],
        lambda1: f64,
        lambda2: f64,
    ) -> f64 {
        let mut max_delta = 0.0f64;
        for &j in which {
            let cj = self.col_norm[j];
            let denom = cj + 2.0 * lambda2;
            let old = beta[j];
            let mut rho = dot(self.col(j), resid) * self.inv_t;
            if old != 0.0 {
                rho += cj * old;
            }
            let new = if denom > 0.0 { soft_threshold(rho, lambda1) / denom } else { 0.0 };
            let delta = new - old;
            if delta != 0.0 {
                axpy(resid, self.col(j), -delta);
                beta[j] = new;
            }
            max_delta = max_delta.max(delta.abs());
        }
        max_delta
    }

    /// resid := y - X beta computed from scratch; removes incremental drift
    /// before certification.
    fn refresh_residual(&self, y: &[f64], beta: &[f64], resid: &mut [f64]) {
        resid.copy_from_slice(y);
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                axpy(resid, self.col(j), -b);
            }
        }
    }

    /// g_j = (1/T) X_j' resid for every column.
    fn gradient(&self, resid: &[f64], g: &mut [f64]) {
        for (j, slot) in g.iter_mut().enumerate() {
            *slot = dot(self.col(j), resid) * self.inv_t;
        }
    }

    fn kkt_from_gradient(&self, g: &[f64], beta: &[f64], lambda1: f64, lambda2: f64) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.n {
            let dev = if beta[j] != 0.0 {
                (g[j] - lambda1 * beta[j].signum() - 2.0 * lambda2 * beta[j]).abs()
            } else {
                (g[j].abs() - lambda1).max(0.0)
            };
            worst = worst.max(dev);
        }
        worst
    }

    fn objective(&self, resid: &[f64], beta: &[f64], lambda1: f64, lambda2: f64) -> f64 {
        let sse = dot(resid, resid);
        let l1: f64 = beta.iter().map(|b| b.abs()).sum();
        let l2: f64 = beta.iter().map(|b| b * b).sum();
        0.5 * self.inv_t * sse + lambda1 * l1 + lambda2 * l2
    }
}

fn sparse_from_dense(beta: &[f64]) -> Vec<(usize, f64)> {
    beta.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect()
}

/// Maximum KKT deviation of `beta` for the given problem data; zero at an
/// exact optimum. This is the certificate checked by `solve`.
pub fn kkt_residual(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &[(usize, f64)],
    lambda1: f64,
    lambda2: f64,
) -> f64 {
    let t = x.nrows();
    let n = x.ncols();
    let engine = Engine::new(x.as_slice(), t, n);
    let mut dense = vec![0.0; n];
    for &(j, v) in beta {
        dense[j] = v;
    }
    let mut resid = vec![0.0; t];
    engine.refresh_residual(y.as_slice(), &dense, &mut resid);
    let mut g = vec![0.0; n];
    engine.gradient(&resid, &mut g);
    engine.kkt_from_gradient(&g, &dense, lambda1, lambda2)
}

/// Cyclic coordinate descent with active-set refinement.
///
/// Convergence requires both a full sweep whose max coordinate change is at
/// most `tolerance` and the KKT certificate within `10 * tolerance`; the
/// residual is recomputed from scratch before certification so the
/// certificate is not polluted by incremental drift. On budget exhaustion the
/// current iterate is returned with `converged = false`.
pub fn solve(
    problem: &EnetProblem,
    tolerance: f64,
    max_iterations: usize,
) -> Result<EnetSolution, EnetError> {
    if !(tolerance > 0.0 && tolerance.is_finite()) {
        return Err(EnetError::BadInput(format!("tolerance must be positive, got {tolerance}")));
    }
    if max_iterations == 0 {
        return Err(EnetError::BadInput("max_iterations must be at least 1".into()));
    }
    solve_traced(problem, tolerance, max_iterations, None)
}

/// `solve` with an optional per-sweep objective trace (used by tests to
/// check monotone descent).
fn solve_traced(
    problem: &EnetProblem,
    tolerance: f64,
    max_iterations: usize,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<EnetSolution, EnetError> {
    let t = problem.x.nrows();
    let n = problem.x.ncols();
    let (l1, l2) = (problem.lambda1, problem.lambda2);
    let engine = Engine::new(problem.x.as_slice(), t, n);
    let y = problem.y.as_slice();

    let mut beta = vec![0.0; n];
    let mut resid = y.to_vec();
    let mut g = vec![0.0; n];
    let all: Vec<usize> = (0..n).collect();
    let mut active: Vec<usize> = Vec::new();
    let mut iterations = 0usize;
    let mut converged = false;

    if let Some(tr) = trace.as_deref_mut() {
        tr.push(engine.objective(&resid, &beta, l1, l2));
    }

    while iterations < max_iterations {
        let delta = engine.sweep(&all, &mut beta, &mut resid, l1, l2);
        iterations += 1;
        if !delta.is_finite() {
            return Err(EnetError::Numerical("coordinate update produced a non-finite value".into()));
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(engine.objective(&resid, &beta, l1, l2));
        }
        if delta <= tolerance {
            engine.refresh_residual(y, &beta, &mut resid);
            engine.gradient(&resid, &mut g);
            if engine.kkt_from_gradient(&g, &beta, l1, l2) <= 10.0 * tolerance {
                converged = true;
                break;
            }
            continue;
        }
        // Refine on the current support until stable, then re-verify with a
        // full sweep; preserves the KKT postcondition because convergence is
        // only declared after a full sweep plus certificate.
        active.clear();
        active.extend((0..n).filter(|&j| beta[j] != 0.0));
        while iterations < max_iterations {
            let d = engine.sweep(&active, &mut beta, &mut resid, l1, l2);
            iterations += 1;
            if !d.is_finite() {
                return Err(EnetError::Numerical(
                    "coordinate update produced a non-finite value".into(),
                ));
            }
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(engine.objective(&resid, &beta, l1, l2));
            }
            if d <= tolerance {
                break;
            }
        }
    }

    engine.refresh_residual(y, &beta, &mut resid);
    let objective_value = engine.objective(&resid, &beta, l1, l2);
    if !objective_value.is_finite() {
        return Err(EnetError::Numerical("objective is non-finite".into()));
    }
    Ok(EnetSolution { beta: sparse_from_dense(&beta), objective_value, n_iterations: iterations, converged })
}

// ---------------------------------------------------------------------------
// Lambda grid and cross-validation
// ---------------------------------------------------------------------------

fn max_abs_xty_over_t(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let t = x.nrows();
    let xs = x.as_slice();
    let ys = y.as_slice();
    let mut m = 0.0f64;
    for j in 0..x.ncols() {
        m = m.max((dot(&xs[j * t..(j + 1) * t], ys) / t as f64).abs());
    }
    m
}

/// Descending log-spaced grid from `lambda_max = max_j |X_j' y| / (T ell)`
/// down to `grid_decay * lambda_max`. Under the cross-validation coupling the
/// solution at the head of the grid is exactly zero.
pub fn lambda_grid(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    config: &CvConfig,
) -> Result<Vec<f64>, EnetError> {
    config.validate()?;
    validate_design(x, y)?;
    if config.ell == 0.0 {
        return Err(EnetError::BadInput("ell must be positive to form a lambda grid".into()));
    }
    let lambda_max = max_abs_xty_over_t(x, y) / config.ell;
    if lambda_max == 0.0 {
        return Err(EnetError::Degenerate("degenerate problem".into()));
    }
    if config.grid_size == 1 {
        return Ok(vec![lambda_max]);
    }
    let g = config.grid_size;
    Ok((0..g)
        .map(|i| lambda_max * config.grid_decay.powf(i as f64 / (g - 1) as f64))
        .collect())
}

/// Contiguous time blocks of near-equal size; the first `t % k` folds take
/// the extra row.
fn fold_bounds(t: usize, k: usize) -> Vec<(usize, usize)> {
    let base = t / k;
    let rem = t % k;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < rem);
        out.push((start, start + size));
        start += size;
    }
    out
}

/// Column count up to which the path solver precomputes the Gram matrix.
/// Beyond this the quadratic memory cost stops paying for itself and the
/// residual-based fallback is used instead.
const GRAM_MAX_COLS: usize = 2048;

/// Warm-started solve along a descending lambda grid with the coupling
/// `lambda1 = lambda * ell`, `lambda2 = lambda * (1 - ell) / 2`.
///
/// Every recorded solution is certified against the full KKT conditions
/// recomputed from a fresh residual, so the two internal strategies (Gram
/// caching for moderate column counts, residual updates with screening for
/// very wide designs) agree up to the stated tolerance. `on_solution`
/// receives `(grid index, dense beta, certified, sweeps)` for each lambda in
/// order.
#[allow(clippy::too_many_arguments)]
fn path_over_grid<F>(
    xs: &[f64],
    t: usize,
    n: usize,
    y: &[f64],
    grid: &[f64],
    ell: f64,
    tolerance: f64,
    max_iterations: usize,
    on_solution: F,
) -> Result<(), EnetError>
where
    F: FnMut(usize, &[f64], bool, usize),
{
    if n <= GRAM_MAX_COLS {
        path_over_grid_gram(xs, t, n, y, grid, ell, tolerance, max_iterations, on_solution)
    } else {
        path_over_grid_residual(xs, t, n, y, grid, ell, tolerance, max_iterations, on_solution)
    }
}

/// Gram-matrix path: maintains the full gradient `c = X'(y - X beta) / T`
/// incrementally, so one coordinate update costs O(N) independent of the row
/// count and a sweep can stop as soon as the maintained gradient satisfies
/// the KKT certificate. Certification always recomputes the gradient from a
/// fresh residual, which also resynchronizes `c` against incremental drift.
#[allow(clippy::too_many_arguments)]
fn path_over_grid_gram<F>(
    xs: &[f64],
    t: usize,
    n: usize,
    y: &[f64],
    grid: &[f64],
    ell: f64,
    tolerance: f64,
    max_iterations: usize,
    mut on_solution: F,
) -> Result<(), EnetError>
where
    F: FnMut(usize, &[f64], bool, usize),
{
    let engine = Engine::new(xs, t, n);
    let inv_t = 1.0 / t as f64;
    // Symmetric N x N matrix X'X / T; column j is contiguous and equals row j.
    let x_view = nalgebra::DMatrixView::from_slice(xs, t, n);
    let mut gram = x_view.tr_mul(&x_view);
    gram *= inv_t;
    let gts: &[f64] = gram.as_slice();

    let mut c: Vec<f64> = (0..n).map(|j| dot(engine.col(j), y) * inv_t).collect();
    let mut beta = vec![0.0; n];
    let mut resid = vec![0.0; t];
    let mut g = vec![0.0; n];

    for (k, &lambda) in grid.iter().enumerate() {
        let l1 = lambda * ell;
        let l2 = 0.5 * lambda * (1.0 - ell);
        let mut sweeps = 0usize;
        let certified = loop {
            let mut d = 0.0f64;
            for j in 0..n {
                let nj = gts[j * n + j];
                let denom = nj + 2.0 * l2;
                let old = beta[j];
                let mut rho = c[j];
                if old != 0.0 {
                    rho += nj * old;
                }
                let new = if denom > 0.0 { soft_threshold(rho, l1) / denom } else { 0.0 };
                let delta = new - old;
                if delta != 0.0 {
                    axpy(&mut c, &gts[j * n..(j + 1) * n], -delta);
                    beta[j] = new;
                }
                d = d.max(delta.abs());
            }
            sweeps += 1;
            if !d.is_finite() {
                return Err(EnetError::Numerical(
                    "coordinate update produced a non-finite value".into(),
                ));
            }
            let worth_certifying = d <= tolerance
                || sweeps >= max_iterations
                || engine.kkt_from_gradient(&c, &beta, l1, l2) <= 10.0 * tolerance;
            if !worth_certifying {
                continue;
            }
            engine.refresh_residual(y, &beta, &mut resid);
            engine.gradient(&resid, &mut g);
            c.copy_from_slice(&g);
            if engine.kkt_from_gradient(&g, &beta, l1, l2) <= 10.0 * tolerance {
                break true;
            }
            if sweeps >= max_iterations {
                break false;
            }
        };
        on_solution(k, &beta, certified, sweeps);
    }
    Ok(())
}

/// Residual-update path for very wide designs: coordinates are screened per
/// grid step (previous support plus a gradient threshold) and violators are
/// folded back into the working set before a solution is recorded.
#[allow(clippy::too_many_arguments)]
fn path_over_grid_residual<F>(
    xs: &[f64],
    t: usize,
    n: usize,
    y: &[f64],
    grid: &[f64],
    ell: f64,
    tolerance: f64,
    max_iterations: usize,
    mut on_solution: F,
) -> Result<(), EnetError>
where
    F: FnMut(usize, &[f64], bool, usize),
{
    let engine = Engine::new(xs, t, n);
    let mut beta = vec![0.0; n];
    let mut resid = y.to_vec();
    let mut g = vec![0.0; n];
    engine.gradient(&resid, &mut g);
    let mut in_working = vec![false; n];
    let mut working: Vec<usize> = Vec::new();
    let mut prev_l1 = grid[0] * ell;

    for (k, &lambda) in grid.iter().enumerate() {
        let l1 = lambda * ell;
        let l2 = 0.5 * lambda * (1.0 - ell);
        let screen = 2.0 * l1 - prev_l1;
        for j in 0..n {
            in_working[j] = beta[j] != 0.0 || g[j].abs() >= screen;
        }
        working.clear();
        working.extend((0..n).filter(|&j| in_working[j]));

        let mut sweeps = 0usize;
        let certified = loop {
            loop {
                let d = engine.sweep(&working, &mut beta, &mut resid, l1, l2);
                sweeps += 1;
                if !d.is_finite() {
                    return Err(EnetError::Numerical(
                        "coordinate update produced a non-finite value".into(),
                    ));
                }
                if d <= tolerance || sweeps >= max_iterations {
                    break;
                }
            }
            engine.refresh_residual(y, &beta, &mut resid);
            engine.gradient(&resid, &mut g);
            if engine.kkt_from_gradient(&g, &beta, l1, l2) <= 10.0 * tolerance {
                break true;
            }
            if sweeps >= max_iterations {
                break false;
            }
            // Screening missed a coordinate: pull every violating zero
            // coordinate into the working set and resume.
            let mut grew = false;
            for j in 0..n {
                if !in_working[j] && g[j].abs() > l1 + 10.0 * tolerance {
                    in_working[j] = true;
                    grew = true;
                }
            }
            if grew {
                working.clear();
                working.extend((0..n).filter(|&j| in_working[j]));
            }
        };

        on_solution(k, &beta, certified, sweeps);
        prev_l1 = l1;
    }
    Ok(())
}

/// Index of the smallest mean error, with ties resolved toward the smaller
/// index. The grid is descending, so a tie picks the larger lambda and hence
/// the sparser model.
fn select_lambda_index(mse: &[f64]) -> usize {
    let mut best = 0usize;
    for k in 1..mse.len() {
        if mse[k] < mse[best] {
            best = k;
        }
    }
    best
}

/// Blocked cross-validation over the coupled lambda grid.
///
/// Folds are contiguous equal-size (within one row) blocks of the time axis;
/// the winner minimizes the mean out-of-fold squared prediction error, with
/// ties broken toward the larger lambda (the sparser model). The returned
/// solution is a fresh full-data solve at the winner.
pub fn cross_validate(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    config: &CvConfig,
) -> Result<CvResult, EnetError> {
    config.validate()?;
    validate_design(x, y)?;
    let t = x.nrows();
    let n = x.ncols();
    if t < config.n_folds {
        return Err(EnetError::BadInput(format!(
            "n_folds ({}) exceeds the number of rows ({t})",
            config.n_folds
        )));
    }
    if config.ell == 0.0 {
        return Err(EnetError::BadInput("ell must be positive for cross-validation".into()));
    }

    if max_abs_xty_over_t(x, y) == 0.0 {
        // X'y = 0: every lambda admits the zero solution, so the grid is
        // degenerate; return beta = 0 at lambda_max = 0.
        let engine = Engine::new(x.as_slice(), t, n);
        let objective_value = engine.objective(y.as_slice(), &vec![0.0; n], 0.0, 0.0);
        return Ok(CvResult {
            lambda: 0.0,
            solution: EnetSolution {
                beta: Vec::new(),
                objective_value,
                n_iterations: 0,
                converged: true,
            },
            mse_path: Vec::new(),
        });
    }

    let grid = lambda_grid(x, y, config)?;
    let xs = x.as_slice();
    let ys = y.as_slice();
    let mut sse = vec![0.0f64; grid.len()];

    for &(test_start, test_end) in &fold_bounds(t, config.n_folds) {
        let t_test = test_end - test_start;
        let t_train = t - t_test;
        if t_train == 0 {
            continue;
        }
        // Column-major copy of the training rows.
        let mut train_xs = vec![0.0f64; t_train * n];
        for j in 0..n {
            let col = &xs[j * t..(j + 1) * t];
            let dst = &mut train_xs[j * t_train..(j + 1) * t_train];
            dst[..test_start].copy_from_slice(&col[..test_start]);
            dst[test_start..].copy_from_slice(&col[test_end..]);
        }
        let mut train_y = Vec::with_capacity(t_train);
        train_y.extend_from_slice(&ys[..test_start]);
        train_y.extend_from_slice(&ys[test_end..]);

        let mut pred = vec![0.0f64; t_test];
        path_over_grid(
            &train_xs,
            t_train,
            n,
            &train_y,
            &grid,
            config.ell,
            config.tolerance,
            config.max_iterations,
            |k, beta, _certified, _sweeps| {
                pred.iter_mut().for_each(|p| *p = 0.0);
                for (j, &b) in beta.iter().enumerate() {
                    if b != 0.0 {
                        let col = &xs[j * t..(j + 1) * t];
                        for (i, p) in pred.iter_mut().enumerate() {
                            *p += b * col[test_start + i];
                        }
                    }
                }
                let mut s = 0.0;
                for i in 0..t_test {
                    let e = ys[test_start + i] - pred[i];
                    s += e * e;
                }
                sse[k] += s;
            },
        )?;
    }

    let mse: Vec<f64> = sse.iter().map(|s| s / t as f64).collect();
    let best = select_lambda_index(&mse);

    let mut final_solution = None;
    path_over_grid(
        xs,
        t,
        n,
        ys,
        &grid[..=best],
        config.ell,
        config.tolerance,
        config.max_iterations,
        |k, beta, certified, sweeps| {
            if k == best {
                final_solution = Some((beta.to_vec(), certified, sweeps));
            }
        },
    )?;
    let (beta, converged, n_iterations) =
        final_solution.expect("path visits every grid index up to the winner");
    let engine = Engine::new(xs, t, n);
    let mut resid = ys.to_vec();
    engine.refresh_residual(ys, &beta, &mut resid);
    let lambda = grid[best];
    let objective_value =
        engine.objective(&resid, &beta, lambda * config.ell, 0.5 * lambda * (1.0 - config.ell));

    Ok(CvResult {
        lambda,
        solution: EnetSolution {
            beta: sparse_from_dense(&beta),
            objective_value,
            n_iterations,
            converged,
        },
        mse_path: grid.into_iter().zip(mse).collect(),
    })
}

/// Conventional R-squared of the no-intercept fit `yhat = X beta` against the
/// mean benchmark: `1 - sum (y - yhat)^2 / sum (y - ybar)^2`. Negative values
/// are meaningful and not clamped.
pub fn r_squared(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &[(usize, f64)],
) -> Result<f64, EnetError> {
    validate_design(x, y)?;
    let t = x.nrows();
    let xs = x.as_slice();
    let ys = y.as_slice();
    let mut resid = ys.to_vec();
    for &(j, b) in beta {
        if j >= x.ncols() {
            return Err(EnetError::BadInput(format!(
                "beta index {j} out of range for {} columns",
                x.ncols()
            )));
        }
        axpy(&mut resid, &xs[j * t..(j + 1) * t], -b);
    }
    let mean = ys.iter().sum::<f64>() / t as f64;
    let sst: f64 = ys.iter().map(|v| (v - mean) * (v - mean)).sum();
    if sst == 0.0 {
        return Err(EnetError::Degenerate("degenerate focal series".into()));
    }
    let sse = dot(&resid, &resid);
    Ok(1.0 - sse / sst)
}
