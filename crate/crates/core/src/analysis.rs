//! Convergence diagnostics, threshold calibration and method comparison.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{uniform_partition, Partition};
use crate::kernel::{assemble_collocation, assemble_midpoint, KernelMatrix, Method};
use crate::model::ChangePointModel;
use crate::solver::{solve_arl, RunLengthSolution, SurvivalSeries};

/// Default number of probe points for sup-norm differences.
pub const DEFAULT_PROBE_POINTS: usize = 1000;

/// `points` equispaced probes on `[0, a]`, both endpoints included.
pub fn probe_grid(a: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => {
            let step = a / (points - 1) as f64;
            let mut xs: Vec<f64> = (0..points).map(|i| i as f64 * step).collect();
            xs[points - 1] = a;
            xs
        }
    }
}

/// Discretised operator for `method` at size `n`: `n` Chebyshev nodes for the
/// hat method, `n` uniform subintervals for the midpoint method.
pub fn build_matrix(model: &ChangePointModel, a: f64, n: usize, method: Method) -> Result<KernelMatrix> {
    match method {
        Method::CollocationHat => assemble_collocation(model, &Partition::for_model(model, n, a)?),
        Method::Midpoint => assemble_midpoint(model, &uniform_partition(n, a)?),
    }
}

pub fn solve_arl_at(model: &ChangePointModel, a: f64, n: usize, method: Method) -> Result<RunLengthSolution> {
    solve_arl(build_matrix(model, a, n, method)?)
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RichardsonRate {
    /// `p(N) = -log2(|l_2N - l_N| / |l_N - l_{N/2}|)`.
    pub rate: f64,
    /// `|l - l_N| ~ 2^{-p(N)} |l_N - l_{N/2}|`.
    pub err_est: f64,
}

/// Rate from three solutions sampled on a common probe grid (sizes `N/2`, `N`, `2N`).
pub fn richardson_rate(half: &[f64], n: &[f64], double: &[f64]) -> Result<RichardsonRate> {
    if half.len() != n.len() || n.len() != double.len() || n.is_empty() {
        return Err(Error::Argument("probe samples must be nonempty and equally long".into()));
    }
    let coarse = sup_diff(n, half);
    let fine = sup_diff(double, n);
    if coarse == 0.0 || fine == 0.0 {
        return Err(Error::RateUndefined(format!(
            "successive differences {coarse:e} and {fine:e}; solutions coincide"
        )));
    }
    let ratio = fine / coarse;
    Ok(RichardsonRate { rate: -ratio.log2(), err_est: ratio * coarse })
}

/// [`richardson_rate`] for solutions evaluated through their iterated form.
pub fn richardson_rate_of(
    half: &RunLengthSolution,
    n: &RunLengthSolution,
    double: &RunLengthSolution,
    probe: &[f64],
) -> Result<RichardsonRate> {
    richardson_rate(&half.evaluate_many(probe)?, &n.evaluate_many(probe)?, &double.evaluate_many(probe)?)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    /// ARL at the study's headstart.
    pub value: f64,
    /// `|l_N - l_prev|` on the probe grid.
    pub diff_prev: Option<f64>,
    pub rate: Option<f64>,
    pub err_est: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConvergenceReport {
    pub method: Method,
    pub threshold: f64,
    pub headstart: f64,
    pub probe_points: usize,
    pub rows: Vec<ConvergenceRow>,
}

/// ARL at headstart `r` for each size in `ns`, with Richardson rates where a
/// size has both neighbours. `ns` is expected to double from row to row.
pub fn convergence_study(
    model: &ChangePointModel,
    a: f64,
    r: f64,
    ns: &[usize],
    method: Method,
    probe_points: usize,
) -> Result<ConvergenceReport> {
    if ns.is_empty() {
        return Err(Error::Argument("no partition sizes given".into()));
    }
    let probe = probe_grid(a, probe_points.max(2));
    let mut values = Vec::with_capacity(ns.len());
    let mut samples = Vec::with_capacity(ns.len());
    for &n in ns {
        let sol = solve_arl_at(model, a, n, method)?;
        values.push(sol.evaluate_iterated(r)?);
        samples.push(sol.evaluate_many(&probe)?);
    }
    let rows = (0..ns.len())
        .map(|i| {
            let diff_prev = (i > 0).then(|| sup_diff(&samples[i], &samples[i - 1]));
            let rr = (i > 0 && i + 1 < ns.len())
                .then(|| richardson_rate(&samples[i - 1], &samples[i], &samples[i + 1]).ok())
                .flatten();
            ConvergenceRow {
                n: ns[i],
                value: values[i],
                diff_prev,
                rate: rr.map(|r| r.rate),
                err_est: rr.map(|r| r.err_est),
            }
        })
        .collect();
    Ok(ConvergenceReport { method, threshold: a, headstart: r, probe_points: probe.len(), rows })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CalibrationResult {
    pub gamma: f64,
    pub threshold: f64,
    pub achieved: f64,
    pub iterations: usize,
    /// Every `(A, ARL)` pair evaluated, in evaluation order.
    pub history: Vec<(f64, f64)>,
}

impl CalibrationResult {
    /// ARL strictly increasing in `A` across every evaluated threshold.
    pub fn history_is_monotone(&self) -> bool {
        let mut h = self.history.clone();
        h.sort_by(|a, b| a.0.total_cmp(&b.0));
        h.dedup_by(|a, b| a.0 == b.0);
        h.windows(2).all(|w| w[1].1 > w[0].1)
    }
}

/// Finds `A` with `|l_N(r; A) - gamma| <= rel_tol * gamma` by bracketing and bisection.
pub fn calibrate_threshold(
    model: &ChangePointModel,
    gamma: f64,
    r: f64,
    n: usize,
    rel_tol: f64,
) -> Result<CalibrationResult> {
    if !(gamma > 1.0 && gamma.is_finite()) {
        return Err(Error::Argument(format!("target ARL must exceed 1, got {gamma}")));
    }
    if rel_tol.is_nan() || rel_tol <= 0.0 {
        return Err(Error::Argument(format!("relative tolerance must be positive, got {rel_tol}")));
    }
    let mut history = Vec::new();
    let mut arl_at = |a: f64| -> Result<f64> {
        let v = solve_arl_at(model, a, n, Method::CollocationHat)?.evaluate_iterated(r)?;
        history.push((a, v));
        Ok(v)
    };
    let done = |v: f64| (v - gamma).abs() <= rel_tol * gamma;

    let mut lo = (0.3 * gamma).max(1.0);
    let mut lo_val = arl_at(lo)?;
    while lo_val >= gamma {
        if done(lo_val) {
            return Ok(finish(gamma, lo, lo_val, history));
        }
        lo *= 0.5;
        if lo < 1e-12 {
            return Err(Error::Calibration(format!("no threshold gives an ARL below {gamma}")));
        }
        lo_val = arl_at(lo)?;
    }
    let mut hi = 1.5 * gamma;
    let mut hi_val = arl_at(hi)?;
    while hi_val <= gamma {
        if done(hi_val) {
            return Ok(finish(gamma, hi, hi_val, history));
        }
        hi *= 2.0;
        if hi > 1e6 * gamma {
            return Err(Error::Calibration(format!("bracket exceeded 1e6 * gamma = {:e}", 1e6 * gamma)));
        }
        hi_val = arl_at(hi)?;
    }
    if done(lo_val) {
        return Ok(finish(gamma, lo, lo_val, history));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = arl_at(mid)?;
        if done(v) {
            return Ok(finish(gamma, mid, v, history));
        }
        if v < gamma {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    Err(Error::Calibration(format!(
        "bisection stalled in [{lo}, {hi}] without reaching relative tolerance {rel_tol}"
    )))
}

fn finish(gamma: f64, threshold: f64, achieved: f64, history: Vec<(f64, f64)>) -> CalibrationResult {
    CalibrationResult { gamma, threshold, achieved, iterations: history.len(), history }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ComparisonRow {
    pub n: usize,
    pub method: Method,
    pub value: f64,
    /// `|value - reference|`.
    pub ref_error: f64,
    pub rate: Option<f64>,
    pub err_est: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MethodComparison {
    /// Hat-method value at the largest size.
    pub reference: f64,
    pub rows: Vec<ComparisonRow>,
}

/// Attaches distances to `reference` to every row of each report.
pub fn compare_reports(reports: &[ConvergenceReport], reference: f64) -> MethodComparison {
    let rows = reports
        .iter()
        .flat_map(|rep| {
            rep.rows.iter().map(move |row| ComparisonRow {
                n: row.n,
                method: rep.method,
                value: row.value,
                ref_error: (row.value - reference).abs(),
                rate: row.rate,
                err_est: row.err_est,
            })
        })
        .collect();
    MethodComparison { reference, rows }
}

/// Hat versus midpoint on the same model and threshold.
pub fn compare_methods(
    model: &ChangePointModel,
    a: f64,
    r: f64,
    ns: &[usize],
    probe_points: usize,
) -> Result<MethodComparison> {
    let reports = [Method::CollocationHat, Method::Midpoint]
        .par_iter()
        .map(|&m| convergence_study(model, a, r, ns, m, probe_points))
        .collect::<Result<Vec<_>>>()?;
    let hat = &reports[0];
    let reference = hat.rows.iter().max_by_key(|row| row.n).map(|row| row.value).unwrap();
    Ok(compare_reports(&reports, reference))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ErrorBound {
    pub sup_norm: f64,
    pub second_derivative: f64,
    pub spacing: f64,
    /// `|l| |l_xx| h^2 / 8`.
    pub bound: f64,
}

/// A-priori error bound for spacing `h`, with `l_xx` estimated by second
/// differences of `values` sampled on the equispaced grid `xs`.
pub fn error_bound(xs: &[f64], values: &[f64], h: f64) -> Result<ErrorBound> {
    if xs.len() < 3 || xs.len() != values.len() {
        return Err(Error::Argument("need at least three equally long samples".into()));
    }
    let dx = xs[1] - xs[0];
    let second_derivative = values
        .windows(3)
        .map(|w| ((w[2] - 2.0 * w[1] + w[0]) / (dx * dx)).abs())
        .fold(0.0, f64::max);
    let sup_norm = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(ErrorBound { sup_norm, second_derivative, spacing: h, bound: sup_norm * second_derivative * h * h / 8.0 })
}

/// Least-squares slope of `log rho_k` against `k` over `k_lo..=k_hi`.
pub fn log_survival_slope(series: &SurvivalSeries, k_lo: usize, k_hi: usize) -> Result<f64> {
    if k_hi <= k_lo || k_hi > series.horizon() {
        return Err(Error::Argument(format!(
            "fit window [{k_lo}, {k_hi}] invalid for horizon {}",
            series.horizon()
        )));
    }
    let pts: Vec<(f64, f64)> = (k_lo..=k_hi)
        .map(|k| (k as f64, series.values()[k]))
        .filter(|(_, r)| *r > 0.0)
        .map(|(k, r)| (k, r.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Numeric("survival vanished inside the fit window".into()));
    }
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
    Ok(sxy / sxx)
}
