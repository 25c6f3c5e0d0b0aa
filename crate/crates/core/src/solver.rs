//! Renewal equations `u = v + K u` on the discretised operator.
//!
//! * ARL to false alarm: `v = 1`.
//! * Second moment of the run length: `v = 2 l - 1`, with `l` the ARL.
//! * Survival `rho_k = P(T > k)`: `rho_0 = 1`, `rho_{k+1} = K rho_k`; the pmf is
//!   `P(T = k) = rho_{k-1} - rho_k` and `l = sum_k rho_k`.
//!
//! Off-node values are produced by the iterated solution
//! `u(x) = v(x) + sum_j u_j int K_inf(x, y) phi_j(y) dy`.

use std::fmt;
use std::sync::Arc;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;

/// LU factorisation of `I - K` with partial pivoting, shared by every
/// right-hand side solved on the same matrix.
pub struct Factorization {
    matrix: Arc<KernelMatrix>,
    lu: PartialPivLu<f64>,
}

impl fmt::Debug for Factorization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Factorization")
            .field("n", &self.matrix.n())
            .field("method", &self.matrix.method())
            .finish()
    }
}

impl Factorization {
    pub fn new(matrix: impl Into<Arc<KernelMatrix>>) -> Self {
        let matrix = matrix.into();
        let n = matrix.n();
        let a = Mat::<f64>::from_fn(n, n, |i, j| {
            let k = matrix.entry(i, j);
            if i == j { 1.0 - k } else { -k }
        });
        let lu = a.partial_piv_lu();
        Self { matrix, lu }
    }

    pub fn matrix(&self) -> &Arc<KernelMatrix> {
        &self.matrix
    }

    /// Solves `(I - K) u = rhs` and checks the residual.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.matrix.n();
        if rhs.len() != n {
            return Err(Error::Argument(format!("right-hand side has length {}, expected {n}", rhs.len())));
        }
        let b = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
        let x = self.lu.solve(&b);
        let u: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("I - K is singular to working precision".into()));
        }
        let ku = self.matrix.mul_vec(&u);
        let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let residual = (0..n).map(|i| (u[i] - ku[i] - rhs[i]).abs()).fold(0.0, f64::max);
        if residual > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Numeric(format!(
                "linear solve residual {residual:e} exceeds 1e-10 * |u| = {:e}",
                1e-10 * scale
            )));
        }
        Ok(u)
    }

    /// `|| (I - K)^{-1} ||_inf`, from the explicit inverse.
    pub fn inverse_norm_inf(&self) -> f64 {
        let n = self.matrix.n();
        let inv = self.lu.solve(Mat::<f64>::identity(n, n));
        (0..n)
            .map(|i| (0..n).map(|j| inv[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolutionKind {
    Arl,
    SecondMoment,
    Generic,
}

/// Right-hand side `v(x)` of a renewal equation.
#[derive(Clone)]
pub enum Rhs {
    Constant(f64),
    /// `2 l(x) - 1` for the ARL solution `l`.
    FromArl(Box<RunLengthSolution>),
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Rhs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rhs::Constant(c) => write!(f, "Constant({c})"),
            Rhs::FromArl(_) => f.write_str("FromArl"),
            Rhs::Function(_) => f.write_str("Function"),
        }
    }
}

/// Nodal solution of a renewal equation plus what is needed to evaluate it anywhere.
#[derive(Debug, Clone)]
pub struct RunLengthSolution {
    kind: SolutionKind,
    coeffs: Vec<f64>,
    system: Arc<Factorization>,
    rhs: Rhs,
}

/// Solves `l = 1 + K l` for the ARL to false alarm.
pub fn solve_arl(matrix: impl Into<Arc<KernelMatrix>>) -> Result<RunLengthSolution> {
    solve_arl_with(Arc::new(Factorization::new(matrix)))
}

pub fn solve_arl_with(system: Arc<Factorization>) -> Result<RunLengthSolution> {
    let n = system.matrix().n();
    let coeffs = system.solve(&vec![1.0; n])?;
    if let Some(v) = coeffs.iter().find(|&&v| v < 1.0 - 1e-9) {
        return Err(Error::Numeric(format!("ARL coefficient {v:e} below 1")));
    }
    Ok(RunLengthSolution { kind: SolutionKind::Arl, coeffs, system, rhs: Rhs::Constant(1.0) })
}

/// Solves `mu2 = 2 l - 1 + K mu2`, reusing the factorisation behind `arl`.
pub fn solve_second_moment(arl: &RunLengthSolution) -> Result<RunLengthSolution> {
    if arl.kind != SolutionKind::Arl {
        return Err(Error::Argument("second moment needs an ARL solution".into()));
    }
    let rhs: Vec<f64> = arl.coeffs.iter().map(|l| 2.0 * l - 1.0).collect();
    let coeffs = arl.system.solve(&rhs)?;
    for (j, (&m, &l)) in coeffs.iter().zip(&arl.coeffs).enumerate() {
        let var = m - l * l;
        if var < -1e-9 * m.abs() {
            return Err(Error::Numeric(format!("negative variance {var:e} at collocation point {j}")));
        }
    }
    Ok(RunLengthSolution {
        kind: SolutionKind::SecondMoment,
        coeffs,
        system: Arc::clone(&arl.system),
        rhs: Rhs::FromArl(Box::new(arl.clone())),
    })
}

/// Solves `u = v + K u` for an arbitrary right-hand side function.
pub fn solve_generic(
    system: Arc<Factorization>,
    rhs: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
) -> Result<RunLengthSolution> {
    let b: Vec<f64> = system.matrix().collocation_points().iter().map(|&z| rhs(z)).collect();
    let coeffs = system.solve(&b)?;
    Ok(RunLengthSolution { kind: SolutionKind::Generic, coeffs, system, rhs: Rhs::Function(rhs) })
}

impl RunLengthSolution {
    pub fn kind(&self) -> SolutionKind {
        self.kind
    }

    /// Values at the collocation points.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn matrix(&self) -> &KernelMatrix {
        self.system.matrix()
    }

    pub fn system(&self) -> &Arc<Factorization> {
        &self.system
    }

    pub fn rhs(&self) -> &Rhs {
        &self.rhs
    }

    fn dot(row: &[f64], coeffs: &[f64]) -> f64 {
        row.iter().zip(coeffs).map(|(a, b)| a * b).sum()
    }

    fn rhs_at(&self, x: f64, row: &[f64]) -> f64 {
        match &self.rhs {
            Rhs::Constant(c) => *c,
            Rhs::FromArl(arl) => 2.0 * (1.0 + Self::dot(row, &arl.coeffs)) - 1.0,
            Rhs::Function(f) => f(x),
        }
    }

    /// Iterated solution at headstart `x >= -1`; exact coefficient at a collocation point.
    pub fn evaluate_iterated(&self, x: f64) -> Result<f64> {
        if let Some(i) = self.matrix().collocation_points().iter().position(|&z| z == x) {
            return Ok(self.coeffs[i]);
        }
        let row = self.matrix().operator_row(x)?;
        Ok(self.rhs_at(x, &row) + Self::dot(&row, &self.coeffs))
    }

    /// Iterated solution at many points, evaluated in parallel.
    pub fn evaluate_many(&self, xs: &[f64]) -> Result<Vec<f64>> {
        xs.par_iter().map(|&x| self.evaluate_iterated(x)).collect()
    }
}

/// ARL and standard deviation of the run length from one factorisation.
#[derive(Debug, Clone)]
pub struct Moments {
    pub arl: RunLengthSolution,
    pub second: RunLengthSolution,
}

impl Moments {
    pub fn solve(matrix: impl Into<Arc<KernelMatrix>>) -> Result<Self> {
        let arl = solve_arl(matrix)?;
        let second = solve_second_moment(&arl)?;
        Ok(Self { arl, second })
    }

    /// `(ARL, std dev)` at headstart `x`.
    pub fn at(&self, x: f64) -> Result<(f64, f64)> {
        let l = self.arl.evaluate_iterated(x)?;
        let m = self.second.evaluate_iterated(x)?;
        Ok((l, std_dev(l, m)?))
    }
}

/// `sqrt(mu2 - l^2)`, tolerating roundoff of relative size `1e-9`.
pub fn std_dev(arl: f64, second_moment: f64) -> Result<f64> {
    let var = second_moment - arl * arl;
    if var < 0.0 {
        if var < -1e-9 * second_moment.abs() {
            return Err(Error::Numeric(format!("negative variance {var:e}")));
        }
        return Ok(0.0);
    }
    Ok(var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Termination {
    /// `rho_k(r)` dropped below the tail tolerance.
    Tail,
    /// `k_max` reached first.
    Horizon,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalOptions {
    pub epsilon_tail: f64,
    pub k_max: usize,
}

impl SurvivalOptions {
    /// `epsilon_tail = 1e-12`, `k_max = max(10^6, 50 * arl)`.
    pub fn for_arl(arl: f64) -> Self {
        let k_max = (50.0 * arl).ceil().max(1e6) as usize;
        Self { epsilon_tail: 1e-12, k_max }
    }

    pub fn horizon(k_max: usize) -> Self {
        Self { epsilon_tail: f64::MIN_POSITIVE, k_max }
    }
}

/// `rho_k(r) = P(T > k | R_0 = r)` for `k = 0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalSeries {
    headstart: f64,
    values: Vec<f64>,
    epsilon_tail: f64,
    k_max: usize,
    terminated_by: Termination,
}

/// Propagates nodal survival vectors `rho^(k+1) = K rho^(k)` from the all-ones
/// vector and reads off `rho_k(r) = w(r) . rho^(k-1)` with one operator row.
pub fn survival_series(matrix: &KernelMatrix, r: f64, options: SurvivalOptions) -> Result<SurvivalSeries> {
    let SurvivalOptions { epsilon_tail, k_max } = options;
    if !(epsilon_tail > 0.0 && epsilon_tail < 1.0) {
        return Err(Error::Argument(format!("epsilon_tail must lie in (0, 1), got {epsilon_tail}")));
    }
    if k_max < 1 {
        return Err(Error::Argument("k_max must be at least 1".into()));
    }
    let w = matrix.operator_row(r)?;
    let mut nodal = vec![1.0; matrix.n()];
    let mut next = vec![0.0; matrix.n()];
    let mut values = vec![1.0];
    let terminated_by = loop {
        let k = values.len();
        let rho = RunLengthSolution::dot(&w, &nodal).min(values[k - 1]);
        values.push(rho);
        if rho < epsilon_tail {
            break Termination::Tail;
        }
        if k == k_max {
            break Termination::Horizon;
        }
        matrix.mul_vec_into(&nodal, &mut next);
        // elementwise min keeps the nodal sequence monotone under roundoff
        for (n, o) in next.iter_mut().zip(&nodal) {
            *n = n.min(*o);
        }
        std::mem::swap(&mut nodal, &mut next);
    };
    Ok(SurvivalSeries { headstart: r, values, epsilon_tail, k_max, terminated_by })
}

impl SurvivalSeries {
    pub fn headstart(&self) -> f64 {
        self.headstart
    }

    /// `rho_0, ..., rho_K`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Last index `K`.
    pub fn horizon(&self) -> usize {
        self.values.len() - 1
    }

    pub fn rho(&self, k: usize) -> Option<f64> {
        self.values.get(k).copied()
    }

    pub fn epsilon_tail(&self) -> f64 {
        self.epsilon_tail
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn terminated_by(&self) -> Termination {
        self.terminated_by
    }

    /// `P(T = k) = rho_{k-1} - rho_k` for `k = 1..=K`; element `k - 1` holds `P(T = k)`.
    pub fn pmf(&self) -> Result<Vec<f64>> {
        self.values
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let p = w[0] - w[1];
                if p >= 0.0 {
                    Ok(p)
                } else if p > -1e-12 {
                    Ok(0.0)
                } else {
                    Err(Error::Numeric(format!("survival increases at k = {}: {p:e}", i + 1)))
                }
            })
            .collect()
    }

    /// `P(k < T <= k + m | T > k) = 1 - rho_{k+m} / rho_k`.
    pub fn conditional_pfa(&self, k: usize, m: usize) -> Result<f64> {
        if m == 0 {
            return Err(Error::Argument("window length m must be at least 1".into()));
        }
        let end = k.checked_add(m).filter(|&e| e <= self.horizon()).ok_or_else(|| {
            Error::Argument(format!("k + m = {} exceeds the series horizon {}", k.saturating_add(m), self.horizon()))
        })?;
        let rho_k = self.values[k];
        if rho_k <= 0.0 {
            return Err(Error::UndefinedConditional { k });
        }
        Ok((1.0 - self.values[end] / rho_k).clamp(0.0, 1.0))
    }

    /// `sum_k rho_k` with the tail past `K` closed off geometrically at the
    /// last observed ratio `q = rho_K / rho_{K-1}`.
    pub fn tail_corrected_sum(&self) -> f64 {
        let partial: f64 = self.values.iter().sum();
        let k = self.horizon();
        if k == 0 || self.values[k - 1] <= 0.0 {
            return partial;
        }
        let q = self.values[k] / self.values[k - 1];
        if q >= 1.0 {
            return f64::INFINITY;
        }
        partial + self.values[k] * q / (1.0 - q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::chebyshev_partition;
    use crate::kernel::assemble_collocation;
    use crate::model::{ChangePointModel, Measure};

    fn arl(theta: f64, a: f64, n: usize) -> RunLengthSolution {
        let model = ChangePointModel::new(theta).unwrap();
        let p = chebyshev_partition(n, a).unwrap();
        solve_arl(assemble_collocation(&model, &p).unwrap()).unwrap()
    }

    #[test]
    fn vanishing_threshold_stops_immediately() {
        let sol = arl(0.5, 1e-12, 2);
        assert!(sol.coeffs().iter().all(|&v| v == 1.0));
        assert_eq!(sol.evaluate_iterated(0.3).unwrap(), 1.0);
    }

    #[test]
    fn arl_coefficients_decrease_with_headstart() {
        let sol = arl(0.5, 74.76, 64);
        assert!(sol.coeffs().iter().all(|&v| v >= 1.0));
        assert!(sol.coeffs().windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn iterated_solution_matches_nodes() {
        let sol = arl(1.0, 56.0, 32);
        let nodes = sol.matrix().partition().nodes().to_vec();
        for (j, &x) in nodes.iter().enumerate() {
            assert_eq!(sol.evaluate_iterated(x).unwrap(), sol.coeffs()[j]);
            // the formula path agrees to solve accuracy
            let row = sol.matrix().operator_row(x).unwrap();
            let v = 1.0 + RunLengthSolution::dot(&row, sol.coeffs());
            assert!((v - sol.coeffs()[j]).abs() < 1e-10 * sol.coeffs()[0]);
        }
        assert!(sol.evaluate_iterated(-1.5).is_err());
    }

    #[test]
    fn off_grid_value_lies_between_end_values() {
        let sol = arl(0.5, 74.76, 64);
        let mid = sol.evaluate_iterated(74.76 / 2.0 + 0.01).unwrap();
        assert!(mid < sol.coeffs()[0] && mid > *sol.coeffs().last().unwrap());
    }

    #[test]
    fn second_moment_dominates_square() {
        let sol = arl(1.0, 56.0, 64);
        let mu2 = solve_second_moment(&sol).unwrap();
        for (m, l) in mu2.coeffs().iter().zip(sol.coeffs()) {
            assert!(*m >= l * l * (1.0 - 1e-9));
        }
        assert!(solve_second_moment(&mu2).is_err());
    }

    #[test]
    fn survival_first_terms() {
        let sol = arl(1.0, 56.0, 64);
        let m = sol.matrix();
        for r in [0.0, 3.3, 70.0] {
            let s = survival_series(m, r, SurvivalOptions::horizon(5)).unwrap();
            assert_eq!(s.rho(0), Some(1.0));
            let expected = m.model().lr_cdf(56.0 / (1.0 + r), Measure::PreChange).unwrap();
            assert!((s.rho(1).unwrap() - expected).abs() < 1e-12);
            let pmf = s.pmf().unwrap();
            assert!((pmf[0] - (1.0 - expected)).abs() < 1e-12);
            assert_eq!(s.horizon(), 5);
            assert_eq!(s.terminated_by(), Termination::Horizon);
        }
    }

    #[test]
    fn conditional_pfa_edges() {
        let sol = arl(1.0, 56.0, 32);
        let s = survival_series(sol.matrix(), 0.0, SurvivalOptions::horizon(20)).unwrap();
        assert!((s.conditional_pfa(0, 1).unwrap() - (1.0 - s.rho(1).unwrap())).abs() < 1e-15);
        assert!(s.conditional_pfa(3, 0).is_err());
        assert!(s.conditional_pfa(15, 6).is_err());
        let zero = SurvivalSeries {
            headstart: 0.0,
            values: vec![1.0, 0.0, 0.0],
            epsilon_tail: 1e-12,
            k_max: 2,
            terminated_by: Termination::Tail,
        };
        assert_eq!(zero.conditional_pfa(1, 1), Err(Error::UndefinedConditional { k: 1 }));
    }

    #[test]
    fn pmf_rejects_increasing_survival() {
        let bad = SurvivalSeries {
            headstart: 0.0,
            values: vec![1.0, 0.5, 0.6],
            epsilon_tail: 1e-12,
            k_max: 2,
            terminated_by: Termination::Horizon,
        };
        assert!(bad.pmf().is_err());
    }

    #[test]
    fn default_options() {
        let o = SurvivalOptions::for_arl(100.0);
        assert_eq!(o.k_max, 1_000_000);
        assert_eq!(SurvivalOptions::for_arl(1e5).k_max, 5_000_000);
        assert_eq!(o.epsilon_tail, 1e-12);
    }

    #[test]
    fn generic_rhs_with_constant_function_matches_arl() {
        let sol = arl(0.5, 20.0, 16);
        let g = solve_generic(Arc::clone(sol.system()), Arc::new(|_| 1.0)).unwrap();
        for (a, b) in g.coeffs().iter().zip(sol.coeffs()) {
            assert!((a - b).abs() < 1e-12 * a);
        }
        let x = 7.77;
        assert!((g.evaluate_iterated(x).unwrap() - sol.evaluate_iterated(x).unwrap()).abs() < 1e-12 * x.max(10.0));
    }
}
