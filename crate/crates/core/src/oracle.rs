//! Monte Carlo simulation of the detection statistic under the pre-change measure.
//!
//! Each path draws `X_n ~ N(0, 1)`, forms `Λ_n = exp(theta X_n - theta^2 / 2)`,
//! iterates `V_n = psi(V_{n-1}) Λ_n` from `V_0 = r`, and stops at the first `n`
//! with `V_n >= A`. Path `i` uses its own ChaCha8 stream (stream id `i` under a
//! key derived from the seed), so results do not depend on thread scheduling.

use std::collections::BTreeMap;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::model::ChangePointModel;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum Quantity {
    Arl,
    StdDev,
    Survival(usize),
    Pfa { k: usize, m: usize },
    /// `E[R_n - n - r]` for the unstopped GSR statistic.
    MartingaleGap(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MonteCarloEstimate {
    pub quantity: Quantity,
    pub estimate: f64,
    pub std_error: f64,
    pub paths: usize,
    pub seed: u64,
    pub cap: u64,
    /// Paths truncated at the cap; they enter the estimates at the cap value,
    /// so ARL and survival estimates are biased low when this is nonzero.
    pub capped: usize,
    /// False when more than 1% of paths hit the cap.
    pub reliable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub threshold: f64,
    pub headstart: f64,
    pub paths: usize,
    pub seed: u64,
    pub cap: u64,
}

impl SimulationConfig {
    /// Cap defaults to `100 * max(A, 1)`.
    pub fn new(threshold: f64, headstart: f64, paths: usize, seed: u64) -> Self {
        let cap = (100.0 * threshold.max(1.0)).ceil() as u64;
        Self { threshold, headstart, paths, seed, cap }
    }

    pub fn with_cap(mut self, cap: u64) -> Self {
        self.cap = cap;
        self
    }
}

/// Per-path random stream.
struct PathRng(ChaCha8Rng);

impl PathRng {
    fn new(key: [u8; 32], path: u64) -> Self {
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(path);
        Self(rng)
    }

    /// Uniform on the open interval `(0, 1)`.
    #[inline]
    fn uniform(&mut self) -> f64 {
        ((self.0.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by inversion.
    #[inline]
    fn normal(&mut self) -> f64 {
        -std::f64::consts::SQRT_2 * erfc_inv(2.0 * self.uniform())
    }
}

fn key_from_seed(seed: u64) -> [u8; 32] {
    ChaCha8Rng::seed_from_u64(seed).get_seed()
}

/// Fixed-order pairwise summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Simulated run lengths of one configuration.
#[derive(Debug, Clone)]
pub struct MonteCarloRun {
    config: SimulationConfig,
    run_lengths: Vec<u64>,
    capped: usize,
}

pub fn simulate_run_length(model: &ChangePointModel, config: SimulationConfig) -> Result<MonteCarloRun> {
    if config.paths == 0 {
        return Err(Error::Argument("at least one path is required".into()));
    }
    if config.cap == 0 {
        return Err(Error::Argument("step cap must be positive".into()));
    }
    if !(config.threshold >= 0.0 && config.threshold.is_finite()) {
        return Err(Error::Argument(format!("threshold must be finite and >= 0, got {}", config.threshold)));
    }
    model.scale(config.headstart)?;
    let key = key_from_seed(config.seed);
    let a = config.threshold;
    let run_lengths: Vec<u64> = (0..config.paths as u64)
        .into_par_iter()
        .map(|path| {
            let mut rng = PathRng::new(key, path);
            let mut v = config.headstart;
            let mut n = 0u64;
            loop {
                n += 1;
                v = model.psi().eval(v) * model.likelihood_ratio(rng.normal());
                if v >= a || n == config.cap {
                    return n;
                }
            }
        })
        .collect();
    // a path stopping exactly at the cap still counts as stopped
    let capped = (0..config.paths)
        .into_par_iter()
        .filter(|&i| run_lengths[i] == config.cap && !stopped_at_cap(model, &config, key, i as u64))
        .count();
    Ok(MonteCarloRun { config, run_lengths, capped })
}

/// Replays path `i` to decide whether it crossed the threshold on its last step.
fn stopped_at_cap(model: &ChangePointModel, config: &SimulationConfig, key: [u8; 32], path: u64) -> bool {
    let mut rng = PathRng::new(key, path);
    let mut v = config.headstart;
    for _ in 0..config.cap {
        v = model.psi().eval(v) * model.likelihood_ratio(rng.normal());
    }
    v >= config.threshold
}

impl MonteCarloRun {
    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn run_lengths(&self) -> &[u64] {
        &self.run_lengths
    }

    pub fn capped(&self) -> usize {
        self.capped
    }

    pub fn capped_fraction(&self) -> f64 {
        self.capped as f64 / self.run_lengths.len() as f64
    }

    fn estimate(&self, quantity: Quantity, estimate: f64, std_error: f64, paths: usize) -> MonteCarloEstimate {
        MonteCarloEstimate {
            quantity,
            estimate,
            std_error,
            paths,
            seed: self.config.seed,
            cap: self.config.cap,
            capped: self.capped,
            reliable: self.capped_fraction() <= 0.01,
        }
    }

    fn mean(&self) -> f64 {
        let xs: Vec<f64> = self.run_lengths.iter().map(|&t| t as f64).collect();
        pairwise_sum(&xs) / xs.len() as f64
    }

    /// Central moments of order 2 and 4 (population normalisation).
    fn central_moments(&self, mean: f64) -> (f64, f64) {
        let n = self.run_lengths.len() as f64;
        let sq: Vec<f64> = self.run_lengths.iter().map(|&t| (t as f64 - mean).powi(2)).collect();
        let quart: Vec<f64> = sq.iter().map(|d| d * d).collect();
        (pairwise_sum(&sq) / n, pairwise_sum(&quart) / n)
    }

    pub fn arl(&self) -> MonteCarloEstimate {
        let n = self.run_lengths.len();
        let mean = self.mean();
        let (m2, _) = self.central_moments(mean);
        let se = if n > 1 { (m2 * n as f64 / (n - 1) as f64 / n as f64).sqrt() } else { 0.0 };
        self.estimate(Quantity::Arl, mean, se, n)
    }

    /// Sample standard deviation; its standard error by the delta method,
    /// `sqrt((mu4 - sigma^4) / n) / (2 sigma)`.
    pub fn std_dev(&self) -> MonteCarloEstimate {
        let n = self.run_lengths.len();
        let mean = self.mean();
        let (m2, m4) = self.central_moments(mean);
        let var = if n > 1 { m2 * n as f64 / (n - 1) as f64 } else { 0.0 };
        let sd = var.sqrt();
        let se = if sd > 0.0 { ((m4 - m2 * m2).max(0.0) / n as f64).sqrt() / (2.0 * sd) } else { 0.0 };
        self.estimate(Quantity::StdDev, sd, se, n)
    }

    /// Empirical `P(T > k)`.
    pub fn survival(&self, k: usize) -> MonteCarloEstimate {
        let n = self.run_lengths.len();
        let alive = self.run_lengths.iter().filter(|&&t| t > k as u64).count();
        let p = alive as f64 / n as f64;
        self.estimate(Quantity::Survival(k), p, (p * (1.0 - p) / n as f64).sqrt(), n)
    }

    /// Empirical `P(k < T <= k + m | T > k)`.
    pub fn conditional_pfa(&self, k: usize, m: usize) -> Result<MonteCarloEstimate> {
        if m == 0 {
            return Err(Error::Argument("window length m must be at least 1".into()));
        }
        let (k64, end) = (k as u64, (k + m) as u64);
        let alive = self.run_lengths.iter().filter(|&&t| t > k64).count();
        if alive == 0 {
            return Err(Error::UndefinedConditional { k });
        }
        let alarms = self.run_lengths.iter().filter(|&&t| t > k64 && t <= end).count();
        let p = alarms as f64 / alive as f64;
        Ok(self.estimate(Quantity::Pfa { k, m }, p, (p * (1.0 - p) / alive as f64).sqrt(), alive))
    }

    /// Run-length histogram.
    pub fn histogram(&self) -> BTreeMap<u64, usize> {
        let mut h = BTreeMap::new();
        for &t in &self.run_lengths {
            *h.entry(t).or_insert(0) += 1;
        }
        h
    }
}

/// Estimates `E[R_n - n - r]` for the unstopped statistic at each horizon in
/// `horizons`. Zero for every `n` when `psi(x) = 1 + x`.
pub fn simulate_martingale_gap(
    model: &ChangePointModel,
    headstart: f64,
    horizons: &[usize],
    paths: usize,
    seed: u64,
) -> Result<Vec<MonteCarloEstimate>> {
    if paths < 2 {
        return Err(Error::Argument("need at least two paths".into()));
    }
    model.scale(headstart)?;
    let n_max = horizons.iter().copied().max().unwrap_or(0);
    let key = key_from_seed(seed);
    // samples[path][h] = R_{horizons[h]} - horizons[h] - r
    let samples: Vec<Vec<f64>> = (0..paths as u64)
        .into_par_iter()
        .map(|path| {
            let mut rng = PathRng::new(key, path);
            let mut v = headstart;
            let mut out = vec![0.0; horizons.len()];
            for n in 1..=n_max {
                v = model.psi().eval(v) * model.likelihood_ratio(rng.normal());
                for (slot, &h) in out.iter_mut().zip(horizons) {
                    if h == n {
                        *slot = v - n as f64 - headstart;
                    }
                }
            }
            out
        })
        .collect();
    Ok(horizons
        .iter()
        .enumerate()
        .map(|(idx, &h)| {
            let xs: Vec<f64> = samples.iter().map(|s| s[idx]).collect();
            let mean = pairwise_sum(&xs) / paths as f64;
            let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
            let var = pairwise_sum(&dev) / (paths - 1) as f64;
            MonteCarloEstimate {
                quantity: Quantity::MartingaleGap(h),
                estimate: mean,
                std_error: (var / paths as f64).sqrt(),
                paths,
                seed,
                cap: n_max as u64,
                capped: 0,
                reliable: true,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_threshold_stops_every_path_at_one() {
        let m = ChangePointModel::new(0.7).unwrap();
        let run = simulate_run_length(&m, SimulationConfig::new(0.0, 0.0, 1000, 7)).unwrap();
        let arl = run.arl();
        assert_eq!(arl.estimate, 1.0);
        assert_eq!(arl.std_error, 0.0);
        assert_eq!(run.std_dev().estimate, 0.0);
    }

    #[test]
    fn same_seed_same_numbers() {
        let m = ChangePointModel::new(1.0).unwrap();
        let cfg = SimulationConfig::new(20.0, 0.0, 2000, 99);
        let a = simulate_run_length(&m, cfg).unwrap();
        let b = simulate_run_length(&m, cfg).unwrap();
        assert_eq!(a.run_lengths(), b.run_lengths());
        assert_eq!(a.arl().estimate.to_bits(), b.arl().estimate.to_bits());
        let c = simulate_run_length(&m, SimulationConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.run_lengths(), c.run_lengths());
    }

    #[test]
    fn uniforms_are_open_interval() {
        let mut rng = PathRng::new(key_from_seed(1), 0);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn normal_draws_have_unit_variance() {
        let mut rng = PathRng::new(key_from_seed(3), 11);
        let xs: Vec<f64> = (0..200_000).map(|_| rng.normal()).collect();
        let mean = pairwise_sum(&xs) / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn capped_paths_are_flagged() {
        let m = ChangePointModel::new(0.5).unwrap();
        let run = simulate_run_length(&m, SimulationConfig::new(1e6, 0.0, 200, 5).with_cap(10)).unwrap();
        assert_eq!(run.capped(), 200);
        assert!(!run.arl().reliable);
    }

    #[test]
    fn pfa_window_rules() {
        let m = ChangePointModel::new(1.0).unwrap();
        let run = simulate_run_length(&m, SimulationConfig::new(5.0, 0.0, 500, 1)).unwrap();
        assert!(run.conditional_pfa(0, 0).is_err());
        assert!(matches!(run.conditional_pfa(1_000_000, 1), Err(Error::UndefinedConditional { .. })));
        let p = run.conditional_pfa(0, 1).unwrap();
        assert!((p.estimate - (1.0 - run.survival(1).estimate)).abs() < 1e-15);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
    }

    #[test]
    fn histogram_counts_every_path() {
        let m = ChangePointModel::new(1.0).unwrap();
        let run = simulate_run_length(&m, SimulationConfig::new(10.0, 0.0, 300, 2)).unwrap();
        assert_eq!(run.histogram().values().sum::<usize>(), 300);
    }
}
