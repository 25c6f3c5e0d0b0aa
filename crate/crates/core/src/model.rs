//! Gaussian mean-shift observation model.
//!
//! Observations are `N(0, 1)` before the change and `N(theta, 1)` after it, so
//! the one-step likelihood ratio `Λ = exp(theta X - theta^2 / 2)` is log-normal
//! under both measures:
//!
//! ```text
//! log Λ ~ N(-theta^2 / 2, theta^2)   pre-change
//! log Λ ~ N(+theta^2 / 2, theta^2)   post-change
//! ```
//!
//! The detection statistic obeys `V_{n+1} = psi(V_n) Λ_{n+1}`; the transition
//! kernel is `K_d(x, y) = d/dy P_d(y / psi(x))`. Because `dP_0(t) = t dP_inf(t)`,
//! the two kernels satisfy `psi(x) K_0(x, y) = y K_inf(x, y)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::sync::Arc;

use libm::erfc;

use crate::error::{Error, Result};

/// Which probability measure the observations are drawn under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Measure {
    /// No change ever occurs (`d = inf`).
    PreChange,
    /// The change is in effect from the first observation (`d = 0`).
    PostChange,
}

/// The map `psi` in `V_{n+1} = psi(V_n) Λ_{n+1}`.
#[derive(Clone)]
pub enum Psi {
    /// Generalized Shiryaev-Roberts: `psi(x) = 1 + x`.
    Gsr,
    /// CUSUM in multiplicative form: `psi(x) = max(1, x)`.
    Cusum,
    /// Any nonnegative function. Negative values are rejected at evaluation.
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Psi {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Psi::Gsr => 1.0 + x,
            Psi::Cusum => x.max(1.0),
            Psi::Custom(f) => f(x),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Psi::Gsr => "gsr",
            Psi::Cusum => "cusum",
            Psi::Custom(_) => "custom",
        }
    }

    /// Point where `psi` has a kink and the solution loses smoothness.
    pub fn kink(&self) -> Option<f64> {
        match self {
            Psi::Cusum => Some(1.0),
            _ => None,
        }
    }
}

impl fmt::Debug for Psi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Pre/post-change Gaussian model with mean shift `theta > 0`.
///
/// Immutable after construction.
#[derive(Debug, Clone)]
pub struct ChangePointModel {
    theta: f64,
    psi: Psi,
    label: String,
}

impl ChangePointModel {
    /// GSR model with shift `theta`.
    pub fn new(theta: f64) -> Result<Self> {
        Self::with_psi(theta, Psi::Gsr)
    }

    pub fn with_psi(theta: f64, psi: Psi) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::Argument(format!("theta must be finite, got {theta}")));
        }
        if theta == 0.0 {
            return Err(Error::Argument(
                "theta = 0 means no change; pre- and post-change laws coincide".into(),
            ));
        }
        if theta < 0.0 {
            return Err(Error::Argument(format!(
                "theta = {theta} < 0: the kernel is symmetric in the sign of theta, pass |theta| = {} instead",
                -theta
            )));
        }
        let label = format!("{}(theta={theta})", psi.name());
        Ok(Self { theta, psi, label })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn psi(&self) -> &Psi {
        &self.psi
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `psi(x)`, checked for nonnegativity.
    pub fn scale(&self, x: f64) -> Result<f64> {
        if let Psi::Gsr = self.psi {
            if x < -1.0 {
                return Err(Error::Domain(format!("GSR state must be >= -1, got {x}")));
            }
        }
        let s = self.psi.eval(x);
        if s.is_nan() || s < 0.0 {
            return Err(Error::Domain(format!("psi({x}) = {s} is not nonnegative")));
        }
        Ok(s)
    }

    /// Standardised argument of the log-normal cdf at `t > 0`.
    #[inline]
    fn z_score(&self, t: f64, measure: Measure) -> f64 {
        let half = 0.5 * self.theta * self.theta;
        match measure {
            Measure::PreChange => (t.ln() + half) / self.theta,
            Measure::PostChange => (t.ln() - half) / self.theta,
        }
    }

    /// `P_d(Λ <= t)`.
    pub fn lr_cdf(&self, t: f64, measure: Measure) -> Result<f64> {
        if t.is_nan() || t < 0.0 {
            return Err(Error::Domain(format!("likelihood ratio cdf needs t >= 0, got {t}")));
        }
        Ok(self.lr_cdf_unchecked(t, measure))
    }

    #[inline]
    pub(crate) fn lr_cdf_unchecked(&self, t: f64, measure: Measure) -> f64 {
        if t <= 0.0 {
            0.0
        } else if t == f64::INFINITY {
            1.0
        } else {
            std_normal_cdf(self.z_score(t, measure))
        }
    }

    /// `P_d(lo < Λ <= hi)` for `0 <= lo <= hi`, computed from the tail that
    /// avoids cancellation.
    #[inline]
    pub(crate) fn lr_mass(&self, lo: f64, hi: f64, measure: Measure) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let za = if lo <= 0.0 { f64::NEG_INFINITY } else { self.z_score(lo, measure) };
        let zb = if hi == f64::INFINITY { f64::INFINITY } else { self.z_score(hi, measure) };
        std_normal_mass(za, zb)
    }

    /// Tail-side cdf value of `Λ` at `t`, for building many increments from one evaluation per point.
    #[inline]
    pub(crate) fn lr_tail(&self, t: f64, measure: Measure) -> TailValue {
        let z = if t <= 0.0 {
            f64::NEG_INFINITY
        } else if t == f64::INFINITY {
            f64::INFINITY
        } else {
            self.z_score(t, measure)
        };
        TailValue::new(z)
    }

    /// Transition density `K_d(x, y) = d/dy P_d(y / psi(x))`.
    pub fn kernel_density(&self, x: f64, y: f64, measure: Measure) -> Result<f64> {
        let s = self.scale(x)?;
        if y.is_nan() || y < 0.0 {
            return Err(Error::Domain(format!("kernel needs y >= 0, got {y}")));
        }
        if s == 0.0 {
            return Err(Error::Domain(format!(
                "psi({x}) = 0: the transition law is a point mass, no density"
            )));
        }
        if y == 0.0 {
            return Ok(0.0);
        }
        let z = self.z_score(y / s, measure);
        Ok((-0.5 * z * z).exp() / ((2.0 * PI).sqrt() * self.theta * y))
    }

    /// One-step likelihood ratio for observation `x`.
    #[inline]
    pub fn likelihood_ratio(&self, x: f64) -> f64 {
        (self.theta * x - 0.5 * self.theta * self.theta).exp()
    }
}

/// `Phi(z)` below the median, `1 - Phi(z)` at or above it.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TailValue {
    upper: bool,
    value: f64,
}

impl TailValue {
    #[inline]
    fn new(z: f64) -> Self {
        if z >= 0.0 {
            Self { upper: true, value: std_normal_sf(z) }
        } else {
            Self { upper: false, value: std_normal_cdf(z) }
        }
    }

    /// `Phi(zb) - Phi(za)` for `za <= zb`.
    #[inline]
    pub(crate) fn mass_to(self, hi: TailValue) -> f64 {
        match (self.upper, hi.upper) {
            (true, true) => self.value - hi.value,
            (false, false) => hi.value - self.value,
            (false, true) => (1.0 - hi.value) - self.value,
            (true, false) => 0.0,
        }
    }
}

#[inline]
pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

#[inline]
pub(crate) fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

/// `Phi(zb) - Phi(za)`, evaluated on whichever side keeps both terms small.
#[inline]
pub(crate) fn std_normal_mass(za: f64, zb: f64) -> f64 {
    if zb <= za {
        0.0
    } else if za >= 0.0 {
        std_normal_sf(za) - std_normal_sf(zb)
    } else {
        std_normal_cdf(zb) - std_normal_cdf(za)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_at_zero_is_zero() {
        let m = ChangePointModel::new(0.5).unwrap();
        assert_eq!(m.lr_cdf(0.0, Measure::PreChange).unwrap(), 0.0);
        assert_eq!(m.lr_cdf(0.0, Measure::PostChange).unwrap(), 0.0);
    }

    #[test]
    fn median_is_exp_of_log_mean() {
        let m = ChangePointModel::new(0.5).unwrap();
        let p = m.lr_cdf((-0.125f64).exp(), Measure::PreChange).unwrap();
        assert!((p - 0.5).abs() < 1e-15, "{p}");
        let p = m.lr_cdf(0.125f64.exp(), Measure::PostChange).unwrap();
        assert!((p - 0.5).abs() < 1e-15, "{p}");
    }

    #[test]
    fn cdf_at_one_for_unit_shift() {
        // Phi(0.5) from a 30-digit table: 0.691462461274013103637704610608
        let m = ChangePointModel::new(1.0).unwrap();
        let p = m.lr_cdf(1.0, Measure::PreChange).unwrap();
        assert!((p - 0.691_462_461_274_013_1).abs() < 1e-15, "{p}");
    }

    #[test]
    fn negative_argument_is_a_domain_error() {
        let m = ChangePointModel::new(0.5).unwrap();
        assert!(matches!(m.lr_cdf(-1e-300, Measure::PreChange), Err(Error::Domain(_))));
        assert!(matches!(m.kernel_density(-1.0, 1.0, Measure::PreChange), Err(Error::Domain(_))));
        assert!(matches!(m.kernel_density(0.0, -0.5, Measure::PreChange), Err(Error::Domain(_))));
    }

    #[test]
    fn rejects_nonpositive_theta() {
        assert!(ChangePointModel::new(0.0).is_err());
        let err = ChangePointModel::new(-0.5).unwrap_err().to_string();
        assert!(err.contains("symmetric"), "{err}");
        assert!(ChangePointModel::new(f64::NAN).is_err());
    }

    #[test]
    fn kernel_vanishes_at_origin() {
        let m = ChangePointModel::new(1.0).unwrap();
        assert_eq!(m.kernel_density(0.0, 0.0, Measure::PreChange).unwrap(), 0.0);
    }

    #[test]
    fn kernel_value_by_hand() {
        // y = 1, x = 0, theta = 1: z = 0.5, density = phi(0.5)
        let m = ChangePointModel::new(1.0).unwrap();
        let k = m.kernel_density(0.0, 1.0, Measure::PreChange).unwrap();
        let expected = (-0.125f64).exp() / (2.0 * PI).sqrt();
        assert!((k - expected).abs() < 1e-15);
        assert!((k - 0.352_065_3).abs() < 1e-7);
    }

    #[test]
    fn change_of_measure_identity_at_a_point() {
        let m = ChangePointModel::new(0.5).unwrap();
        let (x, y) = (1.3, 2.7);
        let k0 = m.kernel_density(x, y, Measure::PostChange).unwrap();
        let kinf = m.kernel_density(x, y, Measure::PreChange).unwrap();
        let lhs = (1.0 + x) * k0;
        let rhs = y * kinf;
        assert!(((lhs - rhs) / rhs).abs() < 1e-13);
    }

    #[test]
    fn cusum_psi_is_max_one() {
        let m = ChangePointModel::with_psi(1.0, Psi::Cusum).unwrap();
        assert_eq!(m.scale(0.3).unwrap(), 1.0);
        assert_eq!(m.scale(2.5).unwrap(), 2.5);
        assert_eq!(m.psi().kink(), Some(1.0));
    }

    #[test]
    fn custom_psi_negative_values_rejected() {
        let m = ChangePointModel::with_psi(1.0, Psi::Custom(Arc::new(|x| x - 1.0))).unwrap();
        assert!(m.scale(0.5).is_err());
        assert_eq!(m.scale(3.0).unwrap(), 2.0);
    }

    #[test]
    fn tail_values_reproduce_masses() {
        let m = ChangePointModel::new(0.3).unwrap();
        let pts = [0.0, 0.1, 0.9, 1.0, 1.2, 7.0, f64::INFINITY];
        for w in pts.windows(2) {
            for measure in [Measure::PreChange, Measure::PostChange] {
                let a = m.lr_tail(w[0], measure);
                let b = m.lr_tail(w[1], measure);
                let direct = m.lr_mass(w[0], w[1], measure);
                assert!((a.mass_to(b) - direct).abs() < 1e-16, "{w:?}");
            }
        }
    }

    #[test]
    fn mass_matches_cdf_difference() {
        let m = ChangePointModel::new(0.7).unwrap();
        for &(a, b) in &[(0.0, 0.3), (0.2, 1.1), (2.0, 9.0), (5.0, f64::INFINITY)] {
            let direct = m.lr_cdf_unchecked(b, Measure::PreChange) - m.lr_cdf_unchecked(a, Measure::PreChange);
            let mass = m.lr_mass(a, b, Measure::PreChange);
            assert!((direct - mass).abs() < 1e-15, "{a} {b}");
        }
    }
}
