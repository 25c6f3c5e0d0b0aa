//! Partitions of `[0, A]` and the piecewise-linear hat basis over them.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::ChangePointModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Scheme {
    /// Chebyshev nodes stretched so the end nodes land on `0` and `A`.
    ChebyshevShifted,
    Uniform,
}

/// Ordered breakpoints `0 = x_0 < x_1 < ... < x_{N-1} = A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    threshold: f64,
    nodes: Vec<f64>,
    scheme: Scheme,
}

fn check_threshold(a: f64) -> Result<()> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Argument(format!("threshold must be positive and finite, got {a}")));
    }
    Ok(())
}

/// Shifted Chebyshev partition with `n` nodes on `[0, a]`.
///
/// ```text
/// x_{N-i} = A/2 * (1 + cos((2i - 1) pi / 2N) / cos(pi / 2N)),   i = 1..N
/// ```
pub fn chebyshev_partition(n: usize, a: f64) -> Result<Partition> {
    if n < 2 {
        return Err(Error::Argument(format!("partition needs at least 2 nodes, got {n}")));
    }
    check_threshold(a)?;
    let nf = n as f64;
    let denom = (PI / (2.0 * nf)).cos();
    let mut nodes = vec![0.0; n];
    for i in 1..=n {
        let c = ((2 * i - 1) as f64 * PI / (2.0 * nf)).cos() / denom;
        nodes[n - i] = 0.5 * a * (1.0 + c);
    }
    nodes[0] = 0.0;
    nodes[n - 1] = a;
    Partition::from_nodes(nodes, Scheme::ChebyshevShifted)
}

/// Uniform partition of `[0, a]` into `subintervals` pieces (`subintervals + 1` nodes).
pub fn uniform_partition(subintervals: usize, a: f64) -> Result<Partition> {
    if subintervals < 1 {
        return Err(Error::Argument("uniform partition needs at least one subinterval".into()));
    }
    check_threshold(a)?;
    let h = a / subintervals as f64;
    let mut nodes: Vec<f64> = (0..=subintervals).map(|k| k as f64 * h).collect();
    nodes[subintervals] = a;
    Partition::from_nodes(nodes, Scheme::Uniform)
}

impl Partition {
    /// Validates an explicit node list.
    pub fn from_nodes(nodes: Vec<f64>, scheme: Scheme) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::Argument(format!(
                "partition needs at least 2 nodes, got {}",
                nodes.len()
            )));
        }
        let a = *nodes.last().unwrap();
        check_threshold(a)?;
        if nodes[0] != 0.0 {
            return Err(Error::Argument(format!("first node must be 0, got {}", nodes[0])));
        }
        if let Some(w) = nodes.windows(2).find(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater)) {
            return Err(Error::Argument(format!(
                "nodes must be strictly increasing, found {} then {}",
                w[0], w[1]
            )));
        }
        Ok(Self { threshold: a, nodes, scheme })
    }

    /// Partition suited to `model`: Chebyshev nodes, plus a breakpoint at the
    /// kink of `psi` (CUSUM) when it falls inside `(0, A)`.
    pub fn for_model(model: &ChangePointModel, n: usize, a: f64) -> Result<Self> {
        let p = chebyshev_partition(n, a)?;
        match model.psi().kink() {
            Some(k) => Ok(p.with_breakpoint(k)),
            None => Ok(p),
        }
    }

    /// Inserts `x` as a node if it lies strictly inside `(0, A)` and is not already present.
    pub fn with_breakpoint(mut self, x: f64) -> Self {
        if x > 0.0 && x < self.threshold {
            if let Err(pos) = self.nodes.binary_search_by(|v| v.total_cmp(&x)) {
                self.nodes.insert(pos, x);
            }
        }
        self
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Largest subinterval length `h`.
    pub fn max_spacing(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn midpoints(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Index `k` of the subinterval `[x_k, x_{k+1}]` containing `x`; `x` must be in `[0, A]`.
    pub fn locate(&self, x: f64) -> usize {
        let last = self.nodes.len() - 2;
        match self.nodes.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => i.min(last),
            Err(i) => (i.max(1) - 1).min(last),
        }
    }

    pub fn basis(&self) -> HatBasis<'_> {
        HatBasis { partition: self }
    }
}

/// Hat functions `phi_j`, one per node, with `phi_j(x_k) = delta_jk`.
#[derive(Debug, Clone, Copy)]
pub struct HatBasis<'a> {
    partition: &'a Partition,
}

impl<'a> HatBasis<'a> {
    pub fn partition(&self) -> &'a Partition {
        self.partition
    }

    pub fn len(&self) -> usize {
        self.partition.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `phi_j(x)`; zero outside the support `[x_{j-1}, x_{j+1}]`.
    pub fn eval(&self, j: usize, x: f64) -> Result<f64> {
        let nodes = self.partition.nodes();
        let n = nodes.len();
        if j >= n {
            return Err(Error::Argument(format!("basis index {j} out of range for {n} nodes")));
        }
        let xj = nodes[j];
        if x == xj {
            return Ok(1.0);
        }
        if x < xj {
            if j == 0 || x <= nodes[j - 1] {
                return Ok(0.0);
            }
            let a = nodes[j - 1];
            Ok((x - a) / (xj - a))
        } else {
            if j == n - 1 || x >= nodes[j + 1] {
                return Ok(0.0);
            }
            let b = nodes[j + 1];
            Ok((b - x) / (b - xj))
        }
    }

    /// `sum_j coeffs[j] phi_j(x)` for `x` in `[0, A]`.
    pub fn interpolate(&self, coeffs: &[f64], x: f64) -> Result<f64> {
        let nodes = self.partition.nodes();
        if coeffs.len() != nodes.len() {
            return Err(Error::Argument(format!(
                "expected {} coefficients, got {}",
                nodes.len(),
                coeffs.len()
            )));
        }
        if !(x >= 0.0 && x <= self.partition.threshold()) {
            return Err(Error::Domain(format!(
                "interpolation point {x} outside [0, {}]; use the iterated solution instead",
                self.partition.threshold()
            )));
        }
        let k = self.partition.locate(x);
        let (a, b) = (nodes[k], nodes[k + 1]);
        if x == a {
            return Ok(coeffs[k]);
        }
        if x == b {
            return Ok(coeffs[k + 1]);
        }
        let t = (x - a) / (b - a);
        Ok(coeffs[k] * (1.0 - t) + coeffs[k + 1] * t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Psi;

    #[test]
    fn two_nodes_are_the_endpoints() {
        let p = chebyshev_partition(2, 74.76).unwrap();
        assert_eq!(p.nodes(), &[0.0, 74.76]);
    }

    #[test]
    fn three_nodes_put_the_middle_at_half() {
        let p = chebyshev_partition(3, 10.0).unwrap();
        assert_eq!(p.nodes()[0], 0.0);
        assert!((p.nodes()[1] - 5.0).abs() < 1e-14);
        assert_eq!(p.nodes()[2], 10.0);
    }

    #[test]
    fn four_nodes_by_hand() {
        let p = chebyshev_partition(4, 1.0).unwrap();
        let r = (3.0 * PI / 8.0).cos() / (PI / 8.0).cos();
        assert!((p.nodes()[1] - 0.5 * (1.0 - r)).abs() < 1e-15);
        assert!((p.nodes()[2] - 0.5 * (1.0 + r)).abs() < 1e-15);
        assert!(p.nodes().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn endpoints_exact_for_many_sizes() {
        for n in 2..300 {
            let p = chebyshev_partition(n, 747.62).unwrap();
            assert_eq!(p.nodes()[0], 0.0);
            assert_eq!(*p.nodes().last().unwrap(), 747.62);
            assert!(p.nodes().windows(2).all(|w| w[1] > w[0]), "n = {n}");
        }
    }

    #[test]
    fn bad_arguments() {
        assert!(chebyshev_partition(1, 1.0).is_err());
        assert!(chebyshev_partition(4, 0.0).is_err());
        assert!(chebyshev_partition(4, -2.0).is_err());
        assert!(uniform_partition(0, 1.0).is_err());
        assert!(Partition::from_nodes(vec![0.0, 2.0, 2.0], Scheme::Uniform).is_err());
    }

    #[test]
    fn hat_midpoint_value() {
        let p = chebyshev_partition(3, 10.0).unwrap();
        let p = Partition::from_nodes(vec![0.0, 5.0, 10.0], p.scheme()).unwrap();
        assert_eq!(p.basis().eval(1, 2.5).unwrap(), 0.5);
        assert_eq!(p.basis().eval(1, 5.0).unwrap(), 1.0);
        assert_eq!(p.basis().eval(0, 7.0).unwrap(), 0.0);
        assert!(p.basis().eval(3, 1.0).is_err());
    }

    #[test]
    fn interpolate_quadratic_samples() {
        let p = Partition::from_nodes(vec![0.0, 5.0, 10.0], Scheme::Uniform).unwrap();
        let v = p.basis().interpolate(&[0.0, 25.0, 100.0], 2.5).unwrap();
        assert_eq!(v, 12.5);
        assert!(p.basis().interpolate(&[0.0, 25.0, 100.0], 10.5).is_err());
        assert!(p.basis().interpolate(&[0.0, 25.0], 1.0).is_err());
    }

    #[test]
    fn cusum_partition_gets_a_node_at_the_kink() {
        let m = ChangePointModel::with_psi(1.0, Psi::Cusum).unwrap();
        let p = Partition::for_model(&m, 16, 20.0).unwrap();
        assert_eq!(p.len(), 17);
        assert!(p.nodes().contains(&1.0));
        // below the kink nothing is inserted
        let p = Partition::for_model(&m, 16, 0.5).unwrap();
        assert_eq!(p.len(), 16);
    }

    #[test]
    fn locate_boundaries() {
        let p = uniform_partition(4, 4.0).unwrap();
        assert_eq!(p.locate(0.0), 0);
        assert_eq!(p.locate(1.0), 1);
        assert_eq!(p.locate(3.5), 3);
        assert_eq!(p.locate(4.0), 3);
    }
}
