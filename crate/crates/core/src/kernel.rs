//! Discretised integral operator `(K u)(x) = int_0^A K_inf(x, y) u(y) dy`.
//!
//! Two discretisations are provided:
//!
//! * [`Method::CollocationHat`]: hat basis on the partition, collocation at the
//!   nodes. Entries are integrals of the kernel against a hat function and are
//!   evaluated in closed form. On a subinterval `[a, b]` with scale `s = psi(x)`,
//!
//!   ```text
//!   int_a^b y K_inf(x, y) dy = s (P_0(b/s) - P_0(a/s))
//!   int_a^b   K_inf(x, y) dy =    P_inf(b/s) - P_inf(a/s)
//!   ```
//!
//!   so both the rising and falling halves of every hat reduce to cdf values.
//! * [`Method::Midpoint`]: piecewise-constant basis on a uniform partition with
//!   collocation at the subinterval midpoints; the classical Markov-chain
//!   approximation.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Partition, Scheme};
use crate::model::{ChangePointModel, Measure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Method {
    CollocationHat,
    Midpoint,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::CollocationHat => "hat",
            Method::Midpoint => "midpoint",
        }
    }
}

/// Dense `N x N` matrix of the discretised operator, row-major.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    entries: Vec<f64>,
    n: usize,
    method: Method,
    partition: Partition,
    collocation_points: Vec<f64>,
    model: ChangePointModel,
}

/// Row of the hat-collocation operator at a point with scale `s = psi(x)`.
fn collocation_row(model: &ChangePointModel, nodes: &[f64], s: f64, row: &mut [f64]) {
    row.fill(0.0);
    if s == 0.0 {
        // next state is 0 almost surely
        row[0] = 1.0;
        return;
    }
    let mut lo_inf = model.lr_tail(nodes[0] / s, Measure::PreChange);
    let mut lo_zero = model.lr_tail(nodes[0] / s, Measure::PostChange);
    for k in 0..nodes.len() - 1 {
        let (lo, hi) = (nodes[k], nodes[k + 1]);
        let hi_inf = model.lr_tail(hi / s, Measure::PreChange);
        let hi_zero = model.lr_tail(hi / s, Measure::PostChange);
        let d_inf = lo_inf.mass_to(hi_inf);
        let first_moment = s * lo_zero.mass_to(hi_zero);
        lo_inf = hi_inf;
        lo_zero = hi_zero;
        if d_inf == 0.0 {
            continue;
        }
        let h = hi - lo;
        // rising half of phi_{k+1}, falling half of phi_k
        let rising = (first_moment - lo * d_inf) / h;
        let falling = (hi * d_inf - first_moment) / h;
        row[k + 1] += rising.max(0.0);
        row[k] += falling.max(0.0);
    }
}

/// Row of the midpoint operator: cdf increments over each subinterval.
fn midpoint_row(model: &ChangePointModel, nodes: &[f64], s: f64, row: &mut [f64]) {
    if s == 0.0 {
        row.fill(0.0);
        row[0] = 1.0;
        return;
    }
    let mut lo = model.lr_tail(nodes[0] / s, Measure::PreChange);
    for (j, &x) in nodes[1..].iter().enumerate() {
        let hi = model.lr_tail(x / s, Measure::PreChange);
        row[j] = lo.mass_to(hi);
        lo = hi;
    }
}

fn assemble(
    model: &ChangePointModel,
    partition: &Partition,
    method: Method,
    points: Vec<f64>,
) -> Result<KernelMatrix> {
    let n = points.len();
    let scales = points.iter().map(|&z| model.scale(z)).collect::<Result<Vec<_>>>()?;
    let nodes = partition.nodes();
    let mut entries = vec![0.0; n * n];
    entries.par_chunks_mut(n).zip(scales.par_iter()).for_each(|(row, &s)| match method {
        Method::CollocationHat => collocation_row(model, nodes, s, row),
        Method::Midpoint => midpoint_row(model, nodes, s, row),
    });
    let matrix = KernelMatrix {
        entries,
        n,
        method,
        partition: partition.clone(),
        collocation_points: points,
        model: model.clone(),
    };
    matrix.validate()?;
    Ok(matrix)
}

/// Hat-basis collocation matrix with closed-form entries.
pub fn assemble_collocation(model: &ChangePointModel, partition: &Partition) -> Result<KernelMatrix> {
    assemble(model, partition, Method::CollocationHat, partition.nodes().to_vec())
}

/// Midpoint-rule matrix on a uniform partition with `N` subintervals.
pub fn assemble_midpoint(model: &ChangePointModel, partition: &Partition) -> Result<KernelMatrix> {
    if partition.scheme() != Scheme::Uniform {
        return Err(Error::Argument("the midpoint method needs a uniform partition".into()));
    }
    assemble(model, partition, Method::Midpoint, partition.midpoints())
}

impl KernelMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn model(&self) -> &ChangePointModel {
        &self.model
    }

    pub fn threshold(&self) -> f64 {
        self.partition.threshold()
    }

    /// Nodes for the hat method, subinterval midpoints for the midpoint method.
    pub fn collocation_points(&self) -> &[f64] {
        &self.collocation_points
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.entries.chunks(self.n).map(|r| r.iter().sum()).collect()
    }

    /// `max_i sum_j K_ij`, the infinity norm since all entries are nonnegative.
    pub fn norm_inf(&self) -> f64 {
        self.row_sums().into_iter().fold(0.0, f64::max)
    }

    /// `P_inf(Λ > A / psi(z_i))` per row: one minus the exact row sum, from the upper tail.
    pub fn exit_probabilities(&self) -> Vec<f64> {
        let a = self.threshold();
        self.collocation_points
            .iter()
            .map(|&z| {
                let s = self.model.psi().eval(z);
                if s == 0.0 { 0.0 } else { self.model.lr_mass(a / s, f64::INFINITY, Measure::PreChange) }
            })
            .collect()
    }

    /// Operator row `w(x)` at an arbitrary state `x`: `w_j = int K_inf(x, y) phi_j(y) dy`.
    ///
    /// `w(z_i)` reproduces row `i` of the matrix.
    pub fn operator_row(&self, x: f64) -> Result<Vec<f64>> {
        if x.is_nan() || x < -1.0 {
            return Err(Error::Domain(format!("state must be >= -1, got {x}")));
        }
        let s = self.model.scale(x)?;
        let mut row = vec![0.0; self.n];
        match self.method {
            Method::CollocationHat => collocation_row(&self.model, self.partition.nodes(), s, &mut row),
            Method::Midpoint => midpoint_row(&self.model, self.partition.nodes(), s, &mut row),
        }
        Ok(row)
    }

    /// `K v`, rows accumulated left to right.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.mul_vec_into(v, &mut out);
        out
    }

    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.n);
        let n = self.n;
        let f = |(row, o): (&[f64], &mut f64)| {
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        };
        if n >= 512 {
            self.entries.par_chunks(n).zip(out.par_iter_mut()).for_each(f);
        } else {
            self.entries.chunks(n).zip(out.iter_mut()).for_each(f);
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(pos) = self.entries.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Numeric(format!(
                "kernel entry ({}, {}) = {} is not a finite nonnegative number",
                pos / self.n,
                pos % self.n,
                self.entries[pos]
            )));
        }
        // A row sum is a probability P_inf(A / psi(z_i)); it can round to 1 in
        // the far tail but must never exceed it.
        for (i, s) in self.row_sums().into_iter().enumerate() {
            if s > 1.0 + 1e-12 {
                return Err(Error::Numeric(format!("row {i} sums to {s} > 1")));
            }
        }
        Ok(())
    }

    /// Row-major CSV, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        for row in self.entries.chunks(self.n) {
            let line = row.iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(",");
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{chebyshev_partition, uniform_partition};

    #[test]
    fn collocation_row_sums_are_one_step_survival() {
        let model = ChangePointModel::new(0.5).unwrap();
        let p = chebyshev_partition(64, 74.76).unwrap();
        let k = assemble_collocation(&model, &p).unwrap();
        for (i, s) in k.row_sums().iter().enumerate() {
            let x = p.nodes()[i];
            let expected = model.lr_cdf(74.76 / (1.0 + x), Measure::PreChange).unwrap();
            assert!((s - expected).abs() < 1e-12, "row {i}: {s} vs {expected}");
        }
        // P_inf(A) = 1 - 3e-19 rounds to one at the origin; the exit
        // probabilities themselves stay strictly positive
        assert!(k.norm_inf() <= 1.0 + 4.0 * f64::EPSILON);
        assert!(k.exit_probabilities().iter().all(|&q| q > 0.0));
    }

    #[test]
    fn tiny_threshold_gives_vanishing_matrix() {
        let model = ChangePointModel::new(0.5).unwrap();
        let p = chebyshev_partition(2, 1e-8).unwrap();
        let k = assemble_collocation(&model, &p).unwrap();
        let bound = model.lr_cdf(1e-8, Measure::PreChange).unwrap();
        assert!(k.entries().iter().all(|&v| v <= bound + 1e-300));
        assert!(bound < 1e-100);
    }

    #[test]
    fn midpoint_entry_by_hand() {
        let model = ChangePointModel::new(0.5).unwrap();
        let p = uniform_partition(4, 10.0).unwrap();
        let k = assemble_midpoint(&model, &p).unwrap();
        // z_1 = 3.75, subinterval 2 is [5, 7.5]
        let s = 1.0 + 3.75;
        let expected = model.lr_cdf(7.5 / s, Measure::PreChange).unwrap()
            - model.lr_cdf(5.0 / s, Measure::PreChange).unwrap();
        assert!((k.entry(1, 2) - expected).abs() < 1e-15);
        assert!(k.entries().iter().all(|&v| (0.0..=1.0).contains(&v)));
        for (i, s) in k.row_sums().iter().enumerate() {
            let z = k.collocation_points()[i];
            let expected = model.lr_cdf(10.0 / (1.0 + z), Measure::PreChange).unwrap();
            assert!((s - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn midpoint_rejects_chebyshev_partition() {
        let model = ChangePointModel::new(0.5).unwrap();
        let p = chebyshev_partition(8, 10.0).unwrap();
        assert!(assemble_midpoint(&model, &p).is_err());
    }

    #[test]
    fn operator_row_reproduces_matrix_rows() {
        let model = ChangePointModel::new(1.0).unwrap();
        let p = chebyshev_partition(16, 56.0).unwrap();
        let k = assemble_collocation(&model, &p).unwrap();
        for i in [0, 5, 15] {
            let w = k.operator_row(p.nodes()[i]).unwrap();
            assert_eq!(w.as_slice(), k.row(i));
        }
        assert!(k.operator_row(-1.5).is_err());
        // headstart -1 restarts from 0 surely
        let w = k.operator_row(-1.0).unwrap();
        assert_eq!(w[0], 1.0);
        assert!(w[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parallel_assembly_is_deterministic() {
        let model = ChangePointModel::new(0.5).unwrap();
        let p = chebyshev_partition(600, 74.76).unwrap();
        let a = assemble_collocation(&model, &p).unwrap();
        let b = assemble_collocation(&model, &p).unwrap();
        assert!(a.entries().iter().zip(b.entries()).all(|(x, y)| x.to_bits() == y.to_bits()));
        for i in (0..600).step_by(97) {
            let w = a.operator_row(p.nodes()[i]).unwrap();
            assert_eq!(w.as_slice(), a.row(i));
        }
    }

    #[test]
    fn row_sums_grow_with_threshold() {
        let model = ChangePointModel::new(0.5).unwrap();
        let mut prev = 0.0;
        for a in [0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 80.0, 300.0] {
            let p = chebyshev_partition(12, a).unwrap();
            let k = assemble_collocation(&model, &p).unwrap();
            let s0 = k.row_sums()[0];
            assert!(s0 >= prev - 1e-15, "A = {a}: {s0} < {prev}");
            prev = s0;
        }
    }

    #[test]
    fn csv_dump_shape() {
        let model = ChangePointModel::new(0.5).unwrap();
        let p = chebyshev_partition(3, 10.0).unwrap();
        let k = assemble_collocation(&model, &p).unwrap();
        let mut buf = Vec::new();
        k.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let vals: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(vals.len(), 3);
        for (j, v) in vals.iter().enumerate() {
            assert_eq!(*v, k.entry(1, j));
        }
    }
}
