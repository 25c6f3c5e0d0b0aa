//! Pre-change run-length distribution of the generalized Shiryaev-Roberts
//! (GSR) detection procedure.
//!
//! The ARL to false alarm, the second moment and the survival function all
//! solve renewal equations `u(x) = v(x) + int_0^A K_inf(x, y) u(y) dy`. They are
//! discretised by collocation on a piecewise-linear hat basis whose matrix
//! entries are available in closed form ([`kernel::assemble_collocation`]),
//! with the classical midpoint/Markov-chain scheme as a baseline and a Monte
//! Carlo simulator ([`oracle`]) as an independent check.

pub mod analysis;
pub mod error;
pub mod grid;
pub mod kernel;
pub mod model;
pub mod oracle;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{chebyshev_partition, uniform_partition, HatBasis, Partition, Scheme};
pub use kernel::{assemble_collocation, assemble_midpoint, KernelMatrix, Method};
pub use model::{ChangePointModel, Measure, Psi};
pub use solver::{
    solve_arl, solve_arl_with, solve_generic, solve_second_moment, survival_series, Factorization, Moments,
    RunLengthSolution, SolutionKind, SurvivalOptions, SurvivalSeries, Termination,
};
