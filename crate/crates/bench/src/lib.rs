//! Benchmark fixtures shared by the criterion targets in `benches/`.

use gsr_core::analysis::build_matrix;
use gsr_core::{ChangePointModel, KernelMatrix, Method};

/// Hat-collocation matrix for `theta = 0.5`, `A = 74.76`.
pub fn moderate_change(n: usize) -> (ChangePointModel, KernelMatrix) {
    let model = ChangePointModel::new(0.5).expect("valid theta");
    let matrix = build_matrix(&model, 74.76, n, Method::CollocationHat).expect("valid partition");
    (model, matrix)
}
