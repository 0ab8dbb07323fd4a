//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use nmfx::{DataMatrix, FactorModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen::<f64>())
}

pub fn random_data(seed: u64, rows: usize, cols: usize) -> DataMatrix {
    DataMatrix::new(uniform(&mut rng(seed), rows, cols)).unwrap()
}

pub fn frobenius_sq(m: ArrayView2<'_, f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// ‖X − AS‖_F / ‖X‖_F.
pub fn relative_error(x: &DataMatrix, model: &FactorModel) -> f64 {
    let residual = &x.view() - &model.topics.dot(&model.weights);
    (frobenius_sq(residual.view()) / frobenius_sq(x.view())).sqrt()
}

/// Squared Frobenius error of the best rank-k approximation (Eckart–Young),
/// from singular values computed by nalgebra.
pub fn truncated_svd_error(x: ArrayView2<'_, f64>, k: usize) -> f64 {
    let m = DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| x[[r, c]]);
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.iter().skip(k).map(|s| s * s).sum()
}

/// Largest relative increase between consecutive trace entries (≤ 0 when
/// the trace never rises).
pub fn worst_relative_rise(trace: &[f64]) -> f64 {
    trace
        .windows(2)
        .map(|w| (w[1] - w[0]) / w[0].abs().max(f64::MIN_POSITIVE))
        .fold(f64::NEG_INFINITY, f64::max)
}
