//! End-to-end helpers: features in, heat tensors and topic masks out.

use ndarray::{Array4, ArrayView4};

use crate::error::Result;
use crate::heatmap::normalize_heat;
use crate::model::FactorModel;
use crate::nmf::{nmf_fit, NmfConfig};
use crate::ssnmf::{build_label_matrix, ssnmf_fit, SsnmfConfig};
use crate::tensor::{flatten_features, unflatten_weights, FeatureTensor};

/// Cut-off applied to normalized heat when binarizing topic masks.
pub const MASK_THRESHOLD: f64 = 0.5;

/// Fits NMF, or SSNMF when `labels` are given with a positive `lambda`.
pub fn factorize(
    features: &FeatureTensor,
    cfg: &NmfConfig,
    labels: Option<(&[Option<usize>], Vec<String>)>,
    lambda: f64,
) -> Result<FactorModel> {
    let x = flatten_features(features);
    match labels {
        Some((per_image, names)) if lambda > 0.0 => {
            let y = build_label_matrix(per_image, names, features.grid())?;
            ssnmf_fit(&x, &y, &SsnmfConfig::new(cfg.clone()).with_lambda(lambda))
        }
        _ => nmf_fit(&x, cfg),
    }
}

/// The model's weight matrix as an `(n, K, d1, d2)` heat tensor.
pub fn heat_tensor(model: &FactorModel, features: &FeatureTensor) -> Result<Array4<f64>> {
    unflatten_weights(model.weights.view(), features.grid())
}

/// Per-image normalized heat thresholded at [`MASK_THRESHOLD`].
pub fn topic_masks(heat: ArrayView4<'_, f64>) -> Result<Array4<bool>> {
    Ok(normalize_heat(heat)?.mapv(|v| v >= MASK_THRESHOLD))
}
