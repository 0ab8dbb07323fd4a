//! Concept discovery for image classifiers.
//!
//! Feature activations of a convolutional network, shaped
//! `(images, channels, rows, cols)`, are flattened into a channels x
//! locations matrix and factorized into `k` nonnegative topics, either
//! unsupervised ([`nmf`]) or guided by image labels ([`ssnmf`]). The weight
//! matrix reshapes back into one spatial heat map per image and topic,
//! which [`heatmap`] upsamples and paints over the input images. Held-out
//! images are mapped onto frozen topics with [`nnls`].

// `!(v >= 0.0)` is used deliberately throughout: unlike `v < 0.0` it also
// rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod fixtures;
pub mod heatmap;
pub mod manifest;
pub mod model;
pub mod nmf;
pub mod nnls;
pub mod npy;
pub mod pipeline;
pub mod ssnmf;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{FactorModel, SavedModel};
pub use nmf::{nmf_fit, nmf_init, nmf_step, NmfConfig};
pub use nnls::{project, project_features, NnlsConfig};
pub use ssnmf::{build_label_matrix, ssnmf_fit, ssnmf_step, LabelMatrix, SsnmfConfig};
pub use tensor::{flatten_features, unflatten_weights, DataMatrix, FeatureTensor, GridDims};
