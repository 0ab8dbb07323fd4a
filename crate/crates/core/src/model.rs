//! Learned factor models and their on-disk directory layout.
//!
//! A model directory holds `A.npy` (channels x k topics), `S.npy` (k x
//! locations), `B.npy` when the model was trained with labels, and
//! `meta.json` carrying everything needed to replay the run.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Ix2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nmf::NmfConfig;
use crate::npy::{self, NpyArray};
use crate::tensor::GridDims;

/// Topic matrix `A`, weight matrix `S` and, for supervised fits, the
/// classification matrix `B`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorModel {
    pub topics: Array2<f64>,
    pub weights: Array2<f64>,
    pub classifier: Option<Array2<f64>>,
    /// Objective at initialization followed by one value per iteration.
    pub objective_trace: Vec<f64>,
    pub iterations_run: usize,
    pub config: NmfConfig,
    /// Label-term weight; `None` for unsupervised fits.
    pub lambda: Option<f64>,
}

impl FactorModel {
    pub fn k(&self) -> usize {
        self.topics.ncols()
    }

    pub fn channels(&self) -> usize {
        self.topics.nrows()
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial objective")
    }

    pub fn method(&self) -> Method {
        if self.classifier.is_some() {
            Method::Ssnmf
        } else {
            Method::Nmf
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nmf,
    Ssnmf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub format_version: u32,
    pub method: Method,
    pub config: NmfConfig,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda: Option<f64>,
    pub channels: usize,
    pub dims: GridDims,
    pub label_names: Vec<String>,
    pub iterations_run: usize,
    pub objective_trace: Vec<f64>,
}

/// A factor model together with the layout of the data it was fit on.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedModel {
    pub model: FactorModel,
    pub dims: GridDims,
    pub label_names: Vec<String>,
}

const FORMAT_VERSION: u32 = 1;

fn save_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    npy::save_array(path, &NpyArray::F64(m.clone().into_dyn()))
}

fn load_matrix(path: &Path) -> Result<Array2<f64>> {
    let a = npy::load_array(path)?;
    let shape = a.shape().to_vec();
    a.into_f64()
        .into_dimensionality::<Ix2>()
        .map_err(|_| Error::shape(format!("rank-2 array in {}", path.display()), format!("{shape:?}")))
}

impl SavedModel {
    pub fn meta(&self) -> ModelMeta {
        ModelMeta {
            format_version: FORMAT_VERSION,
            method: self.model.method(),
            config: self.model.config.clone(),
            lambda: self.model.lambda,
            channels: self.model.channels(),
            dims: self.dims,
            label_names: self.label_names.clone(),
            iterations_run: self.model.iterations_run,
            objective_trace: self.model.objective_trace.clone(),
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_matrix(&dir.join("A.npy"), &self.model.topics)?;
        save_matrix(&dir.join("S.npy"), &self.model.weights)?;
        let b_path = dir.join("B.npy");
        match &self.model.classifier {
            Some(b) => save_matrix(&b_path, b)?,
            None if b_path.exists() => fs::remove_file(&b_path).map_err(|e| Error::io(&b_path, e))?,
            None => {}
        }
        let meta_path = dir.join("meta.json");
        let mut text = serde_json::to_string_pretty(&self.meta()).map_err(|e| Error::Json {
            path: meta_path.clone(),
            source: e,
        })?;
        text.push('\n');
        fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path = dir.join("meta.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: ModelMeta = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: meta_path.clone(),
            source: e,
        })?;
        let topics = load_matrix(&dir.join("A.npy"))?;
        let weights = load_matrix(&dir.join("S.npy"))?;
        let classifier = match meta.method {
            Method::Ssnmf => Some(load_matrix(&dir.join("B.npy"))?),
            Method::Nmf => None,
        };
        let k = meta.config.k;
        if topics.dim() != (meta.channels, k) {
            return Err(Error::shape(format!("A of shape ({}, {k})", meta.channels), format!("{:?}", topics.dim())));
        }
        if weights.dim() != (k, meta.dims.locations()) {
            return Err(Error::shape(
                format!("S of shape ({k}, {})", meta.dims.locations()),
                format!("{:?}", weights.dim()),
            ));
        }
        if let Some(b) = &classifier {
            if b.dim() != (meta.label_names.len(), k) {
                return Err(Error::shape(
                    format!("B of shape ({}, {k})", meta.label_names.len()),
                    format!("{:?}", b.dim()),
                ));
            }
        }
        for (name, m) in [("A", Some(&topics)), ("S", Some(&weights)), ("B", classifier.as_ref())] {
            if let Some(m) = m {
                if let Some((index, &value)) = m.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
                    return Err(Error::InvalidInput(format!(
                        "{name}.npy entry {index} is {value}, factors must be nonnegative"
                    )));
                }
            }
        }
        Ok(SavedModel {
            model: FactorModel {
                topics,
                weights,
                classifier,
                objective_trace: meta.objective_trace,
                iterations_run: meta.iterations_run,
                config: meta.config,
                lambda: meta.lambda,
            },
            dims: meta.dims,
            label_names: meta.label_names,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample(classifier: bool) -> SavedModel {
        SavedModel {
            model: FactorModel {
                topics: array![[0.25, 1.0], [0.75, 0.0]],
                weights: array![[1.0, 2.0, 3.0, 0.1], [0.0, 0.5, 0.2, 1.0 / 3.0]],
                classifier: classifier.then(|| array![[0.5, 0.0]]),
                objective_trace: vec![10.0, 1.0 / 3.0, 0.1],
                iterations_run: 2,
                config: NmfConfig::new(2),
                lambda: classifier.then_some(1.0),
            },
            dims: GridDims::new(1, 2, 2),
            label_names: if classifier { vec!["a".into()] } else { vec![] },
        }
    }

    #[test]
    fn directory_round_trip() {
        for sup in [false, true] {
            let dir = tempfile::tempdir().unwrap();
            let m = sample(sup);
            m.save(dir.path()).unwrap();
            assert_eq!(dir.path().join("B.npy").exists(), sup);
            let back = SavedModel::load(dir.path()).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn shape_disagreement_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = sample(false);
        m.save(dir.path()).unwrap();
        m.dims = GridDims::new(2, 2, 2);
        let meta = serde_json::to_string(&m.meta()).unwrap();
        fs::write(dir.path().join("meta.json"), meta).unwrap();
        assert!(matches!(SavedModel::load(dir.path()), Err(Error::ShapeMismatch { .. })));
    }
}
