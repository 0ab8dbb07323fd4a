//! Dataset manifest: which images the feature rows came from and their classes.
//!
//! ```json
//! {
//!   "features": "features.npy",
//!   "dims": [3, 512, 14, 14],
//!   "image_size": [224, 224],
//!   "labels": ["healthy", "tb"],
//!   "entries": [
//!     { "image": "images/a.png", "class": "tb", "rows": [0, 1] }
//!   ]
//! }
//! ```
//!
//! Paths use forward slashes and are relative to the manifest's directory.
//! `rows` is a half-open range of feature-tensor images; the ranges of all
//! entries partition `[0, n)`. `image_size` is `[width, height]`.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    pub rows: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub features: String,
    pub dims: [usize; 4],
    pub image_size: [usize; 2],
    #[serde(default)]
    pub labels: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

/// One feature-tensor image resolved against its manifest entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowImage {
    pub id: String,
    pub path: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, base))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(base: &Path, rel: &str) -> PathBuf {
        rel.split('/').filter(|s| !s.is_empty()).fold(base.to_path_buf(), |p, s| p.join(s))
    }

    pub fn images(&self) -> usize {
        self.dims[0]
    }

    pub fn width(&self) -> usize {
        self.image_size[0]
    }

    pub fn height(&self) -> usize {
        self.image_size[1]
    }

    pub fn has_labels(&self) -> bool {
        !self.labels.is_empty() && self.entries.iter().any(|e| e.class.is_some())
    }

    /// Checks the invariants that do not need the feature file.
    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::InvalidInput(format!("manifest dims {:?} must be positive", self.dims)));
        }
        if self.image_size[0] < self.dims[3] || self.image_size[1] < self.dims[2] {
            return Err(Error::InvalidInput(format!(
                "image size {}x{} is smaller than the feature grid {}x{}",
                self.image_size[0], self.image_size[1], self.dims[3], self.dims[2]
            )));
        }
        let mut names = HashSet::new();
        for l in &self.labels {
            if !names.insert(l.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate label name '{l}'")));
            }
        }
        let mut ranges: Vec<[usize; 2]> = self.entries.iter().map(|e| e.rows).collect();
        ranges.sort();
        let mut next = 0;
        for [start, end] in ranges {
            if start != next || end <= start {
                return Err(Error::InvalidInput(format!(
                    "entry row ranges must partition [0, {}); found range [{start}, {end}) where row {next} was expected",
                    self.images()
                )));
            }
            next = end;
        }
        if next != self.images() {
            return Err(Error::InvalidInput(format!(
                "entry row ranges cover [0, {next}) but the features hold {} images",
                self.images()
            )));
        }
        for e in &self.entries {
            if let Some(c) = &e.class {
                if !names.contains(c.as_str()) {
                    return Err(Error::InvalidInput(format!(
                        "class '{c}' of {} is not in the label list {:?}",
                        e.image, self.labels
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn check_feature_shape(&self, shape: &[usize]) -> Result<()> {
        if shape != self.dims {
            return Err(Error::shape(
                format!("manifest dims {:?}", self.dims),
                format!("feature file shape {:?}", shape),
            ));
        }
        Ok(())
    }

    /// Class index of every feature-tensor image (`None` when unlabeled).
    pub fn image_labels(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.images()];
        for e in &self.entries {
            let class = e.class.as_ref().and_then(|c| self.labels.iter().position(|l| l == c));
            for slot in &mut out[e.rows[0]..e.rows[1]] {
                *slot = class;
            }
        }
        out
    }

    /// Source image and output id for every feature-tensor image.
    pub fn row_images(&self, base: &Path) -> Vec<RowImage> {
        let mut out = vec![
            RowImage {
                id: String::new(),
                path: PathBuf::new()
            };
            self.images()
        ];
        for e in &self.entries {
            let path = Self::resolve(base, &e.image);
            let stem = Path::new(&e.image)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| e.image.clone());
            let [start, end] = e.rows;
            for row in start..end {
                let id = if end - start == 1 {
                    stem.clone()
                } else {
                    format!("{stem}_{}", row - start)
                };
                out[row] = RowImage { id, path: path.clone() };
            }
        }
        out
    }
}
