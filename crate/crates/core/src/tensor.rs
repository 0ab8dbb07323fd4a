//! Feature tensors, data matrices and the reshaping between them.
//!
//! A feature tensor has axes `(images, channels, rows, cols)`. Flattening
//! moves channels to the row axis of a matrix and enumerates spatial
//! locations of all images along the columns, image-major:
//! `column = image * rows * cols + row * cols + col`.

use std::path::Path;

use ndarray::{Array2, Array4, ArrayView2, ArrayView4, Axis, Ix2, Ix4};

use crate::error::{Error, Result};
use crate::npy::{self, NpyArray};

/// Spatial layout of a flattened tensor: image count and feature-map grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GridDims {
    pub images: usize,
    pub rows: usize,
    pub cols: usize,
}

impl GridDims {
    pub fn new(images: usize, rows: usize, cols: usize) -> Self {
        GridDims { images, rows, cols }
    }

    pub fn locations(&self) -> usize {
        self.images * self.rows * self.cols
    }

    #[inline]
    pub fn column(&self, image: usize, row: usize, col: usize) -> usize {
        (image * self.rows + row) * self.cols + col
    }

    #[inline]
    pub fn location(&self, column: usize) -> (usize, usize, usize) {
        let per_image = self.rows * self.cols;
        let image = column / per_image;
        let rem = column % per_image;
        (image, rem / self.cols, rem % self.cols)
    }
}

fn check_entries<'a>(values: impl Iterator<Item = &'a f64>) -> Result<()> {
    for (index, &value) in values.enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFiniteEntry(index));
        }
        if value < 0.0 {
            return Err(Error::NegativeEntry { index, value });
        }
    }
    Ok(())
}

/// Nonnegative activations with axes `(images, channels, rows, cols)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    data: Array4<f64>,
}

impl FeatureTensor {
    pub fn new(data: Array4<f64>) -> Result<Self> {
        if data.shape().contains(&0) {
            return Err(Error::InvalidInput(format!(
                "feature tensor axes must be non-empty, got {:?}",
                data.shape()
            )));
        }
        check_entries(data.iter())?;
        Ok(FeatureTensor { data })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let array = npy::load_array(path)?;
        Self::try_from(array)
    }

    pub fn data(&self) -> ArrayView4<'_, f64> {
        self.data.view()
    }

    pub fn into_inner(self) -> Array4<f64> {
        self.data
    }

    pub fn images(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn grid(&self) -> GridDims {
        let s = self.data.shape();
        GridDims::new(s[0], s[2], s[3])
    }

    pub fn shape(&self) -> [usize; 4] {
        let s = self.data.shape();
        [s[0], s[1], s[2], s[3]]
    }
}

impl TryFrom<NpyArray> for FeatureTensor {
    type Error = Error;

    fn try_from(array: NpyArray) -> Result<Self> {
        let shape = array.shape().to_vec();
        let data = array
            .into_f64()
            .into_dimensionality::<Ix4>()
            .map_err(|_| Error::shape("rank-4 array (n, p, d1, d2)", format!("{shape:?}")))?;
        FeatureTensor::new(data)
    }
}

/// Nonnegative data matrix: channels down the rows, locations across columns.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    data: Array2<f64>,
}

impl DataMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidInput(format!(
                "data matrix must be non-empty, got {:?}",
                data.shape()
            )));
        }
        check_entries(data.iter())?;
        Ok(DataMatrix { data })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let array = npy::load_array(path)?;
        let shape = array.shape().to_vec();
        let data = array
            .into_f64()
            .into_dimensionality::<Ix2>()
            .map_err(|_| Error::shape("rank-2 array", format!("{shape:?}")))?;
        DataMatrix::new(data)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }
}

/// Flattens `(n, p, d1, d2)` features into the `(p, n*d1*d2)` data matrix.
pub fn flatten_features(features: &FeatureTensor) -> DataMatrix {
    DataMatrix {
        data: flatten_axes(features.data()),
    }
}

/// Moves axis 1 to the front and collapses the rest in C order.
pub(crate) fn flatten_axes(t: ArrayView4<'_, f64>) -> Array2<f64> {
    let (n, p, d1, d2) = t.dim();
    let permuted = t.permuted_axes([1, 0, 2, 3]);
    let mut out = Array2::zeros((p, n * d1 * d2));
    for (mut row, plane) in out.axis_iter_mut(Axis(0)).zip(permuted.axis_iter(Axis(0))) {
        for (dst, src) in row.iter_mut().zip(plane.iter()) {
            *dst = *src;
        }
    }
    out
}

/// Reshapes a `(K, n*d1*d2)` weight matrix into an `(n, K, d1, d2)` tensor,
/// inverting the column map of [`flatten_features`].
pub fn unflatten_weights(weights: ArrayView2<'_, f64>, dims: GridDims) -> Result<Array4<f64>> {
    if weights.ncols() != dims.locations() {
        return Err(Error::shape(
            format!(
                "{} columns (n*d1*d2 for {:?})",
                dims.locations(),
                (dims.images, dims.rows, dims.cols)
            ),
            format!("{} columns", weights.ncols()),
        ));
    }
    let k = weights.nrows();
    Ok(Array4::from_shape_fn(
        (dims.images, k, dims.rows, dims.cols),
        |(i, j, r, c)| weights[[j, dims.column(i, r, c)]],
    ))
}
