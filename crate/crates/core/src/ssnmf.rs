//! Semi-supervised NMF: jointly fits topics `A`, weights `S` and a
//! classification matrix `B` against a binary label matrix `Y`, minimizing
//! `||X - A S||_F^2 + lambda ||Y - B S||_F^2`.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FactorModel;
use crate::nmf::{self, converged, ensure_finite, init_factors, multiplicative_update, normalize_columns, update_left, NmfConfig};
use crate::tensor::{DataMatrix, GridDims};

/// Binary `(l, n*d1*d2)` class membership of every spatial location.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMatrix {
    data: Array2<f64>,
    label_names: Vec<String>,
}

impl LabelMatrix {
    pub fn new(data: Array2<f64>, label_names: Vec<String>) -> Result<Self> {
        if label_names.len() != data.nrows() {
            return Err(Error::shape(
                format!("{} label names", data.nrows()),
                format!("{}", label_names.len()),
            ));
        }
        if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| **v != 0.0 && **v != 1.0) {
            return Err(Error::InvalidInput(format!("label matrix entry {i} is {v}, expected 0 or 1")));
        }
        for (c, col) in data.columns().into_iter().enumerate() {
            if col.sum() > 1.0 {
                return Err(Error::InvalidInput(format!("label matrix column {c} has more than one class")));
            }
        }
        Ok(LabelMatrix { data, label_names })
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn classes(&self) -> usize {
        self.data.nrows()
    }
}

/// Expands per-image class indices into a label matrix whose columns follow
/// the same location order as the flattened features. `None` marks an
/// unlabeled image, whose columns stay all-zero.
pub fn build_label_matrix(
    labels: &[Option<usize>],
    label_names: Vec<String>,
    dims: GridDims,
) -> Result<LabelMatrix> {
    let classes = label_names.len();
    if labels.len() != dims.images {
        return Err(Error::shape(format!("{} image labels", dims.images), labels.len()));
    }
    let per_image = dims.rows * dims.cols;
    let mut y = Array2::zeros((classes, dims.locations()));
    for (image, label) in labels.iter().enumerate() {
        let Some(class) = *label else { continue };
        if class >= classes {
            return Err(Error::LabelOutOfRange { index: class, classes });
        }
        let start = dims.column(image, 0, 0);
        y.row_mut(class)
            .slice_mut(ndarray::s![start..start + per_image])
            .fill(1.0);
    }
    Ok(LabelMatrix { data: y, label_names })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsnmfConfig {
    #[serde(flatten)]
    pub base: NmfConfig,
    pub lambda: f64,
}

impl SsnmfConfig {
    pub const DEFAULT_LAMBDA: f64 = 1.0;

    pub fn new(base: NmfConfig) -> Self {
        SsnmfConfig {
            base,
            lambda: Self::DEFAULT_LAMBDA,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// `||X - A S||^2 + lambda ||Y - B S||^2`
pub fn joint_objective(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    s: ArrayView2<'_, f64>,
    lambda: f64,
) -> f64 {
    nmf::objective(x, a, s) + lambda * nmf::objective(y, b, s)
}

fn check_shapes(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    a: &Array2<f64>,
    b: &Array2<f64>,
    s: &Array2<f64>,
) -> Result<()> {
    let k = s.nrows();
    let ok = a.dim() == (x.nrows(), k)
        && b.dim() == (y.nrows(), k)
        && s.ncols() == x.ncols()
        && y.ncols() == x.ncols();
    if !ok {
        return Err(Error::shape(
            format!("X {:?}, Y {:?} with A (n1, k), B (l, k), S (k, n2)", x.dim(), y.dim()),
            format!("A {:?}, B {:?}, S {:?}", a.dim(), b.dim(), s.dim()),
        ));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn step_in_place(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    a: &mut Array2<f64>,
    b: &mut Array2<f64>,
    s: &mut Array2<f64>,
    lambda: f64,
    eps: f64,
    iteration: usize,
) -> Result<()> {
    let numer = a.t().dot(&x) + lambda * &b.t().dot(&y);
    let denom = a.t().dot(&*a).dot(&*s) + lambda * &b.t().dot(&*b).dot(&*s);
    multiplicative_update(s, &numer, &denom, eps);
    ensure_finite(s, "S", iteration)?;
    update_left(x, a, s, eps);
    ensure_finite(a, "A", iteration)?;
    update_left(y, b, s, eps);
    ensure_finite(b, "B", iteration)
}

/// One joint multiplicative-update sweep: `S`, then `A` and `B` against the new `S`.
///
/// `y` is taken as a dense nonnegative matrix so planted real-valued targets
/// can be used as well as binary labels.
#[allow(clippy::type_complexity)]
pub fn ssnmf_step(
    x: &DataMatrix,
    y: ArrayView2<'_, f64>,
    a: &Array2<f64>,
    b: &Array2<f64>,
    s: &Array2<f64>,
    lambda: f64,
    eps: f64,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    check_shapes(x.view(), y, a, b, s)?;
    let (mut a, mut b, mut s) = (a.clone(), b.clone(), s.clone());
    step_in_place(x.view(), y, &mut a, &mut b, &mut s, lambda, eps, 0)?;
    Ok((a, b, s))
}

pub fn ssnmf_fit(x: &DataMatrix, y: &LabelMatrix, cfg: &SsnmfConfig) -> Result<FactorModel> {
    if y.classes() > cfg.base.k {
        return Err(Error::InvalidConfig(format!(
            "{} label classes exceed k = {} topics; use k >= the number of classes",
            y.classes(),
            cfg.base.k
        )));
    }
    ssnmf_fit_dense(x, y.view(), cfg)
}

/// Joint fit against an arbitrary nonnegative target matrix.
pub fn ssnmf_fit_dense(x: &DataMatrix, y: ArrayView2<'_, f64>, cfg: &SsnmfConfig) -> Result<FactorModel> {
    cfg.validate()?;
    let base = &cfg.base;
    base.check_rank(x.nrows(), x.ncols());
    if y.ncols() != x.ncols() {
        return Err(Error::shape(format!("label matrix with {} columns", x.ncols()), y.ncols()));
    }
    if let Some(v) = y.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput(format!("label target entry {v} is not a finite nonnegative value")));
    }
    let xv = x.view();

    // A and S are drawn exactly as nmf_init draws them; B comes after, so
    // lambda = 0 reproduces the unsupervised fit bit for bit.
    let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
    let (mut a, mut s, s_scale) = init_factors(xv, base.k, base.eps, &mut rng);
    let y_mean = y.sum() / y.len().max(1) as f64;
    let b_scale = (y_mean / (base.k as f64 * s_scale)).max(base.eps);
    let mut b = nmf::uniform_matrix(&mut rng, y.nrows(), base.k, b_scale);

    let lambda = cfg.lambda;
    let mut trace = vec![joint_objective(xv, y, a.view(), b.view(), s.view(), lambda)];
    let mut iterations = 0;
    while iterations < base.max_iters {
        iterations += 1;
        step_in_place(xv, y, &mut a, &mut b, &mut s, lambda, base.eps, iterations)?;
        let obj = joint_objective(xv, y, a.view(), b.view(), s.view(), lambda);
        let prev = *trace.last().unwrap();
        trace.push(obj);
        if converged(prev, obj, base.rel_tol) {
            break;
        }
    }
    log::debug!("ssnmf: {} iterations, objective {:e}", iterations, trace.last().unwrap());

    normalize_columns(&mut a, &mut s, Some(&mut b));
    Ok(FactorModel {
        topics: a,
        weights: s,
        classifier: Some(b),
        objective_trace: trace,
        iterations_run: iterations,
        config: base.clone(),
        lambda: Some(lambda),
    })
}
