//! Frobenius-norm NMF by Lee–Seung multiplicative updates.
//!
//! Minimizes `||X - A S||_F^2` over `A, S >= 0`. Every update multiplies a
//! factor entrywise by `numerator / (denominator + eps)`, where both terms
//! are nonnegative, so nonnegativity is preserved and the objective never
//! increases.

use ndarray::{Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FactorModel;
use crate::tensor::DataMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmfConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once the relative objective decrease of one iteration falls below this.
    pub rel_tol: f64,
    pub seed: u64,
    /// Added to every update denominator.
    pub eps: f64,
}

impl NmfConfig {
    pub const DEFAULT_MAX_ITERS: usize = 500;
    pub const DEFAULT_REL_TOL: f64 = 1e-6;
    pub const DEFAULT_EPS: f64 = 1e-12;

    pub fn new(k: usize) -> Self {
        NmfConfig {
            k,
            max_iters: Self::DEFAULT_MAX_ITERS,
            rel_tol: Self::DEFAULT_REL_TOL,
            seed: 0,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidConfig(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "rel_tol must be nonnegative, got {}",
                self.rel_tol
            )));
        }
        Ok(())
    }

    pub(crate) fn check_rank(&self, n1: usize, n2: usize) {
        if self.k > n1.min(n2) {
            log::warn!(
                "k = {} exceeds min(n1, n2) = {}; the factorization is rank-deficient",
                self.k,
                n1.min(n2)
            );
        }
    }
}

/// Squared Frobenius norm of `x - a s`.
pub fn objective(x: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>, s: ArrayView2<'_, f64>) -> f64 {
    let approx = a.dot(&s);
    Zip::from(&x)
        .and(&approx)
        .fold(0.0, |acc, &xv, &av| acc + (xv - av) * (xv - av))
}

fn mean(x: ArrayView2<'_, f64>) -> f64 {
    x.sum() / x.len() as f64
}

pub(crate) fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    // gen() is in [0, 1); flip it to (0, 1] so every entry is strictly positive
    Array2::from_shape_simple_fn((rows, cols), || (1.0 - rng.gen::<f64>()) * scale)
}

pub(crate) fn init_factors(
    x: ArrayView2<'_, f64>,
    k: usize,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> (Array2<f64>, Array2<f64>, f64) {
    let scale = (mean(x) / k as f64).sqrt().max(eps);
    let a = uniform_matrix(rng, x.nrows(), k, scale);
    let s = uniform_matrix(rng, k, x.ncols(), scale);
    (a, s, scale)
}

/// Seeded random starting point: entries uniform in (0, 1] scaled by
/// `sqrt(mean(x) / k)`, floored at `eps`.
pub fn nmf_init(x: &DataMatrix, cfg: &NmfConfig) -> Result<(Array2<f64>, Array2<f64>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (a, s, _) = init_factors(x.view(), cfg.k, cfg.eps, &mut rng);
    Ok((a, s))
}

/// `base <- base * numer / (denom + eps)`, entrywise.
pub(crate) fn multiplicative_update(base: &mut Array2<f64>, numer: &Array2<f64>, denom: &Array2<f64>, eps: f64) {
    Zip::from(base)
        .and(numer)
        .and(denom)
        .for_each(|b, &n, &d| *b = *b * n / (d + eps));
}

pub(crate) fn ensure_finite(m: &Array2<f64>, factor: &'static str, iteration: usize) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { factor, iteration })
    }
}

/// `A <- A * (X S^T) / (A S S^T + eps)`
pub(crate) fn update_left(target: ArrayView2<'_, f64>, left: &mut Array2<f64>, s: &Array2<f64>, eps: f64) {
    let numer = target.dot(&s.t());
    let denom = left.dot(&s.dot(&s.t()));
    multiplicative_update(left, &numer, &denom, eps);
}

fn check_shapes(x: ArrayView2<'_, f64>, a: &Array2<f64>, s: &Array2<f64>) -> Result<()> {
    if a.nrows() != x.nrows() || s.ncols() != x.ncols() || a.ncols() != s.nrows() {
        return Err(Error::shape(
            format!("A ({}, k) and S (k, {})", x.nrows(), x.ncols()),
            format!("A {:?} and S {:?}", a.dim(), s.dim()),
        ));
    }
    Ok(())
}

fn step_in_place(x: ArrayView2<'_, f64>, a: &mut Array2<f64>, s: &mut Array2<f64>, eps: f64, iteration: usize) -> Result<()> {
    let numer = a.t().dot(&x);
    let denom = a.t().dot(&*a).dot(&*s);
    multiplicative_update(s, &numer, &denom, eps);
    ensure_finite(s, "S", iteration)?;
    update_left(x, a, s, eps);
    ensure_finite(a, "A", iteration)
}

/// One multiplicative-update sweep: `S` first, then `A` against the new `S`.
pub fn nmf_step(
    x: &DataMatrix,
    a: &Array2<f64>,
    s: &Array2<f64>,
    eps: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_shapes(x.view(), a, s)?;
    let (mut a, mut s) = (a.clone(), s.clone());
    step_in_place(x.view(), &mut a, &mut s, eps, 0)?;
    Ok((a, s))
}

/// Relative-decrease stopping rule shared by both solvers.
pub(crate) fn converged(prev: f64, cur: f64, rel_tol: f64) -> bool {
    if prev <= 0.0 {
        return true;
    }
    (prev - cur) / prev < rel_tol
}

/// Rescales each column of `A` to unit L1 norm, compensating in the matching
/// row of `S` (and column of `B`), so `AS` and `BS` are unchanged.
pub(crate) fn normalize_columns(a: &mut Array2<f64>, s: &mut Array2<f64>, b: Option<&mut Array2<f64>>) {
    let norms: Vec<f64> = a.columns().into_iter().map(|c| c.sum()).collect();
    let mut b = b;
    for (j, &norm) in norms.iter().enumerate() {
        if norm > 0.0 {
            a.column_mut(j).mapv_inplace(|v| v / norm);
            s.row_mut(j).mapv_inplace(|v| v * norm);
            if let Some(b) = b.as_deref_mut() {
                b.column_mut(j).mapv_inplace(|v| v / norm);
            }
        }
    }
}

pub fn nmf_fit(x: &DataMatrix, cfg: &NmfConfig) -> Result<FactorModel> {
    cfg.validate()?;
    cfg.check_rank(x.nrows(), x.ncols());
    let xv = x.view();
    let (mut a, mut s) = nmf_init(x, cfg)?;

    let mut trace = vec![objective(xv, a.view(), s.view())];
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        step_in_place(xv, &mut a, &mut s, cfg.eps, iterations)?;
        let obj = objective(xv, a.view(), s.view());
        let prev = *trace.last().unwrap();
        trace.push(obj);
        if converged(prev, obj, cfg.rel_tol) {
            break;
        }
    }
    log::debug!("nmf: {} iterations, objective {:e}", iterations, trace.last().unwrap());

    normalize_columns(&mut a, &mut s, None);
    Ok(FactorModel {
        topics: a,
        weights: s,
        classifier: None,
        objective_trace: trace,
        iterations_run: iterations,
        config: cfg.clone(),
        lambda: None,
    })
}
