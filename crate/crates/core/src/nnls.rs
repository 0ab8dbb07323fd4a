//! Projection of held-out data onto a frozen topic matrix by nonnegative
//! least squares, one Lawson–Hanson active-set solve per column.

use ndarray::{Array1, Array2, Array4, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::FactorModel;
use crate::tensor::{flatten_features, unflatten_weights, FeatureTensor};

#[derive(Clone, Debug, PartialEq)]
pub struct NnlsConfig {
    /// KKT tolerance, relative to `||A^T x||_inf` of each column.
    pub kkt_tol: f64,
    /// Budget of outer (variable-adding) iterations per column.
    pub max_iters: usize,
}

impl Default for NnlsConfig {
    fn default() -> Self {
        NnlsConfig {
            kkt_tol: 1e-8,
            max_iters: 1000,
        }
    }
}

impl NnlsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kkt_tol > 0.0) {
            return Err(Error::InvalidConfig(format!("kkt_tol must be positive, got {}", self.kkt_tol)));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("nnls max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Gram matrix `A^T A` shared by every column of one projection.
pub struct NnlsProblem<'a> {
    a: ArrayView2<'a, f64>,
    gram: Array2<f64>,
}

/// Largest KKT violation of `s` for `min ||x - A s||, s >= 0`, already
/// scaled by `||A^T x||_inf`; zero when the certificate holds exactly.
pub fn kkt_violation(a: ArrayView2<'_, f64>, x: ArrayView1<'_, f64>, s: ArrayView1<'_, f64>) -> f64 {
    let atx = a.t().dot(&x);
    let grad = a.t().dot(&a.dot(&s)) - &atx;
    let scale = atx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = s.iter().zip(&grad).fold(0.0f64, |m, (&sj, &g)| {
        let v = if sj > 0.0 { g.abs() } else { (-g).max(0.0) };
        m.max(v)
    });
    if worst == 0.0 {
        0.0
    } else if scale == 0.0 {
        f64::INFINITY
    } else {
        worst / scale
    }
}

impl<'a> NnlsProblem<'a> {
    pub fn new(a: ArrayView2<'a, f64>) -> Self {
        let gram = a.t().dot(&a);
        NnlsProblem { a, gram }
    }

    /// Solves one column. `column` only labels errors.
    pub fn solve(&self, x: ArrayView1<'_, f64>, cfg: &NnlsConfig, column: usize) -> Result<Array1<f64>> {
        let k = self.gram.nrows();
        let atx = self.a.t().dot(&x);
        let tol = cfg.kkt_tol * atx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut s = Array1::<f64>::zeros(k);
        let mut passive = vec![false; k];
        // negative gradient; positive entries can still decrease the objective
        let mut w = atx.clone();

        let mut iters = 0;
        // variables that were dropped right after entering; skipped until
        // another variable enters successfully
        let mut stalled = vec![false; k];
        loop {
            let candidate = (0..k)
                .filter(|&j| !passive[j] && !stalled[j] && w[j] > tol)
                .max_by(|&i, &j| w[i].total_cmp(&w[j]));
            let Some(enter) = candidate else { break };
            if iters == cfg.max_iters {
                return Err(Error::NnlsBudget {
                    column,
                    iters,
                    violation: kkt_violation(self.a, x, s.view()),
                });
            }
            iters += 1;
            passive[enter] = true;

            loop {
                let z = self.solve_passive(&passive, atx.view());
                let blocking = (0..k)
                    .filter(|&j| passive[j] && z[j] <= 0.0)
                    .map(|j| (j, if s[j] <= 0.0 { 0.0 } else { s[j] / (s[j] - z[j]) }))
                    .min_by(|p, q| p.1.total_cmp(&q.1));
                let Some((hit, alpha)) = blocking else {
                    s = z;
                    break;
                };
                for j in (0..k).filter(|&j| passive[j]) {
                    s[j] += alpha * (z[j] - s[j]);
                }
                s[hit] = 0.0;
                for j in 0..k {
                    if passive[j] && s[j] <= 0.0 {
                        s[j] = 0.0;
                        passive[j] = false;
                    }
                }
            }
            if passive[enter] {
                stalled.fill(false);
            } else {
                stalled[enter] = true;
            }
            w = &atx - &self.gram.dot(&s);
        }

        let violation = kkt_violation(self.a, x, s.view());
        if violation > cfg.kkt_tol {
            return Err(Error::NnlsBudget {
                column,
                iters,
                violation,
            });
        }
        Ok(s)
    }

    /// Unconstrained least squares restricted to the passive set, via
    /// Cholesky on the normal equations; zero outside the set.
    fn solve_passive(&self, passive: &[bool], atx: ArrayView1<'_, f64>) -> Array1<f64> {
        let idx: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
        let m = idx.len();
        let mut g = Array2::<f64>::zeros((m, m));
        let mut rhs = Array1::<f64>::zeros(m);
        for (p, &i) in idx.iter().enumerate() {
            rhs[p] = atx[i];
            for (q, &j) in idx.iter().enumerate() {
                g[[p, q]] = self.gram[[i, j]];
            }
        }
        let sol = cholesky_solve(g, rhs);
        let mut z = Array1::zeros(passive.len());
        for (p, &i) in idx.iter().enumerate() {
            z[i] = sol[p];
        }
        z
    }
}

/// Solves `G v = b` for symmetric positive semi-definite `G`. Pivots that
/// vanish (collinear topics) get a zero component.
fn cholesky_solve(mut g: Array2<f64>, mut b: Array1<f64>) -> Array1<f64> {
    let n = b.len();
    let scale = (0..n).map(|i| g[[i, i]]).fold(0.0f64, f64::max);
    let floor = scale * 1e-14;
    let mut dead = vec![false; n];
    for j in 0..n {
        let mut d = g[[j, j]];
        for p in 0..j {
            d -= g[[j, p]] * g[[j, p]];
        }
        if d <= floor {
            dead[j] = true;
            for i in j..n {
                g[[i, j]] = 0.0;
            }
            continue;
        }
        let d = d.sqrt();
        g[[j, j]] = d;
        for i in j + 1..n {
            let mut v = g[[i, j]];
            for p in 0..j {
                v -= g[[i, p]] * g[[j, p]];
            }
            g[[i, j]] = v / d;
        }
    }
    // forward: L u = b
    for i in 0..n {
        if dead[i] {
            b[i] = 0.0;
            continue;
        }
        let mut v = b[i];
        for p in 0..i {
            v -= g[[i, p]] * b[p];
        }
        b[i] = v / g[[i, i]];
    }
    // backward: L^T v = u
    for i in (0..n).rev() {
        if dead[i] {
            continue;
        }
        let mut v = b[i];
        for p in i + 1..n {
            v -= g[[p, i]] * b[p];
        }
        b[i] = v / g[[i, i]];
    }
    b
}

/// Nonnegative weights `(k, m)` for every column of `x_test` under topics `a`.
pub fn project(a: ArrayView2<'_, f64>, x_test: ArrayView2<'_, f64>, cfg: &NnlsConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    if a.nrows() != x_test.nrows() {
        return Err(Error::shape(
            format!("data with {} rows (topic matrix rows)", a.nrows()),
            format!("{} rows", x_test.nrows()),
        ));
    }
    if a.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("topic matrix must be finite and nonnegative".into()));
    }
    let problem = NnlsProblem::new(a);
    let columns: Vec<Array1<f64>> = (0..x_test.ncols())
        .into_par_iter()
        .map(|c| problem.solve(x_test.column(c), cfg, c))
        .collect::<Result<_>>()?;
    let mut out = Array2::zeros((a.ncols(), x_test.ncols()));
    for (mut dst, col) in out.columns_mut().into_iter().zip(columns) {
        dst.assign(&col);
    }
    Ok(out)
}

/// Flattens `features`, projects onto the model topics and reshapes the
/// weights into an `(n_test, K, d1, d2)` heat tensor.
pub fn project_features(model: &FactorModel, features: &FeatureTensor, cfg: &NnlsConfig) -> Result<Array4<f64>> {
    if features.channels() != model.channels() {
        return Err(Error::shape(
            format!("{} feature channels (model)", model.channels()),
            format!("{} channels", features.channels()),
        ));
    }
    let x = flatten_features(features);
    let s = project(model.topics.view(), x.view(), cfg)?;
    unflatten_weights(s.view(), features.grid())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_topics() {
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let s = project(a.view(), array![[3.0], [0.0]].view(), &NnlsConfig::default()).unwrap();
        assert_eq!(s, array![[3.0], [0.0]]);
    }

    #[test]
    fn single_column_least_squares() {
        // closed form: s = (a^T x) / (a^T a) = 4 / 2
        let a = array![[1.0], [1.0]];
        let s = project(a.view(), array![[1.0], [3.0]].view(), &NnlsConfig::default()).unwrap();
        assert!((s[[0, 0]] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn active_constraint_is_clamped() {
        // unconstrained solution is (2, -1); the constrained optimum drops topic 1
        let a = array![[1.0, 1.0], [0.0, 1.0], [0.0, 0.0]];
        let x = array![1.0, -1.0, 0.0];
        let problem = NnlsProblem::new(a.view());
        let s = problem.solve(x.view(), &NnlsConfig::default(), 0).unwrap();
        // min ||(1 - s0 - s1, -s1)|| with s >= 0 => s1 = 0, s0 = 1
        assert!((s[0] - 1.0).abs() < 1e-14 && s[1] == 0.0, "{s}");
    }

    #[test]
    fn consistent_system_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Array2::from_shape_simple_fn((20, 5), || rng.gen::<f64>());
        let mut s_true = Array2::from_shape_simple_fn((5, 30), || rng.gen::<f64>());
        for c in 0..30 {
            s_true[[c % 5, c]] = 0.0;
        }
        let x = a.dot(&s_true);
        let s = project(a.view(), x.view(), &NnlsConfig::default()).unwrap();
        for (col, truth) in s.columns().into_iter().zip(s_true.columns()) {
            let err = (&col - &truth).mapv(|v| v * v).sum().sqrt();
            assert!(err <= 1e-6 * truth.mapv(|v| v * v).sum().sqrt());
        }
    }

    #[test]
    fn zero_data_gives_zero_weights() {
        let a = array![[0.5, 0.1], [0.5, 0.9]];
        let s = project(a.view(), Array2::zeros((2, 4)).view(), &NnlsConfig::default()).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn row_mismatch_is_rejected() {
        let a = Array2::ones((3, 2));
        let err = project(a.view(), Array2::ones((4, 2)).view(), &NnlsConfig::default()).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn duplicate_topics_still_certify() {
        let a = array![[1.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]];
        let x = array![[2.0, 0.0], [1.0, 3.0], [3.0, 1.0]];
        let cfg = NnlsConfig::default();
        let s = project(a.view(), x.view(), &cfg).unwrap();
        for c in 0..2 {
            assert!(kkt_violation(a.view(), x.column(c), s.column(c)) <= cfg.kkt_tol);
        }
    }

    #[test]
    fn budget_exhaustion_reports_violation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Array2::from_shape_simple_fn((10, 6), || rng.gen::<f64>());
        let x = Array2::from_shape_simple_fn((10, 1), || rng.gen::<f64>() * 3.0);
        let cfg = NnlsConfig { kkt_tol: 1e-8, max_iters: 1 };
        match project(a.view(), x.view(), &cfg) {
            Err(Error::NnlsBudget { violation, .. }) => assert!(violation > 0.0),
            Ok(s) => assert!(kkt_violation(a.view(), x.column(0), s.column(0)) <= 1e-8),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn cholesky_matches_direct_solve() {
        let g = array![[4.0, 2.0], [2.0, 3.0]];
        let v = cholesky_solve(g.clone(), array![2.0, 1.0]);
        let back = g.dot(&v);
        assert!((back[0] - 2.0).abs() < 1e-14 && (back[1] - 1.0).abs() < 1e-14);
    }
}
