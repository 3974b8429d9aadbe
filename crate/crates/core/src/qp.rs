//! Simplex-constrained quadratic programs.
//!
//! Both the weighted-Chebyshev direction problem `min ‖K_p λ‖² − λᵀc` and the
//! plain min-norm problem `min ‖Gλ‖²` reduce to `min λᵀQλ − cᵀλ` over the
//! probability simplex, solved here by projected gradient with step `1/L`,
//! `L = 2·λ_max(Q)`. At that step size the objective never increases.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σλ = 1`.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::input("simplex vector must be non-empty"));
        }
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::input("simplex vector entries must be finite and non-negative"));
        }
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::input(format!("simplex vector sums to {sum}")));
        }
        Ok(SimplexVector(v))
    }

    pub fn uniform(m: usize) -> Self {
        SimplexVector(vec![1.0 / m as f64; m])
    }

    pub fn vertex(m: usize, i: usize) -> Self {
        let mut v = vec![0.0; m];
        v[i] = 1.0;
        SimplexVector(v)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for SimplexVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for SimplexVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        SimplexVector::new(v)
    }
}

impl From<SimplexVector> for Vec<f64> {
    fn from(v: SimplexVector) -> Vec<f64> {
        v.0
    }
}

/// Euclidean projection onto `{λ ≥ 0, Σλ = 1}` by sort-and-threshold.
pub fn project_simplex(v: &[f64]) -> Result<SimplexVector> {
    if v.is_empty() {
        return Err(Error::input("cannot project an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("cannot project a vector with non-finite entries"));
    }
    let mut sorted = v.to_vec();
    // stable sort, descending
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|x| (x - tau).max(0.0)).collect();
    // absorb rounding so Σλ = 1 holds to machine precision
    let sum: f64 = out.iter().sum();
    if sum > 0.0 && sum != 1.0 {
        out.iter_mut().for_each(|x| *x /= sum);
    }
    Ok(SimplexVector(out))
}

fn scale_of(s: &DMatrix<f64>) -> f64 {
    s.norm().max(1.0)
}

/// Symmetric PSD square root via eigendecomposition; tiny negative eigenvalues are clamped to 0.
///
/// Symmetry and PSD tolerances are `1e-8`, relative to `max(1, ‖S‖_F)`.
pub fn sym_matrix_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !s.is_square() {
        return Err(Error::input("matrix square root needs a square matrix"));
    }
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("matrix has non-finite entries"));
    }
    let tol = 1e-8 * scale_of(s);
    let asym = (s - s.transpose()).amax();
    if asym > tol {
        return Err(Error::input(format!("matrix is not symmetric (max asymmetry {asym:e})")));
    }
    let sym = (s + s.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    if min_eig < -tol {
        return Err(Error::input(format!("matrix is indefinite (eigenvalue {min_eig:e})")));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let r = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Ok((&r + r.transpose()) * 0.5)
}

/// `K_p = diag(√p)·sqrt(GᵀG)·diag(√p)` for a `d x M` gradient matrix `G`.
///
/// `p` need not lie on the simplex (`p = 𝟏` gives the plain MGDA matrix).
pub fn build_kp(g: &DMatrix<f64>, p: &[f64]) -> Result<DMatrix<f64>> {
    if g.ncols() != p.len() {
        return Err(Error::input(format!(
            "gradient matrix has {} columns but p has {} entries",
            g.ncols(),
            p.len()
        )));
    }
    if p.iter().any(|x| !x.is_finite() || *x <= 0.0) {
        return Err(Error::input("weights must be strictly positive"));
    }
    let k = sym_matrix_sqrt(&(g.transpose() * g))?;
    let sqrt_p = DVector::from_iterator(p.len(), p.iter().map(|x| x.sqrt()));
    let d = DMatrix::from_diagonal(&sqrt_p);
    let kp = &d * k * &d;
    Ok((&kp + kp.transpose()) * 0.5)
}

/// `min ‖K_p λ‖² − λᵀc` over the simplex, with `c = u·(p ⊙ (J_ub − Ĵ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct WcQuadratic {
    pub kp: DMatrix<f64>,
    pub c: DVector<f64>,
    pub u: f64,
}

impl WcQuadratic {
    /// Assembles the linear term from the regret estimate `J_ub − Ĵ`.
    pub fn new(kp: DMatrix<f64>, u: f64, p: &[f64], j_ub: &[f64], j_hat: &[f64]) -> Result<Self> {
        let m = kp.nrows();
        if kp.ncols() != m || p.len() != m || j_ub.len() != m || j_hat.len() != m {
            return Err(Error::input("WC quadratic dimensions disagree"));
        }
        if !(u >= 0.0 && u.is_finite()) {
            return Err(Error::input(format!("trade-off u = {u} must be finite and >= 0")));
        }
        let c = DVector::from_iterator(m, (0..m).map(|i| u * (p[i] * (j_ub[i] - j_hat[i]))));
        Ok(WcQuadratic { kp, c, u })
    }

    pub fn dim(&self) -> usize {
        self.kp.nrows()
    }

    /// `‖K_p λ‖² − λᵀc`
    pub fn objective(&self, lambda: &[f64]) -> f64 {
        let l = DVector::from_column_slice(lambda);
        (&self.kp * &l).norm_squared() - self.c.dot(&l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions { tol: 1e-8, max_iters: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub lambda: SimplexVector,
    pub objective: f64,
    pub iterations: usize,
    /// False when `max_iters` ran out before the step fell below `tol`.
    pub converged: bool,
    /// Objective after each iterate (first entry is the starting point), when traced.
    pub trace: Option<Vec<f64>>,
}

fn quad_objective(q: &DMatrix<f64>, c: &DVector<f64>, l: &DVector<f64>) -> f64 {
    l.dot(&(q * l)) - c.dot(l)
}

/// Projected gradient on `min λᵀQλ − cᵀλ`, starting from the uniform point.
fn solve_gram(q: &DMatrix<f64>, c: &DVector<f64>, opts: QpOptions, trace: bool) -> Result<QpSolution> {
    let m = q.nrows();
    if m == 0 || !q.is_square() || c.len() != m {
        return Err(Error::input("QP dimensions disagree"));
    }
    if q.iter().chain(c.iter()).any(|x| !x.is_finite()) {
        return Err(Error::input("QP data has non-finite entries"));
    }
    if m == 1 {
        let lambda = SimplexVector(vec![1.0]);
        let objective = q[(0, 0)] - c[0];
        return Ok(QpSolution {
            lambda,
            objective,
            iterations: 0,
            converged: true,
            trace: trace.then(|| vec![objective]),
        });
    }
    let sym = (q + q.transpose()) * 0.5;
    let lmax = sym.clone().symmetric_eigen().eigenvalues.max().max(0.0);
    let step = 1.0 / (2.0 * lmax + 1e-12);

    let mut lambda = DVector::from_element(m, 1.0 / m as f64);
    let mut obj = quad_objective(&sym, c, &lambda);
    let mut best = (lambda.clone(), obj);
    let mut hist = trace.then(|| vec![obj]);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let grad = &sym * &lambda * 2.0 - c;
        let cand = &lambda - grad * step;
        let next = DVector::from_vec(project_simplex(cand.as_slice())?.into_vec());
        let moved = (&next - &lambda).norm();
        lambda = next;
        obj = quad_objective(&sym, c, &lambda);
        if let Some(h) = hist.as_mut() {
            h.push(obj);
        }
        if obj <= best.1 {
            best = (lambda.clone(), obj);
        }
        if moved <= opts.tol {
            converged = true;
            break;
        }
    }
    let (lambda, objective) = best;
    Ok(QpSolution {
        lambda: SimplexVector(lambda.as_slice().to_vec()),
        objective,
        iterations,
        converged,
        trace: hist,
    })
}

/// Solves the WC direction problem `min ‖K_p λ‖² − λᵀc` over the simplex.
pub fn solve_simplex_qp(q: &WcQuadratic, opts: QpOptions) -> Result<QpSolution> {
    let gram = q.kp.transpose() * &q.kp;
    solve_gram(&gram, &q.c, opts, false)
}

/// Like [`solve_simplex_qp`], recording the objective at every iterate.
pub fn solve_simplex_qp_traced(q: &WcQuadratic, opts: QpOptions) -> Result<QpSolution> {
    let gram = q.kp.transpose() * &q.kp;
    solve_gram(&gram, &q.c, opts, true)
}

/// Min-norm element of the convex hull of the columns of `G`: `min ‖Gλ‖²` over the simplex.
pub fn min_norm_lambda(g: &DMatrix<f64>, opts: QpOptions) -> Result<QpSolution> {
    if g.ncols() == 0 {
        return Err(Error::input("gradient matrix has no columns"));
    }
    let gram = g.transpose() * g;
    solve_gram(&gram, &DVector::zeros(g.ncols()), opts, false)
}
