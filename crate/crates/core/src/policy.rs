//! Softmax policies over state-action features, and linear state-value features.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::momdp::sample_index;
use crate::Mode;

/// State-action features `x(s,a)` of a softmax policy.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionFeatures {
    /// Tabular softmax: `x(s,a)` is the unit vector at coordinate `s·|A| + a`.
    OneHot,
    /// Arbitrary dense features, stored `[s][a][k]` row-major.
    Dense { dim: usize, x: Vec<f64> },
}

/// `π_θ(a|s) ∝ exp(θᵀx(s,a))` with temperature 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    num_states: usize,
    num_actions: usize,
    features: ActionFeatures,
    theta: Vec<f64>,
}

/// On-disk form of a tabular softmax policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub theta: Vec<f64>,
}

impl SoftmaxPolicy {
    /// Tabular softmax with `θ = 0` (uniform over actions).
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        SoftmaxPolicy {
            num_states,
            num_actions,
            features: ActionFeatures::OneHot,
            theta: vec![0.0; num_states * num_actions],
        }
    }

    pub fn tabular(num_states: usize, num_actions: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != num_states * num_actions {
            return Err(Error::input(format!(
                "tabular policy needs {} parameters, got {}",
                num_states * num_actions,
                theta.len()
            )));
        }
        Ok(SoftmaxPolicy { num_states, num_actions, features: ActionFeatures::OneHot, theta })
    }

    /// Softmax over dense features `x[s][a]` (each of length `dim`).
    pub fn dense(x: Vec<Vec<Vec<f64>>>, theta: Vec<f64>) -> Result<Self> {
        let num_states = x.len();
        let num_actions = x.first().map_or(0, Vec::len);
        let dim = theta.len();
        let mut flat = Vec::with_capacity(num_states * num_actions * dim);
        for (s, row) in x.iter().enumerate() {
            if row.len() != num_actions {
                return Err(Error::input(format!("feature row {s} has {} actions", row.len())));
            }
            for (a, v) in row.iter().enumerate() {
                if v.len() != dim {
                    return Err(Error::input(format!("x({s},{a}) has length {}, expected {dim}", v.len())));
                }
                flat.extend_from_slice(v);
            }
        }
        Ok(SoftmaxPolicy {
            num_states,
            num_actions,
            features: ActionFeatures::Dense { dim, x: flat },
            theta,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: PolicyFile = serde_json::from_str(&text)?;
        Self::tabular(file.num_states, file.num_actions, file.theta)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
    pub fn features(&self) -> &ActionFeatures {
        &self.features
    }
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
    pub fn param_dim(&self) -> usize {
        self.theta.len()
    }

    /// Same features, new parameters.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != self.theta.len() {
            return Err(Error::input("parameter dimension changed"));
        }
        Ok(SoftmaxPolicy { theta, ..self.clone() })
    }

    fn check_state(&self, s: usize) -> Result<()> {
        if s >= self.num_states {
            return Err(Error::input(format!("state {s} out of range")));
        }
        if self.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::input("policy parameters contain non-finite entries"));
        }
        Ok(())
    }

    /// Feature vector `x(s,a)` (materialized; one-hot features become unit vectors).
    pub fn feature(&self, s: usize, a: usize) -> Vec<f64> {
        match &self.features {
            ActionFeatures::OneHot => {
                let mut v = vec![0.0; self.theta.len()];
                v[s * self.num_actions + a] = 1.0;
                v
            }
            ActionFeatures::Dense { dim, x } => {
                let base = (s * self.num_actions + a) * dim;
                x[base..base + dim].to_vec()
            }
        }
    }

    fn logits_into(&self, s: usize, out: &mut [f64]) {
        match &self.features {
            ActionFeatures::OneHot => {
                out.copy_from_slice(&self.theta[s * self.num_actions..(s + 1) * self.num_actions])
            }
            ActionFeatures::Dense { dim, x } => {
                for (a, o) in out.iter_mut().enumerate() {
                    let base = (s * self.num_actions + a) * dim;
                    *o = x[base..base + dim].iter().zip(&self.theta).map(|(u, v)| u * v).sum();
                }
            }
        }
    }

    /// Logits `θᵀx(s,·)`.
    pub fn logits(&self, s: usize) -> Result<Vec<f64>> {
        self.check_state(s)?;
        let mut out = vec![0.0; self.num_actions];
        self.logits_into(s, &mut out);
        Ok(out)
    }

    fn probs_into(&self, s: usize, out: &mut [f64]) {
        self.logits_into(s, out);
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            z += *o;
        }
        for o in out.iter_mut() {
            *o /= z;
        }
    }

    /// `π_θ(·|s)`, computed with max-subtraction.
    pub fn action_probs(&self, s: usize) -> Result<Vec<f64>> {
        self.check_state(s)?;
        let mut out = vec![0.0; self.num_actions];
        self.probs_into(s, &mut out);
        Ok(out)
    }

    /// Score `ψ(s,a) = ∇_θ log π_θ(a|s) = x(s,a) − Σ_b π(b|s) x(s,b)`.
    pub fn score(&self, s: usize, a: usize) -> Result<Vec<f64>> {
        self.check_state(s)?;
        if a >= self.num_actions {
            return Err(Error::input(format!("action {a} out of range")));
        }
        let mut probs = vec![0.0; self.num_actions];
        self.probs_into(s, &mut probs);
        let mut out = vec![0.0; self.theta.len()];
        self.score_with_probs(s, a, &probs, &mut out);
        Ok(out)
    }

    /// Writes `ψ(s,a)` into `out` given precomputed `π(·|s)`.
    pub(crate) fn score_with_probs(&self, s: usize, a: usize, probs: &[f64], out: &mut [f64]) {
        match &self.features {
            ActionFeatures::OneHot => {
                out.iter_mut().for_each(|v| *v = 0.0);
                let base = s * self.num_actions;
                for (b, &pb) in probs.iter().enumerate() {
                    out[base + b] = -pb;
                }
                out[base + a] += 1.0;
            }
            ActionFeatures::Dense { dim, x } => {
                let xa = &x[(s * self.num_actions + a) * dim..][..*dim];
                out.copy_from_slice(xa);
                for (b, &pb) in probs.iter().enumerate() {
                    let xb = &x[(s * self.num_actions + b) * dim..][..*dim];
                    for (o, v) in out.iter_mut().zip(xb) {
                        *o -= pb * v;
                    }
                }
            }
        }
    }

    /// Largest feature norm `max_{s,a} ‖x(s,a)‖₂`; the score is bounded by twice this.
    pub fn max_feature_norm(&self) -> f64 {
        match &self.features {
            ActionFeatures::OneHot => 1.0,
            ActionFeatures::Dense { dim, x } => x
                .chunks(*dim)
                .map(|v| v.iter().map(|u| u * u).sum::<f64>().sqrt())
                .fold(0.0, f64::max),
        }
    }

    /// Evaluates `π_θ` on every state.
    pub fn table(&self) -> ProbTable {
        let mut probs = vec![0.0; self.num_states * self.num_actions];
        for s in 0..self.num_states {
            self.probs_into(s, &mut probs[s * self.num_actions..(s + 1) * self.num_actions]);
        }
        ProbTable::new(self.num_states, self.num_actions, probs)
    }
}

/// A stochastic policy evaluated on every state: `probs[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbTable {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl ProbTable {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Self {
        assert_eq!(probs.len(), num_states * num_actions);
        let mut cdf = probs.clone();
        for row in cdf.chunks_mut(num_actions) {
            for k in 1..row.len() {
                row[k] += row[k - 1];
            }
        }
        ProbTable { num_states, num_actions, probs, cdf }
    }

    /// The deterministic policy `s ↦ actions[s]`.
    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * num_actions + a] = 1.0;
        }
        Self::new(actions.len(), num_actions, probs)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn probs(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    #[inline]
    pub fn sample_action<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_index(&self.cdf[s * self.num_actions..(s + 1) * self.num_actions], rng.random::<f64>())
    }

    pub fn sample_action_checked<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> Result<usize> {
        if s >= self.num_states {
            return Err(Error::input(format!("state {s} out of range")));
        }
        Ok(self.sample_action(s, rng))
    }
}

/// Linear value features: row `φ(s)` of a `|S| x d̃` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    num_states: usize,
    dim: usize,
    /// Row-major `[s][k]`.
    phi: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FeatureFile {
    phi: Vec<Vec<f64>>,
}

impl FeatureMap {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_states = rows.len();
        if num_states == 0 {
            return Err(Error::input("feature matrix has no rows"));
        }
        let dim = rows[0].len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::input("feature rows must share a positive length"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::input("feature matrix has non-finite entries"));
        }
        Ok(FeatureMap { num_states, dim, phi: rows.concat() })
    }

    /// `Φ = I`: one unit row per state.
    pub fn identity(num_states: usize) -> Self {
        let mut phi = vec![0.0; num_states * num_states];
        for s in 0..num_states {
            phi[s * num_states + s] = 1.0;
        }
        FeatureMap { num_states, dim: num_states, phi }
    }

    /// `|S| − 1` orthonormal columns spanning the complement of `𝟏`, for average-reward TD.
    pub fn orthogonal_to_ones(num_states: usize) -> Result<Self> {
        if num_states < 2 {
            return Err(Error::input("need at least 2 states"));
        }
        // Helmert basis: column k is (1,…,1,−k,0,…)/√(k(k+1)).
        let d = num_states - 1;
        let mut phi = vec![0.0; num_states * d];
        for k in 1..num_states {
            let norm = ((k * (k + 1)) as f64).sqrt();
            for s in 0..k {
                phi[s * d + (k - 1)] = 1.0 / norm;
            }
            phi[k * d + (k - 1)] = -(k as f64) / norm;
        }
        Ok(FeatureMap { num_states, dim: d, phi })
    }

    /// A random `|S| x dim` matrix with orthonormal columns (rows then have norm ≤ 1).
    pub fn random_orthonormal<R: Rng + ?Sized>(num_states: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if dim == 0 || dim > num_states {
            return Err(Error::input("need 0 < dim <= |S|"));
        }
        let g = DMatrix::from_fn(num_states, dim, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let q = g.qr().q();
        let rows = (0..num_states).map(|s| (0..dim).map(|k| q[(s, k)]).collect()).collect();
        Self::from_rows(rows)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: FeatureFile = serde_json::from_str(&text)?;
        Self::from_rows(file.phi)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let rows = (0..self.num_states).map(|s| self.row(s).to_vec()).collect();
        Ok(serde_json::to_string(&FeatureFile { phi: rows })?)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.phi[s * self.dim..(s + 1) * self.dim]
    }

    /// `φ(s)ᵀw`
    #[inline]
    pub fn value(&self, s: usize, w: &[f64]) -> f64 {
        self.row(s).iter().zip(w).map(|(a, b)| a * b).sum()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.num_states, self.dim, &self.phi)
    }
}

/// Outcome of [`check_feature_assumptions`], with the measured margins.
#[derive(Debug, Clone, Serialize)]
pub struct FeatureReport {
    pub max_row_norm: f64,
    pub normalized: bool,
    pub singular_ratio: f64,
    pub full_rank: bool,
    /// RMS residual of the least-squares fit `Φu ≈ 𝟏` (average mode only).
    pub ones_residual: Option<f64>,
    pub excludes_ones: Option<bool>,
}

impl FeatureReport {
    pub fn passes(&self) -> bool {
        self.normalized && self.full_rank && self.excludes_ones.unwrap_or(true)
    }
}

/// Rank threshold on `σ_min / σ_max`.
pub const RANK_TOL: f64 = 1e-8;
/// Minimum RMS residual for `Φu = 𝟏` to count as unsolvable.
pub const ONES_TOL: f64 = 1e-8;

/// Checks row normalization, full column rank, and (average mode) that `𝟏 ∉ span(Φ)`.
pub fn check_feature_assumptions(features: &FeatureMap, mode: Mode) -> FeatureReport {
    let max_row_norm = (0..features.num_states)
        .map(|s| features.row(s).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let phi = features.matrix();
    let sv = phi.clone().svd(true, true);
    let smax = sv.singular_values.max();
    let smin = sv.singular_values.min();
    let singular_ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    let full_rank = features.dim <= features.num_states && singular_ratio > RANK_TOL;

    let (ones_residual, excludes_ones) = match mode {
        Mode::Discounted => (None, None),
        Mode::Average => {
            let ones = DVector::from_element(features.num_states, 1.0);
            let u = sv.solve(&ones, 1e-12).unwrap_or_else(|_| DVector::zeros(features.dim));
            let res = (&phi * u - ones).norm() / (features.num_states as f64).sqrt();
            (Some(res), Some(res > ONES_TOL))
        }
    };
    FeatureReport {
        max_row_norm,
        normalized: max_row_norm <= 1.0 + 1e-12,
        singular_ratio,
        full_rank,
        ones_residual,
        excludes_ones,
    }
}
