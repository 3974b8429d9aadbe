//! Exact policy gradients, the Pareto-stationarity gap and a smoothness estimate.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::values::{discounted_occupancy_weights, exact_values, stationary_distribution};
use crate::error::{Error, Result};
use crate::momdp::TabularMomdp;
use crate::policy::SoftmaxPolicy;
use crate::qp::{min_norm_lambda, QpOptions};
use crate::Mode;

/// State weighting used when averaging `ψ·Adv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMeasure {
    /// `d_θ`: the distribution the sampled actor actually averages over.
    #[default]
    Stationary,
    /// Unnormalized discounted occupancy from the start distribution; this is the
    /// true `∇_θ J` of the discounted objective. Discounted mode only.
    DiscountedOccupancy,
}

/// `Σ_s w(s) Σ_a π(a|s) ψ(s,a) Adv(s,a)`
fn weighted_score_sum(policy: &SoftmaxPolicy, probs: &crate::ProbTable, weights: &[f64], adv: &[f64]) -> Vec<f64> {
    let na = policy.num_actions();
    let mut grad = vec![0.0; policy.param_dim()];
    let mut psi = vec![0.0; policy.param_dim()];
    for (s, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let pi = probs.probs(s);
        for a in 0..na {
            let c = w * pi[a] * adv[s * na + a];
            if c == 0.0 {
                continue;
            }
            policy.score_with_probs(s, a, pi, &mut psi);
            grad.iter_mut().zip(&psi).for_each(|(g, p)| *g += c * p);
        }
    }
    grad
}

fn check_shapes(momdp: &TabularMomdp, policy: &SoftmaxPolicy) -> Result<()> {
    if policy.num_states() != momdp.num_states() || policy.num_actions() != momdp.num_actions() {
        return Err(Error::input("policy shape does not match the MOMDP"));
    }
    Ok(())
}

/// Exact gradient of objective `i` under the given measure.
pub fn exact_policy_gradient(
    momdp: &TabularMomdp,
    policy: &SoftmaxPolicy,
    i: usize,
    mode: Mode,
    measure: GradientMeasure,
) -> Result<Vec<f64>> {
    check_shapes(momdp, policy)?;
    let table = policy.table();
    let vals = exact_values(momdp, &table, i, mode)?;
    let weights = match (mode, measure) {
        (_, GradientMeasure::Stationary) => stationary_distribution(momdp, &table)?,
        (Mode::Discounted, GradientMeasure::DiscountedOccupancy) => {
            discounted_occupancy_weights(momdp, &table, momdp.discounts()[i])?
        }
        (Mode::Average, GradientMeasure::DiscountedOccupancy) => {
            return Err(Error::input("discounted occupancy gradient needs the discounted setting"))
        }
    };
    Ok(weighted_score_sum(policy, &table, &weights, &vals.adv))
}

/// All objective gradients as the columns of a `d × M` matrix (ascent directions).
pub fn gradient_matrix(
    momdp: &TabularMomdp,
    policy: &SoftmaxPolicy,
    mode: Mode,
    measure: GradientMeasure,
) -> Result<DMatrix<f64>> {
    let m = momdp.num_objectives();
    let cols = (0..m)
        .map(|i| exact_policy_gradient(momdp, policy, i, mode, measure))
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(policy.param_dim(), m, |r, c| cols[c][r]))
}

/// `min_{λ∈Δ_M} ‖Σ_i λ_i ∇J^i(θ)‖²`.
pub fn pareto_stationarity_gap(
    momdp: &TabularMomdp,
    policy: &SoftmaxPolicy,
    mode: Mode,
    measure: GradientMeasure,
) -> Result<f64> {
    let g = gradient_matrix(momdp, policy, mode, measure)?;
    Ok(min_norm_lambda(&g, QpOptions::default())?.objective)
}

/// Spectral norm of a finite-difference Hessian of each objective, maximized over objectives.
pub fn estimate_smoothness(
    momdp: &TabularMomdp,
    policy: &SoftmaxPolicy,
    mode: Mode,
    measure: GradientMeasure,
    h: f64,
) -> Result<f64> {
    check_shapes(momdp, policy)?;
    if !(h > 0.0) {
        return Err(Error::input("finite-difference step must be positive"));
    }
    let dim = policy.param_dim();
    let m = momdp.num_objectives();
    let mut hess = vec![DMatrix::<f64>::zeros(dim, dim); m];
    for k in 0..dim {
        let mut plus = policy.theta().to_vec();
        let mut minus = plus.clone();
        plus[k] += h;
        minus[k] -= h;
        let gp = gradient_matrix(momdp, &policy.with_theta(plus)?, mode, measure)?;
        let gm = gradient_matrix(momdp, &policy.with_theta(minus)?, mode, measure)?;
        for (i, hs) in hess.iter_mut().enumerate() {
            for r in 0..dim {
                hs[(r, k)] = (gp[(r, i)] - gm[(r, i)]) / (2.0 * h);
            }
        }
    }
    Ok(hess
        .into_iter()
        .map(|hs| {
            let sym = (&hs + hs.transpose()) * 0.5;
            SymmetricEigen::new(sym).eigenvalues.iter().fold(0.0_f64, |a, e| a.max(e.abs()))
        })
        .fold(0.0, f64::max))
}
