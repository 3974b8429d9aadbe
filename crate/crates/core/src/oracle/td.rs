//! TD(0) mean dynamics: the matrix `A_θ`, the fixed point `w*`, and derived constants.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use super::gradient::{estimate_smoothness, GradientMeasure};
use super::mixing::{estimate_mixing, MixingFit};
use super::values::{exact_values, kernel_matrix, stationary_distribution};
use crate::error::{Error, Result};
use crate::momdp::TabularMomdp;
use crate::policy::{check_feature_assumptions, FeatureMap, FeatureReport, ProbTable, SoftmaxPolicy};
use crate::Mode;

/// Step used for the finite-difference Hessian behind `L_hat`.
pub const SMOOTHNESS_STEP: f64 = 1e-4;
/// Margins below this count as a violation; it absorbs eigensolver rounding.
pub const LAMBDA_A_MIN: f64 = 1e-10;
/// Horizon of the exact TV sequence used for the mixing fit.
pub const MIXING_HORIZON: usize = 200;

/// `A = E_{s∼d_θ, s'∼P_θ(·|s)}[φ(s)(γφ(s') − φ(s))ᵀ] = ΦᵀD_θ(γP_θ − I)Φ` (`γ = 1` in the
/// average setting), oriented so the expected TD increment is `A w + b`.
pub fn td_matrix(momdp: &TabularMomdp, table: &ProbTable, features: &FeatureMap, gamma: f64, d: &[f64]) -> DMatrix<f64> {
    let ns = momdp.num_states();
    let phi = features.matrix();
    let p = kernel_matrix(momdp, table);
    let dmat = DMatrix::from_diagonal(&DVector::from_column_slice(d));
    phi.transpose() * dmat * (p * gamma - DMatrix::<f64>::identity(ns, ns)) * &phi
}

/// `λ_A = −λ_max(A + Aᵀ)`; positive exactly when `A` is negative definite in the symmetric sense.
pub fn negative_definiteness_margin(a: &DMatrix<f64>) -> f64 {
    let sym = a + a.transpose();
    -SymmetricEigen::new(sym).eigenvalues.max()
}

/// Per-objective TD quantities.
#[derive(Debug, Clone, Serialize)]
pub struct ObjectiveTd {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub lambda_a: f64,
    /// `‖A‖_F`
    pub c_a: f64,
    pub w_star: Vec<f64>,
    pub w_star_norm: f64,
    /// `2r_max/λ_A` (discounted) or `4r_max/λ_A` (average).
    pub r_w: f64,
    pub within_bound: bool,
    /// `E_{d_θ}[(V(s) − φ(s)ᵀw*)²]`
    pub approx_error: f64,
}

fn objective_td(
    momdp: &TabularMomdp,
    table: &ProbTable,
    features: &FeatureMap,
    mode: Mode,
    i: usize,
    d: &[f64],
) -> Result<ObjectiveTd> {
    if features.num_states() != momdp.num_states() {
        return Err(Error::input("feature rows do not match the state count"));
    }
    let gamma = match mode {
        Mode::Discounted => momdp.discounts()[i],
        Mode::Average => 1.0,
    };
    let a = td_matrix(momdp, table, features, gamma, d);
    let lambda_a = negative_definiteness_margin(&a);
    if !(lambda_a > LAMBDA_A_MIN) {
        return Err(Error::Assumption(format!(
            "objective {i}: lambda_max(A + A^T) = {:.3e} is not negative",
            -lambda_a
        )));
    }
    let vals = exact_values(momdp, table, i, mode)?;
    let rbar = momdp.expected_reward(table, i);
    let offset = match mode {
        Mode::Discounted => 0.0,
        Mode::Average => vals.j,
    };
    let phi = features.matrix();
    let weighted = DVector::from_iterator(d.len(), d.iter().zip(&rbar).map(|(ds, r)| ds * (r - offset)));
    let b = phi.transpose() * weighted;
    let w = a
        .clone()
        .lu()
        .solve(&(-&b))
        .ok_or_else(|| Error::Assumption(format!("objective {i}: A is singular")))?;
    let approx_error = (0..momdp.num_states())
        .map(|s| d[s] * (vals.v[s] - features.value(s, w.as_slice())).powi(2))
        .sum();
    let scale = match mode {
        Mode::Discounted => 2.0,
        Mode::Average => 4.0,
    };
    let r_w = scale * momdp.r_max() / lambda_a;
    let w_star_norm = w.norm();
    Ok(ObjectiveTd {
        a: a.row_iter().map(|r| r.iter().copied().collect()).collect(),
        b: b.as_slice().to_vec(),
        lambda_a,
        c_a: a.norm(),
        w_star: w.as_slice().to_vec(),
        w_star_norm,
        r_w,
        within_bound: w_star_norm <= r_w * (1.0 + 1e-12),
        approx_error,
    })
}

/// TD fixed point `w* = −A⁻¹b` for objective `i`.
pub fn td_fixed_point(
    momdp: &TabularMomdp,
    table: &ProbTable,
    features: &FeatureMap,
    i: usize,
    mode: Mode,
) -> Result<Vec<f64>> {
    if i >= momdp.num_objectives() {
        return Err(Error::input(format!("objective {i} out of range")));
    }
    let d = stationary_distribution(momdp, table)?;
    Ok(objective_td(momdp, table, features, mode, i, &d)?.w_star)
}

/// Constants that parameterize the convergence analysis at one policy.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisConstants {
    pub mode: Mode,
    pub objectives: Vec<ObjectiveTd>,
    /// Smallest `λ_A` over objectives.
    pub lambda_a: f64,
    /// Largest `‖A‖_F` over objectives.
    pub c_a: f64,
    /// Largest `R_w` over objectives.
    pub r_w: f64,
    /// Largest approximation error over objectives at this policy.
    pub zeta_approx: f64,
    /// Critic step sizes above `min(λ_A/(8C_A²), 4/λ_A)` get a warning.
    pub beta_max: f64,
    pub mixing: MixingFit,
    pub l_hat: f64,
    /// `1/(3·L_hat)`
    pub alpha_suggested: f64,
    pub features: FeatureReport,
}

/// Computes every analysis constant at `policy`.
pub fn analysis_constants(
    momdp: &TabularMomdp,
    policy: &SoftmaxPolicy,
    features: &FeatureMap,
    mode: Mode,
) -> Result<AnalysisConstants> {
    let table = policy.table();
    let d = stationary_distribution(momdp, &table)?;
    let objectives = (0..momdp.num_objectives())
        .map(|i| objective_td(momdp, &table, features, mode, i, &d))
        .collect::<Result<Vec<_>>>()?;
    let lambda_a = objectives.iter().map(|o| o.lambda_a).fold(f64::INFINITY, f64::min);
    let c_a = objectives.iter().map(|o| o.c_a).fold(0.0, f64::max);
    let r_w = objectives.iter().map(|o| o.r_w).fold(0.0, f64::max);
    let zeta_approx = objectives.iter().map(|o| o.approx_error).fold(0.0, f64::max);
    let mixing = estimate_mixing(momdp, &table, MIXING_HORIZON)?;
    let l_hat = estimate_smoothness(momdp, policy, mode, GradientMeasure::Stationary, SMOOTHNESS_STEP)?;
    Ok(AnalysisConstants {
        mode,
        lambda_a,
        c_a,
        r_w,
        zeta_approx,
        beta_max: (lambda_a / (8.0 * c_a * c_a)).min(4.0 / lambda_a),
        mixing,
        l_hat,
        alpha_suggested: if l_hat > 0.0 { 1.0 / (3.0 * l_hat) } else { f64::INFINITY },
        features: check_feature_assumptions(features, mode),
        objectives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::momdp::stream_rng;
    use crate::oracle::exact_values_discounted;

    #[test]
    fn identity_features_recover_values() {
        let m = fixtures::conflicting_5x3();
        let t = SoftmaxPolicy::zeros(5, 3).table();
        for i in 0..2 {
            let w = td_fixed_point(&m, &t, &FeatureMap::identity(5), i, Mode::Discounted).unwrap();
            let v = exact_values_discounted(&m, &t, i).unwrap().v;
            for (a, b) in w.iter().zip(&v) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fixed_point_zeroes_the_mean_increment() {
        let m = fixtures::mixed_discount_4x2();
        let t = SoftmaxPolicy::zeros(4, 2).table();
        let mut rng = stream_rng(5);
        let f = FeatureMap::random_orthonormal(4, 2, &mut rng).unwrap();
        let d = stationary_distribution(&m, &t).unwrap();
        for i in 0..2 {
            let td = objective_td(&m, &t, &f, Mode::Discounted, i, &d).unwrap();
            let a = DMatrix::from_fn(2, 2, |r, c| td.a[r][c]);
            let res = a * DVector::from_column_slice(&td.w_star) + DVector::from_column_slice(&td.b);
            assert!(res.norm() < 1e-12);
            assert!(td.within_bound);
            assert!(td.approx_error > 0.0);
        }
    }

    #[test]
    fn average_mode_with_complement_features() {
        let m = fixtures::conflicting_3x2();
        let pol = SoftmaxPolicy::zeros(3, 2);
        let c = analysis_constants(&m, &pol, &FeatureMap::orthogonal_to_ones(3).unwrap(), Mode::Average).unwrap();
        assert!(c.lambda_a > 0.0);
        assert!(c.objectives.iter().all(|o| o.within_bound));
        assert!(c.features.passes());
    }

    #[test]
    fn average_mode_with_constant_direction_fails() {
        let m = fixtures::conflicting_3x2();
        let t = SoftmaxPolicy::zeros(3, 2).table();
        let err = td_fixed_point(&m, &t, &FeatureMap::identity(3), 0, Mode::Average).unwrap_err();
        assert!(err.to_string().contains("lambda_max(A + A^T)"));
    }
}
