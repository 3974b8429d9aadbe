//! Geometric mixing fit `max_s TV(Pᵗ(·|s), d) ≤ κρᵗ`.

use nalgebra::DMatrix;
use serde::Serialize;

use super::values::{kernel_matrix, stationary_distribution};
use crate::error::{Error, Result};
use crate::momdp::TabularMomdp;
use crate::policy::ProbTable;

/// Points at or below this distance are treated as numerically mixed and left out of the fit.
pub const TV_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingFit {
    /// `m_t = max_{s₀} TV(Pᵗ(·|s₀), d)` for `t = 0..=horizon`.
    pub tv: Vec<f64>,
    pub kappa: f64,
    pub rho: f64,
    /// Number of points used in the log-linear fit.
    pub fitted_points: usize,
}

/// Exact TV sequence and a least-squares fit of `log m_t` against `t`.
pub fn estimate_mixing(momdp: &TabularMomdp, table: &ProbTable, horizon: usize) -> Result<MixingFit> {
    if horizon == 0 {
        return Err(Error::input("mixing horizon must be positive"));
    }
    let d = stationary_distribution(momdp, table)?;
    let ns = momdp.num_states();
    let p = kernel_matrix(momdp, table);
    let mut pt = DMatrix::<f64>::identity(ns, ns);
    let mut tv = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        if t > 0 {
            pt = &pt * &p;
        }
        let worst = (0..ns)
            .map(|s| 0.5 * (0..ns).map(|k| (pt[(s, k)] - d[k]).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        tv.push(worst);
    }

    let pts: Vec<(f64, f64)> = tv
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > TV_FLOOR)
        .map(|(t, &m)| (t as f64, m.ln()))
        .collect();
    if pts.len() < 2 {
        // mixes in at most one step
        let kappa = tv[0].max(f64::EPSILON);
        return Ok(MixingFit { tv, kappa, rho: f64::EPSILON, fitted_points: pts.len() });
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| (t - mt).powi(2)).sum();
    let rho = (sxy / sxx).exp().clamp(f64::EPSILON, 1.0);
    let kappa = pts
        .iter()
        .map(|&(t, y)| (y - t * rho.ln()).exp())
        .fold(f64::EPSILON, f64::max);
    Ok(MixingFit { tv, kappa, rho, fitted_points: pts.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::policy::SoftmaxPolicy;

    #[test]
    fn two_state_rate_is_second_eigenvalue() {
        for (a, b) in [(0.1, 0.2), (0.3, 0.3), (0.05, 0.4)] {
            let m = fixtures::two_state_chain(a, b);
            let fit = estimate_mixing(&m, &SoftmaxPolicy::zeros(2, 1).table(), 100).unwrap();
            assert!((fit.rho - (1.0 - a - b).abs()).abs() < 1e-4, "{a} {b} {}", fit.rho);
            for t in 0..fit.tv.len() {
                assert!(fit.tv[t] <= fit.kappa * fit.rho.powi(t as i32) * (1.0 + 1e-9) || fit.tv[t] <= TV_FLOOR);
            }
        }
    }

    #[test]
    fn tv_never_increases() {
        let m = fixtures::conflicting_5x3();
        let fit = estimate_mixing(&m, &SoftmaxPolicy::zeros(5, 3).table(), 60).unwrap();
        assert!(fit.tv.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        assert!(fit.rho > 0.0 && fit.rho < 1.0);
    }

    #[test]
    fn instant_mixing_reports_tiny_rate() {
        let m = fixtures::two_state_chain(0.5, 0.5);
        let fit = estimate_mixing(&m, &SoftmaxPolicy::zeros(2, 1).table(), 10).unwrap();
        assert_eq!(fit.rho, f64::EPSILON);
        assert!((fit.tv[0] - 0.5).abs() < 1e-15);
    }
}
