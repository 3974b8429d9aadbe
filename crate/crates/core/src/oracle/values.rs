//! Exact stationary distributions and value functions by dense linear algebra.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::momdp::{require_ergodic, TabularMomdp};
use crate::policy::ProbTable;
use crate::Mode;

/// Above this many states the stationary distribution is found by power iteration.
pub const DENSE_STATE_LIMIT: usize = 200;

pub(crate) fn kernel_matrix(momdp: &TabularMomdp, table: &ProbTable) -> DMatrix<f64> {
    let ns = momdp.num_states();
    DMatrix::from_row_slice(ns, ns, &momdp.induced_kernel(table))
}

/// Stationary distribution `d_θ` of the induced chain, `d_θᵀ P_θ = d_θᵀ`.
pub fn stationary_distribution(momdp: &TabularMomdp, table: &ProbTable) -> Result<Vec<f64>> {
    require_ergodic(momdp, table)?;
    let ns = momdp.num_states();
    let p = kernel_matrix(momdp, table);
    let mut d = if ns <= DENSE_STATE_LIMIT {
        // (I − P)ᵀ d = 0 with one equation replaced by Σd = 1
        let mut sys = DMatrix::<f64>::identity(ns, ns) - p.transpose();
        for k in 0..ns {
            sys[(ns - 1, k)] = 1.0;
        }
        let mut rhs = DVector::zeros(ns);
        rhs[ns - 1] = 1.0;
        sys.lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NonErgodic("stationary system is singular".into()))?
    } else {
        let lazy = (p.transpose() + DMatrix::identity(ns, ns)) * 0.5;
        let mut d = DVector::from_element(ns, 1.0 / ns as f64);
        for _ in 0..1_000_000 {
            let next = &lazy * &d;
            let change = (&next - &d).lp_norm(1);
            d = next;
            if change < 1e-15 {
                break;
            }
        }
        d
    };
    d.iter_mut().for_each(|x| *x = x.max(0.0));
    let sum = d.sum();
    d /= sum;
    Ok(d.as_slice().to_vec())
}

/// `‖dᵀP_θ − dᵀ‖₁`
pub fn stationary_residual(momdp: &TabularMomdp, table: &ProbTable, d: &[f64]) -> f64 {
    let p = kernel_matrix(momdp, table);
    let dv = DVector::from_column_slice(d);
    (p.transpose() * &dv - dv).lp_norm(1)
}

/// Per-objective value functions. `q` and `adv` are `[s][a]` row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveValues {
    /// Objective value: `start_distᵀV` (discounted) or the average reward (average).
    pub j: f64,
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    pub adv: Vec<f64>,
}

fn q_and_adv(
    momdp: &TabularMomdp,
    table: &ProbTable,
    i: usize,
    v: &[f64],
    gamma: f64,
    offset: f64,
) -> (Vec<f64>, Vec<f64>) {
    let (ns, na) = (momdp.num_states(), momdp.num_actions());
    let mut q = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let next: f64 = momdp.transition_row(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
            q[s * na + a] = momdp.reward(s, a)[i] - offset + gamma * next;
        }
    }
    // Adv = Q − Σ_a π Q keeps Σ_a π Adv = 0 to rounding
    let mut adv = q.clone();
    for s in 0..ns {
        let row = &mut adv[s * na..(s + 1) * na];
        let vs: f64 = row.iter().zip(table.probs(s)).map(|(x, p)| x * p).sum();
        row.iter_mut().for_each(|x| *x -= vs);
    }
    (q, adv)
}

fn check_objective(momdp: &TabularMomdp, i: usize) -> Result<()> {
    if i >= momdp.num_objectives() {
        return Err(Error::input(format!("objective {i} out of range")));
    }
    Ok(())
}

/// Discounted values with the sum starting at `t = 0`:
/// `V = (I − γP_θ)⁻¹ r̄_θ`, `Q = r + γPV`, `Adv = Q − V`.
pub fn exact_values_discounted(momdp: &TabularMomdp, table: &ProbTable, i: usize) -> Result<ObjectiveValues> {
    check_objective(momdp, i)?;
    let ns = momdp.num_states();
    let gamma = momdp.discounts()[i];
    let sys = DMatrix::<f64>::identity(ns, ns) - kernel_matrix(momdp, table) * gamma;
    let rbar = DVector::from_vec(momdp.expected_reward(table, i));
    let v = sys
        .lu()
        .solve(&rbar)
        .ok_or_else(|| Error::input("discounted evaluation system is singular"))?;
    let v = v.as_slice().to_vec();
    let (q, adv) = q_and_adv(momdp, table, i, &v, gamma, 0.0);
    let j = momdp.start_dist().iter().zip(&v).map(|(a, b)| a * b).sum();
    Ok(ObjectiveValues { j, v, q, adv })
}

/// Average-reward values: `J = d_θᵀ r̄`, differential `V` from the Poisson equation
/// `(I − P_θ)V = r̄ − J𝟏` normalized by `d_θᵀV = 0`.
pub fn exact_values_average(momdp: &TabularMomdp, table: &ProbTable, i: usize) -> Result<ObjectiveValues> {
    check_objective(momdp, i)?;
    let d = stationary_distribution(momdp, table)?;
    exact_values_average_with(momdp, table, i, &d)
}

pub(crate) fn exact_values_average_with(
    momdp: &TabularMomdp,
    table: &ProbTable,
    i: usize,
    d: &[f64],
) -> Result<ObjectiveValues> {
    let ns = momdp.num_states();
    let rbar = momdp.expected_reward(table, i);
    let j: f64 = d.iter().zip(&rbar).map(|(a, b)| a * b).sum();
    // (I − P + 𝟏dᵀ)V = r̄ − J𝟏 forces dᵀV = 0 and is invertible for ergodic chains
    let dv = DVector::from_column_slice(d);
    let sys = DMatrix::<f64>::identity(ns, ns) - kernel_matrix(momdp, table)
        + DVector::from_element(ns, 1.0) * dv.transpose();
    let rhs = DVector::from_iterator(ns, rbar.iter().map(|r| r - j));
    let v = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NonErgodic("Poisson system is singular".into()))?;
    let v = v.as_slice().to_vec();
    let (q, adv) = q_and_adv(momdp, table, i, &v, 1.0, j);
    Ok(ObjectiveValues { j, v, q, adv })
}

/// Values for objective `i` in the given setting.
pub fn exact_values(momdp: &TabularMomdp, table: &ProbTable, i: usize, mode: Mode) -> Result<ObjectiveValues> {
    match mode {
        Mode::Discounted => exact_values_discounted(momdp, table, i),
        Mode::Average => exact_values_average(momdp, table, i),
    }
}

/// Objective vector `J(θ)`: `start_distᵀV^i` (discounted) or `J^i` (average).
pub fn objective_vector(momdp: &TabularMomdp, table: &ProbTable, mode: Mode) -> Result<Vec<f64>> {
    match mode {
        Mode::Discounted => (0..momdp.num_objectives())
            .map(|i| exact_values_discounted(momdp, table, i).map(|v| v.j))
            .collect(),
        Mode::Average => {
            let d = stationary_distribution(momdp, table)?;
            Ok((0..momdp.num_objectives())
                .map(|i| {
                    let rbar = momdp.expected_reward(table, i);
                    d.iter().zip(&rbar).map(|(a, b)| a * b).sum()
                })
                .collect())
        }
    }
}

/// Unnormalized discounted occupancy `ρ(s) = Σ_t γᵗ P(s_t = s)` from the start distribution.
pub fn discounted_occupancy_weights(momdp: &TabularMomdp, table: &ProbTable, gamma: f64) -> Result<Vec<f64>> {
    let ns = momdp.num_states();
    let sys = DMatrix::<f64>::identity(ns, ns) - kernel_matrix(momdp, table).transpose() * gamma;
    let start = DVector::from_column_slice(momdp.start_dist());
    let w = sys
        .lu()
        .solve(&start)
        .ok_or_else(|| Error::input("occupancy system is singular"))?;
    Ok(w.as_slice().to_vec())
}

/// Everything the oracle knows about one policy.
#[derive(Debug, Clone, Serialize)]
pub struct ExactEvaluation {
    pub mode: Mode,
    pub objectives: Vec<ObjectiveValues>,
    pub d_theta: Vec<f64>,
    /// Stationary state-action distribution `ν(s,a) = d(s)π(a|s)`, `[s][a]`.
    pub nu_theta: Vec<f64>,
    /// Normalized discounted occupancy `(1−γ_i)Σ_t γ_iᵗ P(s_t=s)` per objective (discounted mode).
    pub occupancy_gamma: Vec<Vec<f64>>,
}

impl ExactEvaluation {
    pub fn j(&self) -> Vec<f64> {
        self.objectives.iter().map(|o| o.j).collect()
    }
}

/// Full exact evaluation of a policy in either setting.
pub fn evaluate(momdp: &TabularMomdp, table: &ProbTable, mode: Mode) -> Result<ExactEvaluation> {
    let d = stationary_distribution(momdp, table)?;
    let na = momdp.num_actions();
    let nu = (0..momdp.num_states())
        .flat_map(|s| table.probs(s).iter().map(move |p| (s, *p)))
        .map(|(s, p)| d[s] * p)
        .collect::<Vec<_>>();
    debug_assert_eq!(nu.len(), momdp.num_states() * na);
    let m = momdp.num_objectives();
    let objectives = (0..m)
        .map(|i| match mode {
            Mode::Discounted => exact_values_discounted(momdp, table, i),
            Mode::Average => exact_values_average_with(momdp, table, i, &d),
        })
        .collect::<Result<Vec<_>>>()?;
    let occupancy_gamma = match mode {
        Mode::Discounted => momdp
            .discounts()
            .iter()
            .map(|&g| {
                discounted_occupancy_weights(momdp, table, g)
                    .map(|w| w.into_iter().map(|x| x * (1.0 - g)).collect())
            })
            .collect::<Result<Vec<_>>>()?,
        Mode::Average => Vec::new(),
    };
    Ok(ExactEvaluation { mode, objectives, d_theta: d, nu_theta: nu, occupancy_gamma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::momdp::{stream_rng, MomdpSpec};
    use crate::policy::SoftmaxPolicy;
    use rand::Rng;

    fn random_table(seed: u64, ns: usize, na: usize) -> ProbTable {
        let mut rng = stream_rng(seed);
        let theta = (0..ns * na).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        SoftmaxPolicy::tabular(ns, na, theta).unwrap().table()
    }

    fn constant_reward(c: f64) -> TabularMomdp {
        let mut spec = fixtures::conflicting_5x3().to_spec();
        for row in spec.rewards.iter_mut() {
            for r in row.iter_mut() {
                r.iter_mut().for_each(|x| *x = c);
            }
        }
        spec.try_into().unwrap()
    }

    #[test]
    fn doubly_stochastic_gives_uniform() {
        let ns = 4;
        let row = |s: usize| (0..ns).map(|t| if t == s { 0.4 } else { 0.2 }).collect::<Vec<_>>();
        let m: TabularMomdp = MomdpSpec {
            num_states: ns,
            num_actions: 1,
            num_objectives: 1,
            r_max: 1.0,
            transition: (0..ns).map(|s| vec![row(s)]).collect(),
            rewards: vec![vec![vec![0.0]]; ns],
            discounts: vec![0.9],
            start_dist: vec![0.25; ns],
        }
        .try_into()
        .unwrap();
        let d = stationary_distribution(&m, &SoftmaxPolicy::zeros(ns, 1).table()).unwrap();
        for x in d {
            assert!((x - 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn two_state_closed_form() {
        let (a, b) = (0.3, 0.1);
        let m = fixtures::two_state_chain(a, b);
        let d = stationary_distribution(&m, &SoftmaxPolicy::zeros(2, 1).table()).unwrap();
        assert!((d[0] - b / (a + b)).abs() < 1e-14);
        assert!((d[1] - a / (a + b)).abs() < 1e-14);
    }

    #[test]
    fn stationary_residual_is_tiny() {
        let m = fixtures::conflicting_5x3();
        for seed in 0..10 {
            let t = random_table(seed, 5, 3);
            let d = stationary_distribution(&m, &t).unwrap();
            assert!(stationary_residual(&m, &t, &d) <= 1e-10);
        }
    }

    #[test]
    fn non_ergodic_is_rejected() {
        let m = fixtures::two_state_chain(1.0, 1.0);
        assert!(matches!(
            stationary_distribution(&m, &SoftmaxPolicy::zeros(2, 1).table()),
            Err(Error::NonErgodic(_))
        ));
    }

    #[test]
    fn constant_reward_geometric_series() {
        let m = constant_reward(0.7);
        let t = random_table(1, 5, 3);
        for i in 0..2 {
            let vals = exact_values_discounted(&m, &t, i).unwrap();
            for v in &vals.v {
                assert!((v - 0.7 / (1.0 - 0.9)).abs() < 1e-10);
            }
            let avg = exact_values_average(&m, &t, i).unwrap();
            assert!((avg.j - 0.7).abs() < 1e-12);
            assert!(avg.v.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn myopic_limit() {
        let mut spec = fixtures::conflicting_5x3().to_spec();
        spec.discounts = vec![1e-9, 1e-9];
        let m: TabularMomdp = spec.try_into().unwrap();
        let t = random_table(2, 5, 3);
        let vals = exact_values_discounted(&m, &t, 0).unwrap();
        for (v, r) in vals.v.iter().zip(m.expected_reward(&t, 0)) {
            assert!((v - r).abs() < 1e-8);
        }
    }

    #[test]
    fn bellman_and_consistency_residuals() {
        for m in [fixtures::conflicting_5x3(), fixtures::mixed_discount_4x2()] {
            let (ns, na) = (m.num_states(), m.num_actions());
            let t = random_table(3, ns, na);
            let p = m.induced_kernel(&t);
            for i in 0..m.num_objectives() {
                let vals = exact_values_discounted(&m, &t, i).unwrap();
                let g = m.discounts()[i];
                let rbar = m.expected_reward(&t, i);
                for s in 0..ns {
                    let pv: f64 = (0..ns).map(|k| p[s * ns + k] * vals.v[k]).sum();
                    assert!((vals.v[s] - (rbar[s] + g * pv)).abs() <= 1e-10);
                    let qv: f64 = (0..na).map(|a| t.probs(s)[a] * vals.q[s * na + a]).sum();
                    assert!((vals.v[s] - qv).abs() <= 1e-10);
                    let av: f64 = (0..na).map(|a| t.probs(s)[a] * vals.adv[s * na + a]).sum();
                    assert!(av.abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn poisson_residual_and_normalization() {
        let m = fixtures::conflicting_5x3();
        let t = random_table(4, 5, 3);
        let d = stationary_distribution(&m, &t).unwrap();
        let p = m.induced_kernel(&t);
        for i in 0..2 {
            let vals = exact_values_average(&m, &t, i).unwrap();
            let rbar = m.expected_reward(&t, i);
            for s in 0..5 {
                let pv: f64 = (0..5).map(|k| p[s * 5 + k] * vals.v[k]).sum();
                assert!((vals.v[s] - pv - (rbar[s] - vals.j)).abs() <= 1e-10);
            }
            let dv: f64 = d.iter().zip(&vals.v).map(|(a, b)| a * b).sum();
            assert!(dv.abs() <= 1e-12);
        }
    }

    #[test]
    fn two_state_poisson_by_hand() {
        // r = (0, 1), flips a, b: J = a/(a+b); V(0) − V(1) = −1/(a+b); dᵀV = 0
        let (a, b) = (0.3, 0.2);
        let m = fixtures::two_state_chain(a, b);
        let vals = exact_values_average(&m, &SoftmaxPolicy::zeros(2, 1).table(), 0).unwrap();
        let j = a / (a + b);
        let gap = -1.0 / (a + b);
        let v1 = -(b / (a + b)) * gap;
        let v0 = v1 + gap;
        assert!((vals.j - j).abs() < 1e-14);
        assert!((vals.v[0] - v0).abs() < 1e-12);
        assert!((vals.v[1] - v1).abs() < 1e-12);
    }

    #[test]
    fn full_evaluation_distributions_sum_to_one() {
        let m = fixtures::conflicting_5x3();
        let ev = evaluate(&m, &random_table(6, 5, 3), Mode::Discounted).unwrap();
        assert!((ev.d_theta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((ev.nu_theta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for occ in &ev.occupancy_gamma {
            assert!((occ.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
