//! Pareto fronts by enumerating every deterministic policy.

use serde::Serialize;

use super::values::objective_vector;
use crate::error::{Error, Result};
use crate::momdp::TabularMomdp;
use crate::par;
use crate::policy::ProbTable;
use crate::Mode;

/// Largest `|A|^|S|` the enumeration accepts.
pub const FRONT_GUARD: f64 = 1e6;
/// Objective vectors closer than this in every coordinate are merged.
pub const DEDUP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontPoint {
    /// Action taken in each state.
    pub actions: Vec<usize>,
    pub j: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoFront {
    /// Not weakly dominated by any other vector (no vector is ≥ everywhere and > somewhere).
    pub strict: Vec<FrontPoint>,
    /// Not strictly dominated (no vector is > in every coordinate).
    pub weak: Vec<FrontPoint>,
    /// Number of deterministic policies evaluated.
    pub evaluated: usize,
}

/// `a` dominates `b`: `a ≥ b` everywhere and `a > b` somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y)
}

/// `a > b` in every coordinate.
pub fn strictly_dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x > y)
}

/// `point` is ε-non-dominated with respect to `front`: no front vector beats it by more than `eps`
/// in every coordinate.
pub fn eps_non_dominated(point: &[f64], front: &[FrontPoint], eps: f64) -> bool {
    !front.iter().any(|f| f.j.iter().zip(point).all(|(x, y)| *x > y + eps))
}

fn decode(mut k: usize, ns: usize, na: usize) -> Vec<usize> {
    let mut actions = vec![0; ns];
    for a in actions.iter_mut() {
        *a = k % na;
        k /= na;
    }
    actions
}

/// Enumerates all `|A|^|S|` deterministic policies and returns the strict and weak fronts.
///
/// In the average setting every deterministic policy must induce an ergodic chain.
pub fn brute_force_pareto_front(momdp: &TabularMomdp, mode: Mode, parallel: bool) -> Result<ParetoFront> {
    let (ns, na) = (momdp.num_states(), momdp.num_actions());
    let count = (na as f64).powi(ns as i32);
    if count > FRONT_GUARD {
        return Err(Error::TooLarge(format!(
            "{na}^{ns} = {count:.3e} deterministic policies exceeds the limit of {FRONT_GUARD:.0e}"
        )));
    }
    let count = count as usize;
    let evaluated = par::map_range(count, parallel, |k| {
        let actions = decode(k, ns, na);
        let table = ProbTable::deterministic(na, &actions);
        objective_vector(momdp, &table, mode).map(|j| FrontPoint { actions, j })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut unique: Vec<FrontPoint> = Vec::new();
    for p in evaluated {
        let dup = unique
            .iter()
            .any(|u| u.j.iter().zip(&p.j).all(|(x, y)| (x - y).abs() <= DEDUP_TOL));
        if !dup {
            unique.push(p);
        }
    }
    let strict = unique
        .iter()
        .filter(|p| !unique.iter().any(|q| dominates(&q.j, &p.j)))
        .cloned()
        .collect();
    let weak = unique
        .iter()
        .filter(|p| !unique.iter().any(|q| strictly_dominates(&q.j, &p.j)))
        .cloned()
        .collect();
    Ok(ParetoFront { strict, weak, evaluated: count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::momdp::MomdpSpec;

    #[test]
    fn decode_covers_every_policy_once() {
        let all: std::collections::HashSet<Vec<usize>> = (0..27).map(|k| decode(k, 3, 3)).collect();
        assert_eq!(all.len(), 27);
    }

    #[test]
    fn strict_front_is_inside_weak_front() {
        let m = fixtures::conflicting_3x2();
        let f = brute_force_pareto_front(&m, Mode::Discounted, true).unwrap();
        assert_eq!(f.evaluated, 8);
        for p in &f.strict {
            assert!(f.weak.contains(p));
        }
        for p in &f.weak {
            assert!(!f.weak.iter().any(|q| strictly_dominates(&q.j, &p.j)));
        }
        assert_eq!(f, brute_force_pareto_front(&m, Mode::Discounted, false).unwrap());
    }

    #[test]
    fn single_objective_front_is_the_optimum() {
        let mut spec: MomdpSpec = fixtures::conflicting_3x2().to_spec();
        spec.num_objectives = 1;
        spec.discounts.truncate(1);
        for row in spec.rewards.iter_mut() {
            for r in row.iter_mut() {
                r.truncate(1);
            }
        }
        let m: TabularMomdp = spec.try_into().unwrap();
        let f = brute_force_pareto_front(&m, Mode::Discounted, false).unwrap();
        assert_eq!(f.strict.len(), 1);
        let best = (0..8)
            .map(|k| objective_vector(&m, &ProbTable::deterministic(2, &decode(k, 3, 2)), Mode::Discounted).unwrap()[0])
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(f.strict[0].j[0], best);
    }

    #[test]
    fn guard_rejects_large_instances() {
        let ns = 21;
        let spec = MomdpSpec {
            num_states: ns,
            num_actions: 2,
            num_objectives: 1,
            r_max: 1.0,
            transition: vec![vec![vec![1.0 / ns as f64; ns]; 2]; ns],
            rewards: vec![vec![vec![0.0]; 2]; ns],
            discounts: vec![0.9],
            start_dist: vec![1.0 / ns as f64; ns],
        };
        let m: TabularMomdp = spec.try_into().unwrap();
        assert!(matches!(brute_force_pareto_front(&m, Mode::Discounted, false), Err(Error::TooLarge(_))));
    }

    #[test]
    fn eps_domination() {
        let front = vec![FrontPoint { actions: vec![], j: vec![1.0, 1.0] }];
        assert!(eps_non_dominated(&[0.96, 0.2], &front, 0.05));
        assert!(!eps_non_dominated(&[0.9, 0.9], &front, 0.05));
    }
}
