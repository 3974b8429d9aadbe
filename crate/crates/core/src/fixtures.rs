//! Desk-scale MOMDP instances shipped with the crate.
//!
//! Each fixture is also stored as JSON under `fixtures/`; a test keeps the two in sync.

use crate::momdp::{MomdpSpec, TabularMomdp};
use crate::policy::FeatureMap;
use crate::Mode;

fn build(spec: MomdpSpec) -> TabularMomdp {
    spec.try_into().expect("shipped fixture is valid")
}

/// Row with `main` mass on `target` and the rest spread uniformly over all states.
fn mixed_row(ns: usize, target: usize, main: f64) -> Vec<f64> {
    let spread = (1.0 - main) / ns as f64;
    let mut row = vec![spread; ns];
    row[target] += main;
    row
}

/// 5 states, 3 actions, 2 conflicting objectives.
///
/// Action 0 pays objective 1, action 2 pays objective 2, action 1 pays both
/// moderately. Every action puts mass 0.3 uniformly on all states, so the
/// chain is ergodic under every policy.
pub fn conflicting_5x3() -> TabularMomdp {
    let ns = 5;
    let rewards = [
        [[1.0, 0.0], [0.6, 0.55], [0.1, 0.9]],
        [[0.9, 0.1], [0.5, 0.6], [0.0, 1.0]],
        [[0.8, 0.0], [0.6, 0.6], [0.2, 0.8]],
        [[1.0, 0.2], [0.55, 0.5], [0.0, 0.9]],
        [[0.7, 0.0], [0.6, 0.65], [0.1, 1.0]],
    ];
    build(MomdpSpec {
        num_states: ns,
        num_actions: 3,
        num_objectives: 2,
        r_max: 1.0,
        transition: (0..ns)
            .map(|s| (0..3).map(|a| mixed_row(ns, (s + a + 1) % ns, 0.7)).collect())
            .collect(),
        rewards: rewards
            .iter()
            .map(|row| row.iter().map(|r| r.to_vec()).collect())
            .collect(),
        discounts: vec![0.9, 0.9],
        start_dist: vec![0.2; ns],
    })
}

/// Same dynamics as [`conflicting_5x3`] with `r² = r_max − r¹`, so `∇J² = −∇J¹`
/// everywhere and every policy is Pareto stationary.
pub fn antipodal_5x3() -> TabularMomdp {
    let mut spec = conflicting_5x3().to_spec();
    for row in spec.rewards.iter_mut() {
        for r in row.iter_mut() {
            r[1] = 1.0 - r[0];
        }
    }
    build(spec)
}

/// 3 states, 2 actions, 2 objectives; small enough to enumerate by hand.
pub fn conflicting_3x2() -> TabularMomdp {
    let ns = 3;
    let rewards = [
        [[1.0, 0.0], [0.0, 1.0]],
        [[0.5, 0.5], [0.2, 0.9]],
        [[0.9, 0.3], [0.3, 0.7]],
    ];
    build(MomdpSpec {
        num_states: ns,
        num_actions: 2,
        num_objectives: 2,
        r_max: 1.0,
        transition: (0..ns)
            .map(|s| vec![mixed_row(ns, (s + 1) % ns, 0.8), mixed_row(ns, s, 0.8)])
            .collect(),
        rewards: rewards
            .iter()
            .map(|row| row.iter().map(|r| r.to_vec()).collect())
            .collect(),
        discounts: vec![0.8, 0.8],
        start_dist: vec![1.0 / 3.0; ns],
    })
}

/// 4 states, 2 actions, 2 objectives with very different discounts (0.95 and 0.5).
pub fn mixed_discount_4x2() -> TabularMomdp {
    let transition = vec![
        vec![vec![0.1, 0.6, 0.2, 0.1], vec![0.5, 0.1, 0.1, 0.3]],
        vec![vec![0.2, 0.1, 0.6, 0.1], vec![0.3, 0.3, 0.2, 0.2]],
        vec![vec![0.1, 0.1, 0.1, 0.7], vec![0.25, 0.25, 0.25, 0.25]],
        vec![vec![0.7, 0.1, 0.1, 0.1], vec![0.1, 0.4, 0.4, 0.1]],
    ];
    let rewards = vec![
        vec![vec![0.2, 0.9], vec![0.8, 0.1]],
        vec![vec![0.0, 0.5], vec![1.0, 0.3]],
        vec![vec![0.4, 1.0], vec![0.6, 0.0]],
        vec![vec![0.9, 0.2], vec![0.1, 0.7]],
    ];
    build(MomdpSpec {
        num_states: 4,
        num_actions: 2,
        num_objectives: 2,
        r_max: 1.0,
        transition,
        rewards,
        discounts: vec![0.95, 0.5],
        start_dist: vec![0.4, 0.3, 0.2, 0.1],
    })
}

/// 4 states, 5 actions, 5 objectives: action `i` pays objective `i` fully and
/// every other objective a little, with a state-dependent tilt.
pub fn five_objective_4x5() -> TabularMomdp {
    let (ns, na, m) = (4, 5, 5);
    build(MomdpSpec {
        num_states: ns,
        num_actions: na,
        num_objectives: m,
        r_max: 1.0,
        transition: (0..ns)
            .map(|s| (0..na).map(|a| mixed_row(ns, (s + a) % ns, 0.6)).collect())
            .collect(),
        rewards: (0..ns)
            .map(|s| {
                (0..na)
                    .map(|a| {
                        (0..m)
                            .map(|i| if i == a { 1.0 - 0.1 * s as f64 } else { 0.05 * ((s + i) % 3) as f64 })
                            .collect()
                    })
                    .collect()
            })
            .collect(),
        discounts: vec![0.9; m],
        start_dist: vec![0.25; ns],
    })
}

/// Single-action 2-state chain flipping `0 → 1` w.p. `a` and `1 → 0` w.p. `b`.
///
/// Reward is 1 in state 1 and 0 in state 0. The second eigenvalue is `1 − a − b`.
pub fn two_state_chain(a: f64, b: f64) -> TabularMomdp {
    build(MomdpSpec {
        num_states: 2,
        num_actions: 1,
        num_objectives: 1,
        r_max: 1.0,
        transition: vec![vec![vec![1.0 - a, a]], vec![vec![b, 1.0 - b]]],
        rewards: vec![vec![vec![0.0]], vec![vec![1.0]]],
        discounts: vec![0.9],
        start_dist: vec![1.0, 0.0],
    })
}

/// A named fixture together with the feature map and setting it is shipped for.
pub struct ShippedFixture {
    pub name: &'static str,
    pub momdp: TabularMomdp,
    pub features: FeatureMap,
    pub mode: Mode,
}

/// Every fixture/feature/setting combination the crate ships.
pub fn shipped() -> Vec<ShippedFixture> {
    let mut out = Vec::new();
    let named: [(&'static str, TabularMomdp); 7] = [
        ("conflicting_5x3", conflicting_5x3()),
        ("antipodal_5x3", antipodal_5x3()),
        ("conflicting_3x2", conflicting_3x2()),
        ("mixed_discount_4x2", mixed_discount_4x2()),
        ("five_objective_4x5", five_objective_4x5()),
        ("two_state_fast", two_state_chain(0.3, 0.2)),
        ("two_state_slow", two_state_chain(0.05, 0.1)),
    ];
    for (name, momdp) in named {
        let ns = momdp.num_states();
        out.push(ShippedFixture {
            name,
            features: FeatureMap::identity(ns),
            momdp: momdp.clone(),
            mode: Mode::Discounted,
        });
        out.push(ShippedFixture {
            name,
            features: FeatureMap::orthogonal_to_ones(ns).expect("at least two states"),
            momdp,
            mode: Mode::Average,
        });
    }
    out
}

/// JSON file name under `fixtures/` for each shipped MOMDP.
pub fn json_files() -> Vec<(&'static str, TabularMomdp)> {
    vec![
        ("conflicting_5x3.json", conflicting_5x3()),
        ("antipodal_5x3.json", antipodal_5x3()),
        ("conflicting_3x2.json", conflicting_3x2()),
        ("mixed_discount_4x2.json", mixed_discount_4x2()),
        ("five_objective_4x5.json", five_objective_4x5()),
        ("two_state.json", two_state_chain(0.3, 0.2)),
    ]
}
