//! Tabular multi-objective MDPs: definition, validation, and Markovian sampling.
//!
//! Indices follow `transition[s][a][s']` and `rewards[s][a][i]`. Rewards are
//! deterministic functions of `(s, a)`; the sampler only draws next states.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::ProbTable;

/// Random stream used everywhere a run draws samples.
///
/// ChaCha is counter based, so a stream is fully determined by its seed and
/// (optionally) its stream id, independent of thread scheduling.
pub type StreamRng = ChaCha8Rng;

/// Builds the random stream of a run from its seed.
pub fn stream_rng(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Builds an auxiliary stream that never overlaps the main stream of the same seed.
pub fn aux_stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Tolerance used for the row-sum and start-distribution checks.
pub const PROB_TOL: f64 = 1e-9;

/// On-disk form of a MOMDP, mirroring the JSON schema field for field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomdpSpec {
    pub num_states: usize,
    pub num_actions: usize,
    pub num_objectives: usize,
    pub r_max: f64,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<Vec<Vec<f64>>>,
    pub discounts: Vec<f64>,
    pub start_dist: Vec<f64>,
}

impl MomdpSpec {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// One violated invariant found by [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptySpace { what: String },
    Shape { what: String, expected: usize, found: usize },
    TransitionEntry { state: usize, action: usize, next: usize, value: f64 },
    TransitionRowSum { state: usize, action: usize, sum: f64 },
    RewardBound { state: usize, action: usize, objective: usize, value: f64, r_max: f64 },
    RMax { value: f64 },
    Discount { objective: usize, value: f64 },
    StartEntry { state: usize, value: f64 },
    StartSum { sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptySpace { what } => write!(f, "{what} must be positive"),
            Violation::Shape { what, expected, found } => {
                write!(f, "{what}: expected length {expected}, found {found}")
            }
            Violation::TransitionEntry { state, action, next, value } => write!(
                f,
                "transition[{state}][{action}][{next}] = {value} is outside [0, 1]"
            ),
            Violation::TransitionRowSum { state, action, sum } => {
                write!(f, "transition row P[{state}][{action}] sums to {sum}")
            }
            Violation::RewardBound { state, action, objective, value, r_max } => write!(
                f,
                "rewards[{state}][{action}][{objective}] = {value} is outside [0, {r_max}]"
            ),
            Violation::RMax { value } => write!(f, "r_max = {value} must be positive and finite"),
            Violation::Discount { objective, value } => {
                write!(f, "discounts[{objective}] = {value} is outside (0, 1)")
            }
            Violation::StartEntry { state, value } => {
                write!(f, "start_dist[{state}] = {value} is outside [0, 1]")
            }
            Violation::StartSum { sum } => write!(f, "start_dist sums to {sum}"),
        }
    }
}

/// Result of [`validate`]: empty when the MOMDP is well formed.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks every structural invariant of a MOMDP and lists the violations.
pub fn validate(spec: &MomdpSpec) -> ValidationReport {
    let mut out = Vec::new();
    let (ns, na, m) = (spec.num_states, spec.num_actions, spec.num_objectives);
    for (what, n) in [("num_states", ns), ("num_actions", na), ("num_objectives", m)] {
        if n == 0 {
            out.push(Violation::EmptySpace { what: what.into() });
        }
    }
    if !(spec.r_max.is_finite() && spec.r_max > 0.0) {
        out.push(Violation::RMax { value: spec.r_max });
    }

    let mut shape = |what: String, expected: usize, found: usize| {
        if expected != found {
            out.push(Violation::Shape { what, expected, found });
            false
        } else {
            true
        }
    };
    let mut shapes_ok = shape("transition".into(), ns, spec.transition.len());
    shapes_ok &= shape("rewards".into(), ns, spec.rewards.len());
    shapes_ok &= shape("discounts".into(), m, spec.discounts.len());
    shapes_ok &= shape("start_dist".into(), ns, spec.start_dist.len());
    if shapes_ok {
        for s in 0..ns {
            shapes_ok &= shape(format!("transition[{s}]"), na, spec.transition[s].len());
            shapes_ok &= shape(format!("rewards[{s}]"), na, spec.rewards[s].len());
            if spec.transition[s].len() == na && spec.rewards[s].len() == na {
                for a in 0..na {
                    shapes_ok &=
                        shape(format!("transition[{s}][{a}]"), ns, spec.transition[s][a].len());
                    shapes_ok &= shape(format!("rewards[{s}][{a}]"), m, spec.rewards[s][a].len());
                }
            }
        }
    }
    if !shapes_ok {
        return ValidationReport { violations: out };
    }

    for s in 0..ns {
        for a in 0..na {
            let row = &spec.transition[s][a];
            for (next, &p) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    out.push(Violation::TransitionEntry { state: s, action: a, next, value: p });
                }
            }
            let sum: f64 = row.iter().sum();
            if !((sum - 1.0).abs() <= PROB_TOL) {
                out.push(Violation::TransitionRowSum { state: s, action: a, sum });
            }
            for (i, &r) in spec.rewards[s][a].iter().enumerate() {
                if !(r >= 0.0 && r <= spec.r_max) {
                    out.push(Violation::RewardBound {
                        state: s,
                        action: a,
                        objective: i,
                        value: r,
                        r_max: spec.r_max,
                    });
                }
            }
        }
    }
    for (i, &g) in spec.discounts.iter().enumerate() {
        if !(g > 0.0 && g < 1.0) {
            out.push(Violation::Discount { objective: i, value: g });
        }
    }
    for (s, &p) in spec.start_dist.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            out.push(Violation::StartEntry { state: s, value: p });
        }
    }
    let sum: f64 = spec.start_dist.iter().sum();
    if !((sum - 1.0).abs() <= PROB_TOL) {
        out.push(Violation::StartSum { sum });
    }
    ValidationReport { violations: out }
}

/// A validated tabular MOMDP stored in flat row-major arrays.
///
/// Immutable once built and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMomdp {
    num_states: usize,
    num_actions: usize,
    num_objectives: usize,
    r_max: f64,
    /// `[s][a][s']`
    transition: Vec<f64>,
    /// Cumulative sums of each transition row, used by the sampler.
    cdf: Vec<f64>,
    /// `[s][a][i]`
    rewards: Vec<f64>,
    discounts: Vec<f64>,
    start_dist: Vec<f64>,
    start_cdf: Vec<f64>,
}

fn cumulative(row: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    row.iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

/// Inverse-CDF draw; the last index absorbs any rounding shortfall.
#[inline]
pub(crate) fn sample_index(cdf: &[f64], u: f64) -> usize {
    for (k, &c) in cdf.iter().enumerate() {
        if u < c {
            return k;
        }
    }
    // Rows that end in zero-probability entries must never pick those.
    let last_positive = cdf
        .iter()
        .enumerate()
        .rev()
        .find(|&(k, &c)| k == 0 || c > cdf[k - 1])
        .map(|(k, _)| k)
        .unwrap_or(cdf.len() - 1);
    last_positive
}

impl TryFrom<MomdpSpec> for TabularMomdp {
    type Error = Error;

    fn try_from(spec: MomdpSpec) -> Result<Self> {
        let report = validate(&spec);
        if !report.is_valid() {
            return Err(Error::Input(format!("invalid MOMDP: {report}")));
        }
        let (ns, na) = (spec.num_states, spec.num_actions);
        let mut transition = Vec::with_capacity(ns * na * ns);
        let mut cdf = Vec::with_capacity(ns * na * ns);
        let mut rewards = Vec::with_capacity(ns * na * spec.num_objectives);
        for s in 0..ns {
            for a in 0..na {
                transition.extend_from_slice(&spec.transition[s][a]);
                cdf.extend(cumulative(&spec.transition[s][a]));
                rewards.extend_from_slice(&spec.rewards[s][a]);
            }
        }
        Ok(TabularMomdp {
            num_states: ns,
            num_actions: na,
            num_objectives: spec.num_objectives,
            r_max: spec.r_max,
            transition,
            cdf,
            rewards,
            start_cdf: cumulative(&spec.start_dist),
            discounts: spec.discounts,
            start_dist: spec.start_dist,
        })
    }
}

impl TabularMomdp {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        MomdpSpec::load(path)?.try_into()
    }

    pub fn to_spec(&self) -> MomdpSpec {
        let (ns, na, m) = (self.num_states, self.num_actions, self.num_objectives);
        MomdpSpec {
            num_states: ns,
            num_actions: na,
            num_objectives: m,
            r_max: self.r_max,
            transition: (0..ns)
                .map(|s| (0..na).map(|a| self.transition_row(s, a).to_vec()).collect())
                .collect(),
            rewards: (0..ns)
                .map(|s| (0..na).map(|a| self.reward(s, a).to_vec()).collect())
                .collect(),
            discounts: self.discounts.clone(),
            start_dist: self.start_dist.clone(),
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
    pub fn num_objectives(&self) -> usize {
        self.num_objectives
    }
    pub fn r_max(&self) -> f64 {
        self.r_max
    }
    pub fn discounts(&self) -> &[f64] {
        &self.discounts
    }
    pub fn start_dist(&self) -> &[f64] {
        &self.start_dist
    }

    /// `P[s][a][·]`
    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.num_actions + a) * self.num_states;
        &self.transition[base..base + self.num_states]
    }

    /// `r[s][a][·]`
    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.num_actions + a) * self.num_objectives;
        &self.rewards[base..base + self.num_objectives]
    }

    fn check_ids(&self, s: usize, a: usize) -> Result<()> {
        if s >= self.num_states {
            return Err(Error::input(format!("state {s} out of range (|S| = {})", self.num_states)));
        }
        if a >= self.num_actions {
            return Err(Error::input(format!("action {a} out of range (|A| = {})", self.num_actions)));
        }
        Ok(())
    }

    /// Draws `s' ~ P[s][a][·]` and returns it with the deterministic reward `r[s][a][·]`.
    pub fn step<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> Result<(usize, &[f64])> {
        self.check_ids(s, a)?;
        Ok((self.next_state(s, a, rng), self.reward(s, a)))
    }

    #[inline]
    pub(crate) fn next_state<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        let base = (s * self.num_actions + a) * self.num_states;
        sample_index(&self.cdf[base..base + self.num_states], rng.random::<f64>())
    }

    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.start_cdf, rng.random::<f64>())
    }

    /// State kernel `P_θ(s'|s) = Σ_a π(a|s) P(s'|s,a)` as a row-major `|S| x |S|` matrix.
    pub fn induced_kernel(&self, table: &ProbTable) -> Vec<f64> {
        let ns = self.num_states;
        let mut k = vec![0.0; ns * ns];
        for s in 0..ns {
            let row = &mut k[s * ns..(s + 1) * ns];
            for (a, &pa) in table.probs(s).iter().enumerate() {
                for (dst, &p) in row.iter_mut().zip(self.transition_row(s, a)) {
                    *dst += pa * p;
                }
            }
        }
        k
    }

    /// Expected one-step reward `r̄_θ(s) = Σ_a π(a|s) r^i(s,a)` for objective `i`.
    pub fn expected_reward(&self, table: &ProbTable, objective: usize) -> Vec<f64> {
        (0..self.num_states)
            .map(|s| {
                table
                    .probs(s)
                    .iter()
                    .enumerate()
                    .map(|(a, &pa)| pa * self.reward(s, a)[objective])
                    .sum()
            })
            .collect()
    }
}

/// One sampled transition `(s, a, r, s')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStep {
    pub state: usize,
    pub action: usize,
    pub reward_vec: Vec<f64>,
    pub next_state: usize,
}

/// A single Markovian sample stream: current state, owned RNG, and a transition counter.
///
/// Critic and actor phases both draw from the same stream so the chain is
/// never reset between batches.
#[derive(Debug, Clone)]
pub struct MarkovStream {
    state: usize,
    rng: StreamRng,
    transitions: u64,
}

impl MarkovStream {
    pub fn new(state: usize, rng: StreamRng) -> Self {
        MarkovStream { state, rng, transitions: 0 }
    }

    /// Starts a stream at a state drawn from the MOMDP's start distribution.
    pub fn from_start(momdp: &TabularMomdp, mut rng: StreamRng) -> Self {
        let s0 = momdp.sample_start(&mut rng);
        Self::new(s0, rng)
    }

    pub fn state(&self) -> usize {
        self.state
    }

    /// Number of environment transitions drawn so far.
    pub fn transitions(&self) -> u64 {
        self.transitions
    }

    pub fn rng(&mut self) -> &mut StreamRng {
        &mut self.rng
    }

    /// Takes one step under `table`, returning `(s, a, s')`.
    #[inline]
    pub fn advance(&mut self, momdp: &TabularMomdp, table: &ProbTable) -> (usize, usize, usize) {
        let s = self.state;
        let a = table.sample_action(s, &mut self.rng);
        let next = momdp.next_state(s, a, &mut self.rng);
        self.state = next;
        self.transitions += 1;
        (s, a, next)
    }
}

/// Samples a Markovian trajectory of `length` steps starting at `s0`, with no resets.
pub fn sample_trajectory<R: Rng + ?Sized>(
    momdp: &TabularMomdp,
    table: &ProbTable,
    s0: usize,
    length: usize,
    rng: &mut R,
) -> Result<Vec<SampleStep>> {
    if length == 0 {
        return Err(Error::input("trajectory length must be at least 1"));
    }
    if table.num_states() != momdp.num_states() || table.num_actions() != momdp.num_actions() {
        return Err(Error::input("policy shape does not match MOMDP"));
    }
    let mut s = s0;
    let mut out = Vec::with_capacity(length);
    for _ in 0..length {
        let a = table.sample_action_checked(s, rng)?;
        let (next, r) = momdp.step(s, a, rng)?;
        out.push(SampleStep { state: s, action: a, reward_vec: r.to_vec(), next_state: next });
        s = next;
    }
    Ok(out)
}

/// Irreducibility / aperiodicity diagnostics for the induced state chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicityReport {
    pub ergodic: bool,
    pub irreducible: bool,
    /// gcd of cycle lengths (meaningful when irreducible).
    pub period: usize,
    /// A pair `(from, to)` with `to` unreachable from `from`, if any.
    pub unreachable: Option<(usize, usize)>,
}

fn bfs_levels(adj: &[Vec<usize>], root: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[root] = Some(0);
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        let lu = level[u].unwrap();
        for &v in &adj[u] {
            if level[v].is_none() {
                level[v] = Some(lu + 1);
                queue.push_back(v);
            }
        }
    }
    level
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Graph test of irreducibility (reachability) and aperiodicity (gcd of cycle lengths)
/// for the chain induced by `table`.
pub fn check_ergodic(momdp: &TabularMomdp, table: &ProbTable) -> ErgodicityReport {
    let ns = momdp.num_states();
    let kernel = momdp.induced_kernel(table);
    let adj: Vec<Vec<usize>> = (0..ns)
        .map(|s| (0..ns).filter(|&t| kernel[s * ns + t] > 0.0).collect())
        .collect();
    let radj: Vec<Vec<usize>> = (0..ns)
        .map(|t| (0..ns).filter(|&s| kernel[s * ns + t] > 0.0).collect())
        .collect();

    let forward = bfs_levels(&adj, 0);
    let backward = bfs_levels(&radj, 0);
    let unreachable = if let Some(t) = forward.iter().position(Option::is_none) {
        Some((0, t))
    } else {
        backward.iter().position(Option::is_none).map(|s| (s, 0))
    };
    let irreducible = unreachable.is_none();

    let mut period = 0;
    for u in 0..ns {
        let Some(lu) = forward[u] else { continue };
        for &v in &adj[u] {
            if let Some(lv) = forward[v] {
                period = gcd(period, (lu + 1).abs_diff(lv));
            }
        }
    }
    ErgodicityReport { ergodic: irreducible && period == 1, irreducible, period, unreachable }
}

/// Fails with [`Error::NonErgodic`] unless the induced chain is ergodic.
pub fn require_ergodic(momdp: &TabularMomdp, table: &ProbTable) -> Result<()> {
    let rep = check_ergodic(momdp, table);
    if rep.ergodic {
        return Ok(());
    }
    Err(Error::NonErgodic(match rep.unreachable {
        Some((s, t)) => format!("state {t} is unreachable from state {s}"),
        None => format!("chain has period {}", rep.period),
    }))
}
