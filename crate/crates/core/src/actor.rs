//! The actor: per-objective policy gradients, WC-MGDA weighting with momentum, and the full run loop.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::critic::{run_critic, CriticConfig, CriticState};
use crate::error::{Error, Result};
use crate::momdp::{aux_stream_rng, require_ergodic, MarkovStream, StreamRng, TabularMomdp};
use crate::oracle::{gradient_matrix, objective_vector, pareto_stationarity_gap, GradientMeasure, DENSE_STATE_LIMIT};
use crate::policy::{FeatureMap, ProbTable, SoftmaxPolicy};
use crate::qp::{build_kp, min_norm_lambda, solve_simplex_qp, QpOptions, QpSolution, SimplexVector, WcQuadratic};
use crate::Mode;

/// Default floor for preference weights.
pub const CLAMP_EPS: f64 = 1e-4;
/// Largest admissible momentum coefficient.
pub const ETA_MAX: f64 = 1.0 - 1e-9;
/// Transitions used for Monte-Carlo objective estimates on large instances.
pub const MONTE_CARLO_STEPS: usize = 100_000;
/// Auxiliary stream id reserved for Monte-Carlo evaluation.
pub const EVAL_STREAM: u64 = 1;

/// Preference vector `p` on the simplex with every entry at least `clamp_eps`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightVector {
    p: Vec<f64>,
    p_min: f64,
    clamp_eps: f64,
    clamped: bool,
}

impl WeightVector {
    pub fn new(raw: &[f64]) -> Result<Self> {
        Self::with_clamp(raw, CLAMP_EPS)
    }

    /// Normalizes `raw`, lifts entries below `clamp_eps` to exactly `clamp_eps`, and rescales the rest.
    pub fn with_clamp(raw: &[f64], clamp_eps: f64) -> Result<Self> {
        let m = raw.len();
        if m == 0 {
            return Err(Error::input("weight vector is empty"));
        }
        if raw.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::input(format!("weights must be finite and non-negative: {raw:?}")));
        }
        if !(clamp_eps > 0.0 && clamp_eps * m as f64 <= 1.0) {
            return Err(Error::input(format!("clamp floor {clamp_eps} is infeasible for {m} objectives")));
        }
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(Error::input("weights sum to zero"));
        }
        let mut p: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let mut low = vec![false; m];
        // lifting entries can push others under the floor, so repeat until stable
        loop {
            let newly: Vec<usize> = (0..m).filter(|&i| !low[i] && p[i] < clamp_eps).collect();
            if newly.is_empty() {
                break;
            }
            newly.iter().for_each(|&i| low[i] = true);
            let k = low.iter().filter(|&&l| l).count();
            let rest: f64 = (0..m).filter(|&i| !low[i]).map(|i| p[i]).sum();
            let target = 1.0 - k as f64 * clamp_eps;
            for i in 0..m {
                p[i] = if low[i] { clamp_eps } else if rest > 0.0 { p[i] * target / rest } else { p[i] };
            }
        }
        let clamped = low.iter().any(|&l| l);
        if clamped {
            log::info!("preference weights {raw:?} clamped to {p:?} (floor {clamp_eps})");
        }
        let p_min = p.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(WeightVector { p, p_min, clamp_eps, clamped })
    }

    pub fn uniform(m: usize) -> Self {
        let p = vec![1.0 / m as f64; m];
        WeightVector { p_min: p[0], p, clamp_eps: CLAMP_EPS, clamped: false }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }
    pub fn p_min(&self) -> f64 {
        self.p_min
    }
    pub fn clamp_eps(&self) -> f64 {
        self.clamp_eps
    }
    pub fn was_clamped(&self) -> bool {
        self.clamped
    }
    pub fn len(&self) -> usize {
        self.p.len()
    }
    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Momentum coefficient schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EtaSchedule {
    /// `η_t = p_min²/t²`
    #[default]
    InverseSquare,
    Fixed(f64),
}

impl EtaSchedule {
    /// `η_t` for `t ≥ 1`, capped just below 1.
    pub fn eta(&self, t: usize, p_min: f64) -> f64 {
        let raw = match *self {
            EtaSchedule::InverseSquare => p_min * p_min / (t as f64 * t as f64),
            EtaSchedule::Fixed(e) => e,
        };
        raw.min(ETA_MAX)
    }
}

/// Which iterate a run reports as its result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputIterate {
    /// `θ_T̂` with `T̂` uniform on `{1..T}`.
    #[default]
    Sampled,
    /// `θ_{T+1}`, the parameters after the last update.
    Last,
}

fn default_u() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorConfig {
    pub alpha: f64,
    #[serde(rename = "B")]
    pub b: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(default = "default_u")]
    pub u: f64,
    /// Per-objective upper bounds; defaults to `r_max/(1−γ_i)` or `r_max`.
    #[serde(rename = "J_ub", default, skip_serializing_if = "Option::is_none")]
    pub j_ub: Option<Vec<f64>>,
    #[serde(default)]
    pub eta_schedule: EtaSchedule,
    #[serde(default)]
    pub output_iterate: OutputIterate,
    /// Replace sampled gradients by exact ones (no critic, no sampling).
    #[serde(default)]
    pub exact_gradients: bool,
    /// State weighting of exact gradients and of the reported gap.
    #[serde(default)]
    pub gradient_measure: GradientMeasure,
    #[serde(default)]
    pub qp: QpOptions,
    /// Keep every `θ_t` in the result.
    #[serde(default)]
    pub record_theta: bool,
    /// Also solve the min-norm problem each iteration and log its value.
    #[serde(default)]
    pub log_min_norm: bool,
}

impl ActorConfig {
    pub fn new(alpha: f64, b: usize, t: usize) -> Self {
        ActorConfig {
            alpha,
            b,
            t,
            u: default_u(),
            j_ub: None,
            eta_schedule: EtaSchedule::default(),
            output_iterate: OutputIterate::default(),
            exact_gradients: false,
            gradient_measure: GradientMeasure::default(),
            qp: QpOptions::default(),
            record_theta: false,
            log_min_norm: false,
        }
    }

    pub fn validate(&self, num_objectives: usize) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config(format!("actor alpha must be positive, got {}", self.alpha)));
        }
        if self.b == 0 {
            return Err(Error::Config("actor B must be at least 1".into()));
        }
        if self.t == 0 {
            return Err(Error::Config("actor T must be at least 1".into()));
        }
        if !(self.u.is_finite() && self.u >= 0.0) {
            return Err(Error::Config(format!("u must be finite and >= 0, got {}", self.u)));
        }
        if let Some(j) = &self.j_ub {
            if j.len() != num_objectives || j.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::Config(format!("J_ub must hold {num_objectives} finite non-negative entries")));
            }
        }
        if let EtaSchedule::Fixed(e) = self.eta_schedule {
            if !(0.0..1.0).contains(&e) {
                return Err(Error::Config(format!("fixed eta must lie in [0, 1), got {e}")));
            }
        }
        if !(self.qp.tol > 0.0) || self.qp.max_iters == 0 {
            return Err(Error::Config("QP tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }

    /// `J_ub`, falling back to the trivial bounds.
    pub fn upper_bounds(&self, momdp: &TabularMomdp, mode: Mode) -> Vec<f64> {
        self.j_ub.clone().unwrap_or_else(|| match mode {
            Mode::Discounted => momdp.discounts().iter().map(|g| momdp.r_max() / (1.0 - g)).collect(),
            Mode::Average => vec![momdp.r_max(); momdp.num_objectives()],
        })
    }
}

/// Sampled per-objective gradients and value estimates for one actor step.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    /// `d₁ x M`; column `i` is `−(1/B)Σ δ^i ψ`, a descent direction for objective `i`.
    pub g: DMatrix<f64>,
    pub j_hat: Vec<f64>,
}

/// Draws `B` transitions from `stream` and forms the per-objective actor gradients from critic TD errors.
///
/// `Ĵ^i` is the critic value averaged over the batch (discounted) or the
/// average-reward estimate `μ^i` (average).
pub fn estimate_gradients(
    momdp: &TabularMomdp,
    policy: &SoftmaxPolicy,
    features: &FeatureMap,
    critic: &CriticState,
    b: usize,
    stream: &mut MarkovStream,
    mode: Mode,
) -> Result<GradientEstimate> {
    if b == 0 {
        return Err(Error::input("actor batch must be non-empty"));
    }
    let m = momdp.num_objectives();
    if critic.weights.len() != m || critic.weights.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::input("critic weights are malformed or non-finite"));
    }
    let table = policy.table();
    let dim = policy.param_dim();
    let mut sums = vec![0.0; dim * m];
    let mut psi = vec![0.0; dim];
    let mut value_sum = vec![0.0; m];
    for _ in 0..b {
        let (s, a, next) = stream.advance(momdp, &table);
        policy.score_with_probs(s, a, table.probs(s), &mut psi);
        let r = momdp.reward(s, a);
        for i in 0..m {
            let w = &critic.weights[i];
            let v_s = features.value(s, w);
            let v_next = features.value(next, w);
            let delta = match mode {
                Mode::Discounted => r[i] + momdp.discounts()[i] * v_next - v_s,
                Mode::Average => r[i] - critic.avg_reward_est[i] + v_next - v_s,
            };
            value_sum[i] += v_s;
            sums[i * dim..(i + 1) * dim].iter_mut().zip(&psi).for_each(|(g, p)| *g += delta * p);
        }
    }
    let bf = b as f64;
    let g = DMatrix::from_column_slice(dim, m, &sums.iter().map(|x| -x / bf).collect::<Vec<_>>());
    let j_hat = match mode {
        Mode::Discounted => value_sum.iter().map(|v| v / bf).collect(),
        Mode::Average => critic.avg_reward_est.clone(),
    };
    Ok(GradientEstimate { g, j_hat })
}

/// Solves the WC direction problem built from `G`, `p` and the regret estimate `J_ub − Ĵ`.
pub fn solve_lambda_hat(
    g: &DMatrix<f64>,
    j_hat: &[f64],
    p: &WeightVector,
    u: f64,
    j_ub: &[f64],
    opts: QpOptions,
) -> Result<QpSolution> {
    let kp = build_kp(g, p.as_slice())?;
    let q = WcQuadratic::new(kp, u, p.as_slice(), j_ub, j_hat)?;
    solve_simplex_qp(&q, opts)
}

/// `λ_t = (1−η)λ_{t−1} + η λ̂`
pub fn momentum_update(prev: &SimplexVector, hat: &SimplexVector, eta: f64) -> Result<SimplexVector> {
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::input(format!("momentum coefficient {eta} outside [0, 1)")));
    }
    if prev.len() != hat.len() {
        return Err(Error::input("momentum operands differ in length"));
    }
    if eta == 0.0 {
        return Ok(prev.clone());
    }
    SimplexVector::new(prev.iter().zip(hat.iter()).map(|(a, b)| (1.0 - eta) * a + eta * b).collect())
}

/// `θ − α·G(p ⊙ λ)`
pub fn policy_step(theta: &[f64], g: &DMatrix<f64>, p: &WeightVector, lambda: &SimplexVector, alpha: f64) -> Result<Vec<f64>> {
    if g.nrows() != theta.len() || g.ncols() != p.len() || lambda.len() != p.len() {
        return Err(Error::input("policy step dimensions disagree"));
    }
    let weights = DVector::from_iterator(p.len(), p.as_slice().iter().zip(lambda.iter()).map(|(a, b)| a * b));
    let dir = g * weights;
    let next: Vec<f64> = theta.iter().zip(dir.iter()).map(|(t, d)| t - alpha * d).collect();
    if next.iter().any(|x| !x.is_finite()) {
        return Err(Error::Divergence {
            what: "actor".into(),
            iteration: 0,
            detail: "policy parameters became non-finite".into(),
        });
    }
    Ok(next)
}

/// Per-iteration QP diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpLogEntry {
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `‖Gλ̂‖²` at the WC solution.
    pub direction_norm_sq: f64,
    /// `min_λ ‖Gλ‖²`, when min-norm logging is on.
    pub min_norm_objective: Option<f64>,
}

/// Where `J_final` came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSource {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub p: Vec<f64>,
    /// Parameters of the reported iterate (`θ_T̂` or `θ_{T+1}`, see `output_iterate`).
    pub final_theta: Vec<f64>,
    #[serde(rename = "T_hat")]
    pub t_hat: usize,
    pub output_iterate: OutputIterate,
    /// `λ_0, …, λ_T`
    pub lambda_hist: Vec<Vec<f64>>,
    pub qp_log: Vec<QpLogEntry>,
    /// `θ_1, …, θ_{T+1}` when recorded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_hist: Option<Vec<Vec<f64>>>,
    #[serde(rename = "J_final")]
    pub j_final: Vec<f64>,
    pub j_final_source: ValueSource,
    /// Min-norm gap at the reported iterate (small instances only).
    pub stationarity_gap: Option<f64>,
    /// Parameters after the last update, `θ_{T+1}`.
    pub last_theta: Vec<f64>,
    pub last_gap: Option<f64>,
    pub transitions: u64,
}

impl RunResult {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Monte-Carlo objective estimate on an auxiliary stream: long-run reward average
/// (average) or truncated discounted returns from the start distribution (discounted).
pub fn monte_carlo_objectives(
    momdp: &TabularMomdp,
    table: &ProbTable,
    mode: Mode,
    steps: usize,
    rng: &mut StreamRng,
) -> Vec<f64> {
    let m = momdp.num_objectives();
    let mut totals = vec![0.0; m];
    match mode {
        Mode::Average => {
            let mut s = momdp.sample_start(rng);
            for _ in 0..steps {
                let a = table.sample_action(s, rng);
                let r = momdp.reward(s, a);
                totals.iter_mut().zip(r).for_each(|(t, x)| *t += x);
                s = momdp.next_state(s, a, rng);
            }
            totals.iter().map(|t| t / steps as f64).collect()
        }
        Mode::Discounted => {
            let gmax = momdp.discounts().iter().copied().fold(0.0, f64::max);
            let horizon = if gmax > 0.0 { ((1e-6_f64).ln() / gmax.ln()).ceil().max(1.0) as usize } else { 1 };
            let episodes = (steps / horizon).max(1);
            for _ in 0..episodes {
                let mut s = momdp.sample_start(rng);
                let mut disc = vec![1.0; m];
                for _ in 0..horizon {
                    let a = table.sample_action(s, rng);
                    let r = momdp.reward(s, a);
                    for i in 0..m {
                        totals[i] += disc[i] * r[i];
                        disc[i] *= momdp.discounts()[i];
                    }
                    s = momdp.next_state(s, a, rng);
                }
            }
            totals.iter().map(|t| t / episodes as f64).collect()
        }
    }
}

fn relabel(e: Error, t: usize) -> Error {
    match e {
        Error::Divergence { what, iteration, detail } => Error::Divergence {
            what,
            iteration: t,
            detail: if iteration > 0 { format!("{detail} (critic step {iteration})") } else { detail },
        },
        other => other,
    }
}

/// Objective vector at `table`: exact when the instance is small, Monte-Carlo otherwise.
pub fn final_objectives(
    momdp: &TabularMomdp,
    table: &ProbTable,
    mode: Mode,
    seed: u64,
) -> Result<(Vec<f64>, ValueSource)> {
    if momdp.num_states() <= DENSE_STATE_LIMIT {
        Ok((objective_vector(momdp, table, mode)?, ValueSource::Exact))
    } else {
        let mut rng = aux_stream_rng(seed, EVAL_STREAM);
        Ok((monte_carlo_objectives(momdp, table, mode, MONTE_CARLO_STEPS, &mut rng), ValueSource::MonteCarlo))
    }
}

/// Runs the full actor-critic loop for `T` iterations from `policy_init`.
///
/// `rng` drives the single sample stream (critic and actor batches) and the
/// final draw of `T̂`. `seed` only feeds the auxiliary evaluation stream.
#[allow(clippy::too_many_arguments)]
pub fn run_mocha(
    momdp: &TabularMomdp,
    policy_init: &SoftmaxPolicy,
    features: &FeatureMap,
    critic_config: &CriticConfig,
    actor_config: &ActorConfig,
    p: &WeightVector,
    rng: StreamRng,
    seed: u64,
) -> Result<RunResult> {
    let m = momdp.num_objectives();
    let mode = critic_config.mode;
    critic_config.validate()?;
    actor_config.validate(m)?;
    if p.len() != m {
        return Err(Error::Config(format!("preference vector has {} entries for {m} objectives", p.len())));
    }
    if policy_init.num_states() != momdp.num_states() || policy_init.num_actions() != momdp.num_actions() {
        return Err(Error::Config("policy shape does not match the MOMDP".into()));
    }
    if features.num_states() != momdp.num_states() {
        return Err(Error::Config("feature rows do not match the state count".into()));
    }
    require_ergodic(momdp, &policy_init.table()).map_err(|e| Error::Config(e.to_string()))?;

    let j_ub = actor_config.upper_bounds(momdp, mode);
    let mut stream = MarkovStream::from_start(momdp, rng);
    let mut critic = CriticState::zeros(m, features.dim());
    let mut policy = policy_init.clone();
    let mut lambda = SimplexVector::uniform(m);
    let mut lambda_hist = vec![lambda.to_vec()];
    let mut qp_log = Vec::with_capacity(actor_config.t);
    let mut thetas = vec![policy.theta().to_vec()];

    for t in 1..=actor_config.t {
        let est = if actor_config.exact_gradients {
            let grads = gradient_matrix(momdp, &policy, mode, actor_config.gradient_measure).map_err(|e| relabel(e, t))?;
            GradientEstimate { g: -grads, j_hat: objective_vector(momdp, &policy.table(), mode)? }
        } else {
            critic = run_critic(momdp, &policy.table(), features, critic_config, critic, &mut stream)
                .map_err(|e| relabel(e, t))?;
            estimate_gradients(momdp, &policy, features, &critic, actor_config.b, &mut stream, mode)?
        };
        let sol = solve_lambda_hat(&est.g, &est.j_hat, p, actor_config.u, &j_ub, actor_config.qp)?;
        if !sol.converged {
            log::debug!("iteration {t}: QP stopped after {} steps without meeting tolerance", sol.iterations);
        }
        let min_norm_objective = if actor_config.log_min_norm {
            Some(min_norm_lambda(&est.g, actor_config.qp)?.objective)
        } else {
            None
        };
        let dir = &est.g * DVector::from_column_slice(&sol.lambda);
        qp_log.push(QpLogEntry {
            objective: sol.objective,
            iterations: sol.iterations,
            converged: sol.converged,
            direction_norm_sq: dir.norm_squared(),
            min_norm_objective,
        });
        let eta = actor_config.eta_schedule.eta(t, p.p_min());
        lambda = momentum_update(&lambda, &sol.lambda, eta)?;
        lambda_hist.push(lambda.to_vec());
        let theta = policy_step(policy.theta(), &est.g, p, &lambda, actor_config.alpha).map_err(|e| relabel(e, t))?;
        policy = policy.with_theta(theta)?;
        thetas.push(policy.theta().to_vec());
    }

    let t_hat = stream.rng().random_range(1..=actor_config.t);
    let last_theta = thetas[actor_config.t].clone();
    let final_theta = match actor_config.output_iterate {
        OutputIterate::Sampled => thetas[t_hat - 1].clone(),
        OutputIterate::Last => last_theta.clone(),
    };
    let out_policy = policy_init.with_theta(final_theta.clone())?;
    let (j_final, j_final_source) = final_objectives(momdp, &out_policy.table(), mode, seed)?;
    let small = momdp.num_states() <= DENSE_STATE_LIMIT;
    let gap_at = |pol: &SoftmaxPolicy| -> Result<Option<f64>> {
        if small {
            pareto_stationarity_gap(momdp, pol, mode, actor_config.gradient_measure).map(Some)
        } else {
            Ok(None)
        }
    };
    let stationarity_gap = gap_at(&out_policy)?;
    let last_gap = if actor_config.output_iterate == OutputIterate::Last {
        stationarity_gap
    } else {
        gap_at(&policy)?
    };
    Ok(RunResult {
        p: p.as_slice().to_vec(),
        final_theta,
        t_hat,
        output_iterate: actor_config.output_iterate,
        lambda_hist,
        qp_log,
        theta_hist: actor_config.record_theta.then_some(thetas),
        j_final,
        j_final_source,
        stationarity_gap,
        last_theta,
        last_gap,
        transitions: stream.transitions(),
    })
}
