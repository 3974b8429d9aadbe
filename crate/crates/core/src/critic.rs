//! Mini-batch multi-objective TD(0) on one shared Markovian stream.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::momdp::{require_ergodic, MarkovStream, TabularMomdp};
use crate::policy::{check_feature_assumptions, FeatureMap, ProbTable};
use crate::Mode;

/// Weight norm beyond which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e6;
/// Below `M·D·d̃` of this size the per-objective updates stay on the calling thread.
pub const PARALLEL_MIN_WORK: usize = 1 << 16;

fn default_beta_mu() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticConfig {
    pub beta: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(default)]
    pub mode: Mode,
    /// Step size of the average-reward moving average.
    #[serde(default = "default_beta_mu")]
    pub beta_mu: f64,
}

impl CriticConfig {
    pub fn new(beta: f64, n: usize, d: usize, mode: Mode) -> Self {
        CriticConfig { beta, n, d, mode, beta_mu: default_beta_mu() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Config(format!("critic beta must be finite and >= 0, got {}", self.beta)));
        }
        if self.n == 0 {
            return Err(Error::Config("critic N must be at least 1".into()));
        }
        if self.d == 0 {
            return Err(Error::Config("critic D must be at least 1".into()));
        }
        if !(self.beta_mu > 0.0 && self.beta_mu <= 1.0) {
            return Err(Error::Config(format!("beta_mu must lie in (0, 1], got {}", self.beta_mu)));
        }
        Ok(())
    }

    /// Warning text when `beta` exceeds `min(λ_A/(8C_A²), 4/λ_A)`.
    pub fn step_size_warning(&self, lambda_a: f64, c_a: f64) -> Option<String> {
        let limit = (lambda_a / (8.0 * c_a * c_a)).min(4.0 / lambda_a);
        (self.beta > limit).then(|| {
            format!("critic beta = {} exceeds the step-size limit {limit:.3e} (lambda_A = {lambda_a:.3e}, C_A = {c_a:.3e})", self.beta)
        })
    }
}

/// Critic parameters: one weight vector and one average-reward estimate per objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticState {
    /// `M x d̃`, row-major.
    pub weights: Vec<Vec<f64>>,
    /// `μ^i`; only updated in the average setting.
    pub avg_reward_est: Vec<f64>,
    /// State the stream stood at when the critic returned.
    pub last_state: Option<usize>,
}

impl CriticState {
    pub fn zeros(num_objectives: usize, dim: usize) -> Self {
        CriticState {
            weights: vec![vec![0.0; dim]; num_objectives],
            avg_reward_est: vec![0.0; num_objectives],
            last_state: None,
        }
    }

    /// `φ(s)ᵀw^i`
    pub fn value(&self, features: &FeatureMap, i: usize, s: usize) -> f64 {
        features.value(s, &self.weights[i])
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dims(w: &[f64], phi_s: &[f64], phi_next: &[f64]) -> Result<()> {
    if w.len() != phi_s.len() || w.len() != phi_next.len() {
        return Err(Error::input(format!(
            "dimension mismatch: w has {}, features have {} and {}",
            w.len(),
            phi_s.len(),
            phi_next.len()
        )));
    }
    Ok(())
}

/// `δ = r + γφ(s')ᵀw − φ(s)ᵀw`
pub fn td_error_discounted(w: &[f64], phi_s: &[f64], phi_next: &[f64], r: f64, gamma: f64) -> Result<f64> {
    check_dims(w, phi_s, phi_next)?;
    Ok(r + gamma * dot(phi_next, w) - dot(phi_s, w))
}

/// `δ = r − μ + φ(s')ᵀw − φ(s)ᵀw`
pub fn td_error_average(w: &[f64], phi_s: &[f64], phi_next: &[f64], r: f64, mu: f64) -> Result<f64> {
    check_dims(w, phi_s, phi_next)?;
    Ok(r - mu + dot(phi_next, w) - dot(phi_s, w))
}

/// `μ ← (1−β_μ)μ + β_μ·mean(rewards)`, clamped to `[0, r_max]`.
pub fn update_avg_reward_estimate(mu: f64, batch_rewards: &[f64], beta_mu: f64, r_max: f64) -> Result<f64> {
    if batch_rewards.is_empty() {
        return Err(Error::input("empty reward batch"));
    }
    if !(beta_mu > 0.0 && beta_mu <= 1.0) {
        return Err(Error::input(format!("beta_mu must lie in (0, 1], got {beta_mu}")));
    }
    let mean = batch_rewards.iter().sum::<f64>() / batch_rewards.len() as f64;
    Ok(((1.0 - beta_mu) * mu + beta_mu * mean).clamp(0.0, r_max))
}

/// One transition of the shared batch.
#[derive(Debug, Clone, Copy)]
struct Transition {
    s: usize,
    a: usize,
    next: usize,
}

/// Everything an objective's update reads, borrowed once per batch.
struct BatchContext<'a> {
    momdp: &'a TabularMomdp,
    features: &'a FeatureMap,
    batch: &'a [Transition],
    beta: f64,
    beta_mu: f64,
    mode: Mode,
}

/// Applies the batch update to objective `i`; returns the new `‖w‖`.
fn update_objective(ctx: &BatchContext<'_>, i: usize, w: &mut [f64], mu: &mut f64) -> Result<f64> {
    let dim = w.len();
    let mut step = vec![0.0; dim];
    let gamma = ctx.momdp.discounts()[i];
    for t in ctx.batch {
        let phi_s = ctx.features.row(t.s);
        let phi_next = ctx.features.row(t.next);
        let r = ctx.momdp.reward(t.s, t.a)[i];
        let delta = match ctx.mode {
            Mode::Discounted => r + gamma * dot(phi_next, w) - dot(phi_s, w),
            Mode::Average => r - *mu + dot(phi_next, w) - dot(phi_s, w),
        };
        step.iter_mut().zip(phi_s).for_each(|(g, p)| *g += delta * p);
    }
    let scale = ctx.beta / ctx.batch.len() as f64;
    w.iter_mut().zip(&step).for_each(|(x, g)| *x += scale * g);
    if ctx.mode == Mode::Average {
        let rewards: Vec<f64> = ctx.batch.iter().map(|t| ctx.momdp.reward(t.s, t.a)[i]).collect();
        *mu = update_avg_reward_estimate(*mu, &rewards, ctx.beta_mu, ctx.momdp.r_max())?;
    }
    Ok(dot(w, w).sqrt())
}

fn update_all(ctx: &BatchContext<'_>, state: &mut CriticState, parallel: bool) -> Vec<Result<f64>> {
    let pairs = state.weights.iter_mut().zip(state.avg_reward_est.iter_mut()).enumerate();
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        return pairs
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(i, (w, mu))| update_objective(ctx, i, w, mu))
            .collect();
    }
    let _ = parallel;
    pairs.map(|(i, (w, mu))| update_objective(ctx, i, w, mu)).collect()
}

/// Runs `N` batch TD iterations under `table`, drawing from `stream`, starting from `init`.
///
/// All objectives consume the same `D` transitions per iteration, so each call
/// advances the stream by exactly `N·D` transitions.
pub fn run_critic(
    momdp: &TabularMomdp,
    table: &ProbTable,
    features: &FeatureMap,
    config: &CriticConfig,
    init: CriticState,
    stream: &mut MarkovStream,
) -> Result<CriticState> {
    let m = momdp.num_objectives();
    let dim = features.dim();
    let parallel = crate::par::enabled() && m > 1 && m * config.d * dim >= PARALLEL_MIN_WORK;
    run_critic_with(momdp, table, features, config, init, stream, parallel)
}

/// [`run_critic`] with the per-objective fan-out chosen by the caller.
pub fn run_critic_with(
    momdp: &TabularMomdp,
    table: &ProbTable,
    features: &FeatureMap,
    config: &CriticConfig,
    init: CriticState,
    stream: &mut MarkovStream,
    parallel: bool,
) -> Result<CriticState> {
    config.validate()?;
    let m = momdp.num_objectives();
    if features.num_states() != momdp.num_states() {
        return Err(Error::input("feature rows do not match the state count"));
    }
    if init.weights.len() != m || init.avg_reward_est.len() != m || init.weights.iter().any(|w| w.len() != features.dim()) {
        return Err(Error::input("critic state shape does not match objectives and features"));
    }
    if init.weights.iter().flatten().chain(&init.avg_reward_est).any(|x| !x.is_finite()) {
        return Err(Error::input("critic state has non-finite entries"));
    }
    require_ergodic(momdp, table).map_err(|e| Error::Config(e.to_string()))?;
    if config.mode == Mode::Average {
        let rep = check_feature_assumptions(features, Mode::Average);
        if rep.excludes_ones == Some(false) {
            return Err(Error::Assumption(format!(
                "the constant vector lies in the feature span (residual {:.3e})",
                rep.ones_residual.unwrap_or(0.0)
            )));
        }
    }

    let mut state = init;
    let mut batch = vec![Transition { s: 0, a: 0, next: 0 }; config.d];
    for k in 0..config.n {
        for t in batch.iter_mut() {
            let (s, a, next) = stream.advance(momdp, table);
            *t = Transition { s, a, next };
        }
        let ctx = BatchContext {
            momdp,
            features,
            batch: &batch,
            beta: config.beta,
            beta_mu: config.beta_mu,
            mode: config.mode,
        };
        for (i, norm) in update_all(&ctx, &mut state, parallel).into_iter().enumerate() {
            let norm = norm?;
            if !norm.is_finite() || norm > DIVERGENCE_NORM {
                return Err(Error::Divergence {
                    what: format!("critic objective {i}"),
                    iteration: k + 1,
                    detail: format!("|w| = {norm:.3e}"),
                });
            }
        }
    }
    state.last_state = Some(stream.state());
    Ok(state)
}
