//! The experiment configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::actor::{ActorConfig, WeightVector};
use crate::critic::CriticConfig;
use crate::error::{Error, Result};
use crate::explorer::{generate_weight_grid, ExplorationSet, CONVERGED_GAP_TOL};
use crate::momdp::{validate, MomdpSpec, TabularMomdp};
use crate::policy::{check_feature_assumptions, FeatureMap, SoftmaxPolicy};
use crate::Mode;

fn default_beta() -> f64 {
    0.1
}
fn default_beta_mu() -> f64 {
    0.05
}
fn default_gap_tol() -> f64 {
    CONVERGED_GAP_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticSection {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(default = "default_beta_mu")]
    pub beta_mu: f64,
}

/// Explicit preference vectors or a simplex-lattice resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsSpec {
    Explicit(Vec<Vec<f64>>),
    Grid(usize),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    #[serde(default)]
    pub exact_gradients: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub momdp_path: PathBuf,
    #[serde(default)]
    pub mode: Mode,
    /// Value features `{"phi": [[..]]}`; identity (discounted) or a basis orthogonal to 𝟏 (average) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features_path: Option<PathBuf>,
    /// Initial tabular policy `{num_states, num_actions, theta}`; `θ = 0` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_path: Option<PathBuf>,
    pub critic: CriticSection,
    pub actor: ActorConfig,
    pub weights: WeightsSpec,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default = "default_gap_tol")]
    pub converged_gap_tol: f64,
}

/// A config with its files loaded and checked.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub momdp: TabularMomdp,
    pub features: FeatureMap,
    pub policy: SoftmaxPolicy,
    pub critic: CriticConfig,
    pub actor: ActorConfig,
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn critic_config(&self) -> CriticConfig {
        CriticConfig {
            beta: self.critic.beta,
            n: self.critic.n,
            d: self.critic.d,
            mode: self.mode,
            beta_mu: self.critic.beta_mu,
        }
    }

    /// Actor settings with the ablation switch folded in.
    pub fn actor_config(&self) -> ActorConfig {
        let mut a = self.actor.clone();
        a.exact_gradients |= self.ablation.exact_gradients;
        a
    }

    pub fn exploration_set(&self, num_objectives: usize) -> Result<ExplorationSet> {
        let set = match &self.weights {
            WeightsSpec::Explicit(list) => {
                if list.iter().any(|w| w.len() != num_objectives) {
                    return Err(Error::Config(format!("every weight vector needs {num_objectives} entries")));
                }
                ExplorationSet::explicit(list)?
            }
            WeightsSpec::Grid(res) => generate_weight_grid(num_objectives, *res)?,
        };
        Ok(set)
    }

    /// The single preference vector of a `run`.
    pub fn single_weight(&self, num_objectives: usize) -> Result<WeightVector> {
        let set = self.exploration_set(num_objectives)?;
        if set.len() != 1 {
            return Err(Error::Config(format!("run needs exactly one weight vector, config yields {}", set.len())));
        }
        Ok(set.weights.into_iter().next().expect("one element"))
    }

    /// Reads every referenced file (relative paths resolve against `base_dir`) and validates the lot.
    pub fn resolve(self, base_dir: &Path) -> Result<Loaded> {
        let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if !(self.converged_gap_tol >= 0.0) {
            return Err(Error::Config("converged_gap_tol must be >= 0".into()));
        }
        let spec = MomdpSpec::load(at(&self.momdp_path))?;
        let report = validate(&spec);
        if !report.is_valid() {
            return Err(Error::Config(format!("{}: {report}", at(&self.momdp_path).display())));
        }
        let momdp = TabularMomdp::try_from(spec)?;
        let features = match &self.features_path {
            Some(p) => FeatureMap::load(at(p))?,
            None => match self.mode {
                Mode::Discounted => FeatureMap::identity(momdp.num_states()),
                Mode::Average => FeatureMap::orthogonal_to_ones(momdp.num_states())?,
            },
        };
        if features.num_states() != momdp.num_states() {
            return Err(Error::Config("feature rows do not match the state count".into()));
        }
        let frep = check_feature_assumptions(&features, self.mode);
        if !frep.passes() {
            return Err(Error::Config(format!("value features fail the checks: {frep:?}")));
        }
        let policy = match &self.policy_path {
            Some(p) => SoftmaxPolicy::load(at(p))?,
            None => SoftmaxPolicy::zeros(momdp.num_states(), momdp.num_actions()),
        };
        if policy.num_states() != momdp.num_states() || policy.num_actions() != momdp.num_actions() {
            return Err(Error::Config("policy shape does not match the MOMDP".into()));
        }
        let critic = self.critic_config();
        critic.validate()?;
        let actor = self.actor_config();
        actor.validate(momdp.num_objectives())?;
        self.exploration_set(momdp.num_objectives())?;
        Ok(Loaded { base_dir: base_dir.to_path_buf(), momdp, features, policy, critic, actor, config: self })
    }
}

impl Loaded {
    /// Output directory: `--out` if given, else the config's `output_dir` relative to its file.
    pub fn output_dir(&self, over: Option<&Path>) -> PathBuf {
        match over {
            Some(p) => p.to_path_buf(),
            None if self.config.output_dir.is_absolute() => self.config.output_dir.clone(),
            None => self.base_dir.join(&self.config.output_dir),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"{
        "momdp_path": "m.json",
        "critic": {"N": 10, "D": 4},
        "actor": {"alpha": 0.5, "B": 8, "T": 3},
        "weights": {"explicit": [[0.5, 0.5]]},
        "seeds": [1],
        "output_dir": "out"
    }"#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        assert_eq!(c.mode, Mode::Discounted);
        assert_eq!(c.critic.beta, 0.1);
        assert_eq!(c.actor.u, 1.0);
        assert_eq!(c.converged_gap_tol, CONVERGED_GAP_TOL);
        assert!(!c.actor_config().exact_gradients);
    }

    #[test]
    fn round_trip() {
        let c = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        let again = ExperimentConfig::from_json_str(&c.to_json_string().unwrap()).unwrap();
        assert_eq!(c, again);
        let grid = MINIMAL.replace(r#"{"explicit": [[0.5, 0.5]]}"#, r#"{"grid": 4}"#);
        let g = ExperimentConfig::from_json_str(&grid).unwrap();
        assert_eq!(g.weights, WeightsSpec::Grid(4));
        assert_eq!(g, ExperimentConfig::from_json_str(&g.to_json_string().unwrap()).unwrap());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = MINIMAL.replace("\"seeds\"", "\"seedz\"");
        assert!(ExperimentConfig::from_json_str(&bad).is_err());
    }

    #[test]
    fn ablation_switch_reaches_the_actor() {
        let mut c = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        c.ablation.exact_gradients = true;
        assert!(c.actor_config().exact_gradients);
    }
}
