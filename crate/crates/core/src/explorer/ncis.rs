//! Offline evaluation by normalized capped importance sampling, plus a synthetic log generator.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::momdp::{MarkovStream, StreamRng, TabularMomdp};
use crate::policy::SoftmaxPolicy;

/// One logged interaction `(s, a, r)`; serialized as `[s, a, [r_1, …]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedStep(pub usize, pub usize, pub Vec<f64>);

/// Interactions logged under a tabular softmax behavior policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedDataset {
    pub behavior_policy_theta: Vec<f64>,
    pub steps: Vec<LoggedStep>,
}

impl LoggedDataset {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// The behavior policy, given the state and action counts it was logged on.
    pub fn behavior_policy(&self, num_states: usize, num_actions: usize) -> Result<SoftmaxPolicy> {
        SoftmaxPolicy::tabular(num_states, num_actions, self.behavior_policy_theta.clone())
            .map_err(|e| Error::input(format!("behavior policy: {e}")))
    }

    /// Plain per-objective mean reward, summed in log order.
    pub fn mean_rewards(&self) -> Result<Vec<f64>> {
        let m = self.num_objectives()?;
        let mut sums = vec![0.0; m];
        for LoggedStep(_, _, r) in &self.steps {
            sums.iter_mut().zip(r).for_each(|(acc, x)| *acc += x);
        }
        let n = self.steps.len() as f64;
        Ok(sums.into_iter().map(|s| s / n).collect())
    }

    fn num_objectives(&self) -> Result<usize> {
        let first = self.steps.first().ok_or_else(|| Error::input("dataset has no steps"))?;
        let m = first.2.len();
        if m == 0 || self.steps.iter().any(|s| s.2.len() != m) {
            return Err(Error::input("reward vectors must share a positive length"));
        }
        Ok(m)
    }
}

/// NCIS score per objective: `Σ CIS·r^i / Σ CIS` with `CIS = min(C, π(a|s)/π_β(a|s))`.
pub fn ncis_evaluate(
    dataset: &LoggedDataset,
    behavior: &SoftmaxPolicy,
    target: &SoftmaxPolicy,
    cap: f64,
) -> Result<Vec<f64>> {
    if !(cap > 0.0) || cap.is_nan() {
        return Err(Error::input(format!("cap C must be positive, got {cap}")));
    }
    if behavior.num_states() != target.num_states() || behavior.num_actions() != target.num_actions() {
        return Err(Error::input("behavior and target policies differ in shape"));
    }
    let m = dataset.num_objectives()?;
    let pb = behavior.table();
    let pt = target.table();
    let mut num = vec![0.0; m];
    let mut den = 0.0;
    for (k, LoggedStep(s, a, r)) in dataset.steps.iter().enumerate() {
        if *s >= pb.num_states() || *a >= pb.num_actions() {
            return Err(Error::input(format!("step {k}: (s={s}, a={a}) out of range")));
        }
        let b = pb.probs(*s)[*a];
        if !(b > 0.0) {
            return Err(Error::Data(format!("step {k}: behavior probability of a={a} in s={s} is zero")));
        }
        let cis = cap.min(pt.probs(*s)[*a] / b);
        den += cis;
        num.iter_mut().zip(r).for_each(|(acc, x)| *acc += cis * x);
    }
    Ok(num.into_iter().map(|x| x / den).collect())
}

/// Logs `steps` Markovian interactions under `behavior`.
pub fn generate_logged_dataset(
    momdp: &TabularMomdp,
    behavior: &SoftmaxPolicy,
    steps: usize,
    rng: StreamRng,
) -> Result<LoggedDataset> {
    if steps == 0 {
        return Err(Error::input("dataset needs at least one step"));
    }
    let table = behavior.table();
    let mut stream = MarkovStream::from_start(momdp, rng);
    let log = (0..steps)
        .map(|_| {
            let (s, a, _) = stream.advance(momdp, &table);
            LoggedStep(s, a, momdp.reward(s, a).to_vec())
        })
        .collect();
    Ok(LoggedDataset { behavior_policy_theta: behavior.theta().to_vec(), steps: log })
}
