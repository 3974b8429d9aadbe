//! Sweeps over preference vectors, frontier export, and offline NCIS evaluation.

mod ncis;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ncis::{generate_logged_dataset, ncis_evaluate, LoggedDataset, LoggedStep};

use crate::actor::{run_mocha, ActorConfig, ValueSource, WeightVector, MONTE_CARLO_STEPS};
use crate::critic::CriticConfig;
use crate::error::{Error, Result};
use crate::momdp::{stream_rng, TabularMomdp};
use crate::par::{self, Parallelism};
use crate::policy::{FeatureMap, SoftmaxPolicy};

/// Largest exploration set a lattice may produce.
pub const MAX_GRID_POINTS: usize = 100_000;
/// Default gap below which a run counts as converged.
pub const CONVERGED_GAP_TOL: f64 = 5e-2;

/// How an exploration set was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetSource {
    Lattice { resolution: usize },
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplorationSet {
    pub weights: Vec<WeightVector>,
    pub source: SetSource,
}

impl ExplorationSet {
    /// Builds a set from raw vectors, clamping each and dropping duplicates.
    pub fn explicit(raw: &[Vec<f64>]) -> Result<Self> {
        Self::from_raw(raw.iter().map(|v| v.as_slice()), SetSource::Explicit)
    }

    fn from_raw<'a>(raw: impl Iterator<Item = &'a [f64]>, source: SetSource) -> Result<Self> {
        let mut weights: Vec<WeightVector> = Vec::new();
        for v in raw {
            let w = WeightVector::new(v)?;
            if !weights.iter().any(|x| x.as_slice() == w.as_slice()) {
                weights.push(w);
            }
        }
        if weights.is_empty() {
            return Err(Error::input("exploration set is empty"));
        }
        Ok(ExplorationSet { weights, source })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// All points of the simplex lattice `{k/resolution : Σk = resolution}` in `M` dimensions.
pub fn generate_weight_grid(m: usize, resolution: usize) -> Result<ExplorationSet> {
    if m == 0 {
        return Err(Error::input("need at least one objective"));
    }
    if resolution == 0 {
        return Err(Error::input("grid resolution must be at least 1"));
    }
    let count = binomial(resolution + m - 1, m - 1);
    if count > MAX_GRID_POINTS as f64 {
        return Err(Error::TooLarge(format!(
            "grid with M = {m}, resolution = {resolution} has {count:.3e} points (limit {MAX_GRID_POINTS})"
        )));
    }
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count as usize);
    let mut parts = vec![0usize; m];
    fn fill(k: usize, left: usize, parts: &mut [usize], res: usize, out: &mut Vec<Vec<f64>>) {
        if k + 1 == parts.len() {
            parts[k] = left;
            out.push(parts.iter().map(|&x| x as f64 / res as f64).collect());
            return;
        }
        for v in (0..=left).rev() {
            parts[k] = v;
            fill(k + 1, left - v, parts, res, out);
        }
    }
    fill(0, resolution, &mut parts, resolution, &mut out);
    ExplorationSet::from_raw(out.iter().map(|v| v.as_slice()), SetSource::Lattice { resolution })
}

/// One `(p, seed)` run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub p: Vec<f64>,
    /// Empty when the run failed.
    #[serde(rename = "J_final")]
    pub j_final: Vec<f64>,
    /// `None` for exact values, the sample count for Monte-Carlo estimates.
    pub monte_carlo_steps: Option<usize>,
    pub stationarity_gap: Option<f64>,
    pub seed: u64,
    pub converged: bool,
    pub error: Option<String>,
}

/// Everything fixed across a sweep.
#[derive(Debug, Clone)]
pub struct Sweep<'a> {
    pub momdp: &'a TabularMomdp,
    pub policy_init: &'a SoftmaxPolicy,
    pub features: &'a FeatureMap,
    pub critic: &'a CriticConfig,
    pub actor: &'a ActorConfig,
    pub converged_gap_tol: f64,
}

fn cmp_weights(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// Runs one `run_mocha` per `(p, seed)` pair on up to `parallelism` workers.
///
/// Each run's stream is seeded by its seed alone, so all weight vectors share
/// common random numbers. Points come back sorted by `p` (lexicographic) then seed.
pub fn explore(sweep: &Sweep<'_>, set: &ExplorationSet, seeds: &[u64], parallelism: Parallelism) -> Vec<FrontierPoint> {
    let mut tasks: Vec<(&WeightVector, u64)> =
        set.weights.iter().flat_map(|w| seeds.iter().map(move |&s| (w, s))).collect();
    tasks.sort_by(|a, b| cmp_weights(a.0.as_slice(), b.0.as_slice()).then(a.1.cmp(&b.1)));
    par::map_ordered(&tasks, parallelism, |&(p, seed)| {
        match run_mocha(sweep.momdp, sweep.policy_init, sweep.features, sweep.critic, sweep.actor, p, stream_rng(seed), seed) {
            Ok(r) => FrontierPoint {
                p: p.as_slice().to_vec(),
                converged: r.stationarity_gap.is_some_and(|g| g <= sweep.converged_gap_tol),
                j_final: r.j_final,
                monte_carlo_steps: (r.j_final_source == ValueSource::MonteCarlo).then_some(MONTE_CARLO_STEPS),
                stationarity_gap: r.stationarity_gap,
                seed,
                error: None,
            },
            Err(e) => {
                log::warn!("run p = {:?}, seed = {seed} failed: {e}", p.as_slice());
                FrontierPoint {
                    p: p.as_slice().to_vec(),
                    j_final: Vec::new(),
                    monte_carlo_steps: None,
                    stationarity_gap: None,
                    seed,
                    converged: false,
                    error: Some(e.to_string()),
                }
            }
        }
    })
}

/// Frontier file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrontierFormat {
    Csv,
    Json,
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV with columns `p_1..p_M, J_1..J_M, gap, seed, converged`; `m` fixes the header width.
pub fn frontier_csv(points: &[FrontierPoint], m: usize) -> String {
    let mut out = String::new();
    let header: Vec<String> = (1..=m)
        .map(|i| format!("p_{i}"))
        .chain((1..=m).map(|i| format!("J_{i}")))
        .chain(["gap", "seed", "converged"].map(String::from))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for pt in points {
        let mut cells: Vec<String> = pt.p.iter().map(|&x| fmt_float(x)).collect();
        if pt.j_final.len() == m {
            cells.extend(pt.j_final.iter().map(|&x| fmt_float(x)));
        } else {
            cells.extend(std::iter::repeat_n(String::new(), m));
        }
        cells.push(pt.stationarity_gap.map(fmt_float).unwrap_or_default());
        cells.push(pt.seed.to_string());
        cells.push(pt.converged.to_string());
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

/// Renders the frontier in the given format.
pub fn render_frontier(points: &[FrontierPoint], m: usize, format: FrontierFormat) -> Result<String> {
    match format {
        FrontierFormat::Csv => Ok(frontier_csv(points, m)),
        FrontierFormat::Json => Ok(serde_json::to_string_pretty(points)?),
    }
}

/// Writes the frontier to `path`.
pub fn export_frontier(points: &[FrontierPoint], m: usize, path: impl AsRef<Path>, format: FrontierFormat) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_frontier(points, m, format)?).map_err(|e| Error::io(path, e))
}

/// Reads a JSON frontier back.
pub fn load_frontier_json(path: impl AsRef<Path>) -> Result<Vec<FrontierPoint>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
