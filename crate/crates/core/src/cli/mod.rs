//! Command-line front end: argument parsing, subcommands and exit codes.

mod config;
mod output;

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

pub use config::{Ablation, CriticSection, ExperimentConfig, Loaded, WeightsSpec};
pub use output::{json_bytes, sha256_hex, version_string, write_once, Manifest};

use crate::actor::run_mocha;
use crate::error::Error;
use crate::explorer::{explore, frontier_csv, ncis_evaluate, LoggedDataset, Sweep};
use crate::momdp::{check_ergodic, stream_rng, validate, MomdpSpec};
use crate::oracle::{self, GradientMeasure, DENSE_STATE_LIMIT};
use crate::policy::SoftmaxPolicy;
use crate::Mode;

/// Exit status for each failure class.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DIVERGENCE: i32 = 3;
    pub const TOO_LARGE: i32 = 4;
    pub const ZERO_BEHAVIOR_PROB: i32 = 5;
}

/// Environment variable that caps the worker pool.
pub const THREADS_ENV: &str = "MOCHA_THREADS";

#[derive(Debug, Parser)]
#[command(name = "mocha", version, about = "Multi-objective actor-critic with weighted-Chebyshev exploration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the actor-critic once for a single preference vector.
    Run(CommonArgs),
    /// Sweep every (weight vector, seed) pair and write the frontier.
    Explore(CommonArgs),
    /// Exact reference computations at the configured initial policy.
    Oracle {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        what: OracleWhat,
    },
    /// Score a policy on logged data with normalized capped importance sampling.
    EvalNcis(NcisArgs),
    /// Check a config (or a bare MOMDP file) without running anything.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker count for sweeps (capped by MOCHA_THREADS).
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Replace the config's seed list with this one seed.
    #[arg(long)]
    pub seed_override: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleWhat {
    Values,
    Gradient,
    FixedPoint,
    Front,
    Gap,
    Mixing,
    Constants,
}

#[derive(Debug, Args)]
pub struct NcisArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Target policy file `{num_states, num_actions, theta}`.
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long)]
    pub cap: f64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, required_unless_present = "momdp")]
    pub config: Option<PathBuf>,
    /// Validate a MOMDP file on its own.
    #[arg(long)]
    pub momdp: Option<PathBuf>,
}

/// Exit code for a failed command: the first library error in the chain decides.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Divergence { .. } => exit::DIVERGENCE,
                Error::TooLarge(_) => exit::TOO_LARGE,
                Error::Data(_) => exit::ZERO_BEHAVIOR_PROB,
                Error::Input(_)
                | Error::Config(_)
                | Error::NonErgodic(_)
                | Error::Assumption(_)
                | Error::Io { .. }
                | Error::Json(_) => exit::CONFIG,
            };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return exit::CONFIG;
        }
    }
    exit::FAILURE
}

/// Worker count: the request (or all cores), capped by `MOCHA_THREADS`.
pub fn effective_parallelism(requested: Option<usize>) -> usize {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let want = requested.unwrap_or(available).max(1);
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(cap) if cap >= 1 => want.min(cap),
        _ => want,
    }
}

/// Parses `args`, runs the command, prints errors, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

pub fn dispatch(cmd: &Command) -> anyhow::Result<i32> {
    match cmd {
        Command::Run(a) => cmd_run(a),
        Command::Explore(a) => cmd_explore(a),
        Command::Oracle { common, what } => cmd_oracle(common, *what),
        Command::EvalNcis(a) => cmd_eval_ncis(a),
        Command::Validate(a) => cmd_validate(a),
    }
}

fn load(args: &CommonArgs, check_step: bool) -> anyhow::Result<Loaded> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed_override {
        cfg.seeds = vec![seed];
    }
    let base = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let loaded = cfg.resolve(&base).with_context(|| format!("loading {}", args.config.display()))?;
    if check_step {
        step_size_check(&loaded);
    }
    Ok(loaded)
}

/// Logs a warning when the critic step exceeds the limit implied by the exact TD constants.
fn step_size_check(l: &Loaded) {
    if l.actor.exact_gradients || l.momdp.num_states() > DENSE_STATE_LIMIT {
        return;
    }
    let table = l.policy.table();
    let Ok(d) = oracle::stationary_distribution(&l.momdp, &table) else { return };
    for i in 0..l.momdp.num_objectives() {
        let gamma = match l.critic.mode {
            Mode::Discounted => l.momdp.discounts()[i],
            Mode::Average => 1.0,
        };
        let a = oracle::td_matrix(&l.momdp, &table, &l.features, gamma, &d);
        let lambda_a = oracle::negative_definiteness_margin(&a);
        if lambda_a > 0.0 {
            if let Some(w) = l.critic.step_size_warning(lambda_a, a.norm()) {
                log::warn!("objective {i}: {w}");
            }
        }
    }
}

/// Writes `config.json` and a manifest; `tag` distinguishes manifests of different commands sharing a directory.
fn write_manifest(dir: &Path, command: &str, tag: &str, l: &Loaded, outputs: Vec<PathBuf>) -> anyhow::Result<PathBuf> {
    let cfg_text = l.config.to_json_string()?;
    let config_path = write_once(dir, "config.json", format!("{cfg_text}\n").as_bytes())?;
    let mut names: Vec<String> = outputs
        .iter()
        .chain(std::iter::once(&config_path))
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    names.sort();
    let manifest = Manifest {
        command: command.into(),
        version: version_string(),
        config_sha256: sha256_hex(cfg_text.as_bytes()),
        seeds: l.config.seeds.clone(),
        config: serde_json::from_str(&cfg_text)?,
        outputs: names,
    };
    let name = if tag.is_empty() { "manifest.json".to_string() } else { format!("manifest_{tag}.json") };
    Ok(write_once(dir, &name, &json_bytes(&manifest)?)?)
}

fn cmd_run(args: &CommonArgs) -> anyhow::Result<i32> {
    let l = load(args, true)?;
    let p = l.config.single_weight(l.momdp.num_objectives())?;
    let seed = l.config.seeds[0];
    let result = run_mocha(&l.momdp, &l.policy, &l.features, &l.critic, &l.actor, &p, stream_rng(seed), seed)
        .with_context(|| format!("run with seed {seed}"))?;
    let dir = l.output_dir(args.out.as_deref());
    let path = write_once(&dir, "run_result.json", &json_bytes(&result)?)?;
    write_manifest(&dir, "run", "", &l, vec![path.clone()])?;
    println!(
        "J_final = {:?}, gap = {}, transitions = {}; wrote {}",
        result.j_final,
        result.stationarity_gap.map_or("n/a".into(), |g| format!("{g:.3e}")),
        result.transitions,
        path.display()
    );
    Ok(exit::OK)
}

fn cmd_explore(args: &CommonArgs) -> anyhow::Result<i32> {
    let l = load(args, true)?;
    let m = l.momdp.num_objectives();
    let set = l.config.exploration_set(m)?;
    let sweep = Sweep {
        momdp: &l.momdp,
        policy_init: &l.policy,
        features: &l.features,
        critic: &l.critic,
        actor: &l.actor,
        converged_gap_tol: l.config.converged_gap_tol,
    };
    let workers = effective_parallelism(args.parallelism);
    let points = explore(&sweep, &set, &l.config.seeds, workers);
    let dir = l.output_dir(args.out.as_deref());
    let csv = write_once(&dir, "frontier.csv", frontier_csv(&points, m).as_bytes())?;
    let js = write_once(&dir, "frontier.json", &json_bytes(&points)?)?;
    write_manifest(&dir, "explore", "", &l, vec![csv.clone(), js])?;
    let converged = points.iter().filter(|p| p.converged).count();
    let failed = points.iter().filter(|p| p.error.is_some()).count();
    println!(
        "{} runs ({converged} converged, {failed} failed) on {workers} worker(s); wrote {}",
        points.len(),
        csv.display()
    );
    if converged == 0 {
        eprintln!("error: no frontier point converged");
        return Ok(exit::FAILURE);
    }
    Ok(exit::OK)
}

fn cmd_oracle(args: &CommonArgs, what: OracleWhat) -> anyhow::Result<i32> {
    let l = load(args, false)?;
    let (m, mode) = (&l.momdp, l.config.mode);
    let table = l.policy.table();
    let (name, report) = match what {
        OracleWhat::Values => ("values", serde_json::to_value(oracle::evaluate(m, &table, mode)?)?),
        OracleWhat::Gradient => {
            let cols = |measure| -> anyhow::Result<Vec<Vec<f64>>> {
                Ok((0..m.num_objectives())
                    .map(|i| oracle::exact_policy_gradient(m, &l.policy, i, mode, measure))
                    .collect::<crate::Result<_>>()?)
            };
            let mut v = json!({ "stationary": cols(GradientMeasure::Stationary)? });
            if mode == Mode::Discounted {
                v["discounted_occupancy"] = json!(cols(GradientMeasure::DiscountedOccupancy)?);
            }
            ("gradient", v)
        }
        OracleWhat::FixedPoint => {
            let w = (0..m.num_objectives())
                .map(|i| oracle::td_fixed_point(m, &table, &l.features, i, mode))
                .collect::<crate::Result<Vec<_>>>()?;
            ("fixed_point", json!({ "w_star": w }))
        }
        OracleWhat::Front => ("front", serde_json::to_value(oracle::brute_force_pareto_front(m, mode, true)?)?),
        OracleWhat::Gap => {
            let gap = oracle::pareto_stationarity_gap(m, &l.policy, mode, l.actor.gradient_measure)?;
            ("gap", json!({ "gap": gap, "measure": l.actor.gradient_measure }))
        }
        OracleWhat::Mixing => ("mixing", serde_json::to_value(oracle::estimate_mixing(m, &table, oracle::MIXING_HORIZON)?)?),
        OracleWhat::Constants => {
            ("constants", serde_json::to_value(oracle::analysis_constants(m, &l.policy, &l.features, mode)?)?)
        }
    };
    let dir = l.output_dir(args.out.as_deref());
    let path = write_once(&dir, &format!("oracle_{name}.json"), &json_bytes(&report)?)?;
    write_manifest(&dir, &format!("oracle {name}"), &format!("oracle_{name}"), &l, vec![path.clone()])?;
    println!("wrote {}", path.display());
    Ok(exit::OK)
}

fn cmd_eval_ncis(args: &NcisArgs) -> anyhow::Result<i32> {
    if !(args.cap > 0.0) {
        return Err(Error::Config(format!("cap must be positive, got {}", args.cap)).into());
    }
    let target = SoftmaxPolicy::load(&args.policy)?;
    let data = LoggedDataset::load(&args.dataset)?;
    let behavior = data.behavior_policy(target.num_states(), target.num_actions())?;
    let scores = ncis_evaluate(&data, &behavior, &target, args.cap)?;
    let report = json!({
        "cap": args.cap,
        "num_steps": data.steps.len(),
        "scores": scores,
        "dataset_sha256": sha256_hex(&std::fs::read(&args.dataset).map_err(|e| Error::io(&args.dataset, e))?),
        "version": version_string(),
    });
    let path = write_once(&args.out, "ncis_scores.json", &json_bytes(&report)?)?;
    println!("NCIS = {scores:?}; wrote {}", path.display());
    Ok(exit::OK)
}

fn cmd_validate(args: &ValidateArgs) -> anyhow::Result<i32> {
    if let Some(path) = &args.momdp {
        let spec = MomdpSpec::load(path)?;
        let report = validate(&spec);
        if !report.is_valid() {
            return Err(Error::Config(format!("{}: {report}", path.display())).into());
        }
        println!("{}: valid", path.display());
    }
    if let Some(cfg) = &args.config {
        let l = load(&CommonArgs { config: cfg.clone(), out: None, parallelism: None, seed_override: None }, true)?;
        let erg = check_ergodic(&l.momdp, &l.policy.table());
        if !erg.ergodic {
            return Err(Error::Config(format!("initial policy induces a non-ergodic chain: {erg:?}")).into());
        }
        let set = l.config.exploration_set(l.momdp.num_objectives())?;
        println!(
            "{}: valid ({} states, {} actions, {} objectives, {} weight vector(s), {} seed(s))",
            cfg.display(),
            l.momdp.num_states(),
            l.momdp.num_actions(),
            l.momdp.num_objectives(),
            set.len(),
            l.config.seeds.len()
        );
    }
    Ok(exit::OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_code_table() {
        let cases: Vec<(Error, i32)> = vec![
            (Error::Config("x".into()), exit::CONFIG),
            (Error::Input("x".into()), exit::CONFIG),
            (Error::NonErgodic("x".into()), exit::CONFIG),
            (Error::Assumption("x".into()), exit::CONFIG),
            (Error::io("p", std::io::Error::from(std::io::ErrorKind::NotFound)), exit::CONFIG),
            (Error::Divergence { what: "critic".into(), iteration: 1, detail: "x".into() }, exit::DIVERGENCE),
            (Error::TooLarge("x".into()), exit::TOO_LARGE),
            (Error::Data("x".into()), exit::ZERO_BEHAVIOR_PROB),
        ];
        for (e, code) in cases {
            let wrapped = anyhow::Error::from(e).context("outer");
            assert_eq!(exit_code(&wrapped), code);
        }
        assert_eq!(exit_code(&anyhow::anyhow!("other")), exit::FAILURE);
    }

    #[test]
    fn thread_cap() {
        assert!(effective_parallelism(Some(3)) <= 3);
        assert!(effective_parallelism(Some(0)) >= 1);
    }

    #[test]
    fn parses_every_subcommand() {
        for args in [
            vec!["mocha", "run", "--config", "c.json"],
            vec!["mocha", "explore", "--config", "c.json", "--parallelism", "8", "--out", "o", "--seed-override", "3"],
            vec!["mocha", "oracle", "--config", "c.json", "--what", "fixed-point"],
            vec!["mocha", "eval-ncis", "--dataset", "d.json", "--policy", "p.json", "--cap", "10"],
            vec!["mocha", "validate", "--momdp", "m.json"],
        ] {
            Cli::try_parse_from(args).unwrap();
        }
        assert!(Cli::try_parse_from(["mocha", "oracle", "--config", "c", "--what", "nope"]).is_err());
    }
}
