//! Runs the `mocha` binary and checks outputs and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use mocha::explorer::{generate_logged_dataset, LoggedDataset, LoggedStep};
use mocha::momdp::{stream_rng, MomdpSpec};
use mocha::oracle::{dominates, objective_vector};
use mocha::policy::PolicyFile;
use mocha::{fixtures, Mode, ProbTable, SoftmaxPolicy};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn mocha(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mocha")).args(args).env_remove("MOCHA_THREADS").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Writes a config into `dir` and returns its path.
fn config(dir: &Path, momdp: &Path, extra: Value) -> PathBuf {
    let mut v = serde_json::json!({
        "momdp_path": momdp,
        "critic": { "beta": 0.1, "N": 20, "D": 16 },
        "actor": { "alpha": 2.0, "B": 32, "T": 10 },
        "weights": { "explicit": [[0.5, 0.5]] },
        "seeds": [1],
        "output_dir": "out"
    });
    for (k, x) in extra.as_object().unwrap() {
        v[k] = x.clone();
    }
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_result_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), &fixture("conflicting_5x3.json"), serde_json::json!({ "seeds": [4, 5] }));
    let o = mocha(&["run", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = tmp.path().join("out");
    let result = read_json(&out.join("run_result.json"));
    assert_eq!(result["transitions"], 10 * (20 * 16 + 32));
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "run");
    assert_eq!(manifest["seeds"], serde_json::json!([4, 5]));
    assert!(manifest["version"].as_str().unwrap().starts_with('v'));
    let used = std::fs::read(out.join("config.json")).unwrap();
    assert_eq!(manifest["config_sha256"], mocha::cli::sha256_hex(used.strip_suffix(b"\n").unwrap()));
    assert_eq!(manifest["config"], serde_json::from_slice::<Value>(&used).unwrap());

    // same invocation again: files are identical so nothing new appears
    let before = std::fs::read_dir(&out).unwrap().count();
    assert_eq!(code(&mocha(&["run", "--config", s(&cfg)])), 0);
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), before);

    // a different seed writes beside the old files instead of over them
    assert_eq!(code(&mocha(&["run", "--config", s(&cfg), "--seed-override", "9"])), 0);
    let names: Vec<String> =
        std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    assert!(names.iter().any(|n| n.starts_with("run_result-") && n.ends_with(".json")), "{names:?}");
    assert_eq!(read_json(&out.join("manifest.json"))["seeds"], serde_json::json!([4, 5]));
}

#[test]
fn missing_momdp_is_a_config_error_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), &tmp.path().join("nowhere.json"), serde_json::json!({}));
    let o = mocha(&["run", "--config", s(&cfg)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nowhere.json"), "{}", stderr(&o));
}

#[test]
fn malformed_configs_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let m = fixture("conflicting_5x3.json");
    for extra in [
        serde_json::json!({ "seeds": [] }),
        serde_json::json!({ "critic": { "beta": -1.0, "N": 1, "D": 1 } }),
        serde_json::json!({ "weights": { "explicit": [[0.5, 0.5], [1.0, 0.0]] } }),
        serde_json::json!({ "unknown_key": 1 }),
        serde_json::json!({ "actor": { "alpha": 1.0, "B": 0, "T": 1 } }),
    ] {
        let cfg = config(tmp.path(), &m, extra.clone());
        let o = mocha(&["run", "--config", s(&cfg)]);
        assert_eq!(code(&o), 2, "{extra}: {}", stderr(&o));
    }
    std::fs::write(tmp.path().join("broken.json"), "{ not json").unwrap();
    assert_eq!(code(&mocha(&["run", "--config", s(&tmp.path().join("broken.json"))])), 2);
    assert_eq!(code(&mocha(&["run"])), 2);
}

#[test]
fn large_critic_step_diverges_with_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        &fixture("conflicting_5x3.json"),
        serde_json::json!({ "critic": { "beta": 100.0, "N": 200, "D": 16 } }),
    );
    let o = mocha(&["run", "--config", s(&cfg)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("divergence"));
}

fn csv_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().skip(1).map(str::to_string).collect()
}

#[test]
fn explore_one_hot_and_grid_row_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let examples = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let out = tmp.path().join("one_hot");
    let o = mocha(&["explore", "--config", s(&examples.join("explore_one_hot.json")), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(csv_rows(&out.join("frontier.csv")).len(), 5);
    let json = read_json(&out.join("frontier.json"));
    assert_eq!(json.as_array().unwrap().len(), 5);
    assert!(out.join("manifest.json").exists());

    let cfg = config(tmp.path(), &fixture("conflicting_5x3.json"), serde_json::json!({ "weights": { "grid": 4 } }));
    let out = tmp.path().join("grid");
    let o = mocha(&["explore", "--config", s(&cfg), "--out", s(&out), "--parallelism", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(csv_rows(&out.join("frontier.csv")).len(), 5);
}

#[test]
fn explore_without_any_converged_point_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        &fixture("conflicting_5x3.json"),
        serde_json::json!({ "weights": { "grid": 2 }, "converged_gap_tol": 0.0,
                            "actor": { "alpha": 0.01, "B": 8, "T": 2 } }),
    );
    let o = mocha(&["explore", "--config", s(&cfg)]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert_eq!(csv_rows(&tmp.path().join("out/frontier.csv")).len(), 3);
}

#[test]
fn thread_cap_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), &fixture("conflicting_5x3.json"), serde_json::json!({ "weights": { "grid": 1 } }));
    let o = Command::new(env!("CARGO_BIN_EXE_mocha"))
        .args(["explore", "--config", s(&cfg), "--parallelism", "8"])
        .env("MOCHA_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("on 1 worker(s)"));
}

#[test]
fn oracle_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), &fixture("antipodal_5x3.json"), serde_json::json!({}));
    assert_eq!(code(&mocha(&["oracle", "--config", s(&cfg), "--what", "gap"])), 0);
    let gap = read_json(&tmp.path().join("out/oracle_gap.json"))["gap"].as_f64().unwrap();
    assert!(gap <= 1e-8, "{gap}");

    assert_eq!(code(&mocha(&["oracle", "--config", s(&cfg), "--what", "constants"])), 0);
    let c = read_json(&tmp.path().join("out/oracle_constants.json"));
    assert!(c["lambda_a"].as_f64().unwrap() > 0.0);
    for o in c["objectives"].as_array().unwrap() {
        assert_eq!(o["within_bound"], true);
    }
    assert!(tmp.path().join("out/manifest_oracle_constants.json").exists());

    // front on the 3-state fixture: check every pair and each point's value independently
    let dir = tmp.path().join("front");
    std::fs::create_dir(&dir).unwrap();
    let cfg = config(&dir, &fixture("conflicting_3x2.json"), serde_json::json!({}));
    assert_eq!(code(&mocha(&["oracle", "--config", s(&cfg), "--what", "front"])), 0);
    let front = read_json(&dir.join("out/oracle_front.json"));
    let strict: Vec<(Vec<usize>, Vec<f64>)> = front["strict"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| (serde_json::from_value(p["actions"].clone()).unwrap(), serde_json::from_value(p["j"].clone()).unwrap()))
        .collect();
    assert!(!strict.is_empty());
    let m = fixtures::conflicting_3x2();
    let mut all = Vec::new();
    for k in 0..8usize {
        let actions: Vec<usize> = (0..3).map(|s| (k >> s) & 1).collect();
        all.push(objective_vector(&m, &ProbTable::deterministic(2, &actions), Mode::Discounted).unwrap());
    }
    for (actions, j) in &strict {
        let direct = objective_vector(&m, &ProbTable::deterministic(2, actions), Mode::Discounted).unwrap();
        assert!(direct.iter().zip(j).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(all.iter().all(|other| !dominates(other, j) || other == j));
    }
    // every enumerated value is dominated by, or equal to, some front point
    for j in &all {
        assert!(strict.iter().any(|(_, f)| dominates(f, j) || f == j));
    }
}

#[test]
fn oracle_front_too_large_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let ns = 21;
    let spec = MomdpSpec {
        num_states: ns,
        num_actions: 2,
        num_objectives: 2,
        r_max: 1.0,
        transition: vec![vec![vec![1.0 / ns as f64; ns]; 2]; ns],
        rewards: vec![vec![vec![0.5, 0.5]; 2]; ns],
        discounts: vec![0.9, 0.9],
        start_dist: vec![1.0 / ns as f64; ns],
    };
    let path = tmp.path().join("big.json");
    std::fs::write(&path, spec.to_json_string().unwrap()).unwrap();
    let cfg = config(tmp.path(), &path, serde_json::json!({}));
    let o = mocha(&["oracle", "--config", s(&cfg), "--what", "front"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

fn write_policy(dir: &Path, name: &str, ns: usize, na: usize, theta: Vec<f64>) -> PathBuf {
    let p = dir.join(name);
    let file = PolicyFile { num_states: ns, num_actions: na, theta };
    std::fs::write(&p, serde_json::to_string(&file).unwrap()).unwrap();
    p
}

#[test]
fn eval_ncis_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let m = fixtures::conflicting_5x3();
    let behavior_theta: Vec<f64> = (0..15).map(|k| ((k * 7) % 5) as f64 * 0.3 - 0.6).collect();
    let behavior = SoftmaxPolicy::tabular(5, 3, behavior_theta.clone()).unwrap();
    let data = generate_logged_dataset(&m, &behavior, 3000, stream_rng(21)).unwrap();
    let data_path = tmp.path().join("data.json");
    std::fs::write(&data_path, data.to_json_string().unwrap()).unwrap();

    // target = behavior: plain means, bit for bit
    let same = write_policy(tmp.path(), "same.json", 5, 3, behavior_theta.clone());
    let out = tmp.path().join("a");
    let o = mocha(&["eval-ncis", "--dataset", s(&data_path), "--policy", s(&same), "--cap", "10", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let scores: Vec<f64> = serde_json::from_value(read_json(&out.join("ncis_scores.json"))["scores"].clone()).unwrap();
    assert_eq!(scores, data.mean_rewards().unwrap());

    // another target: recompute the weighted average directly
    let target_theta: Vec<f64> = (0..15).map(|k| if k % 3 == 0 { 1.0 } else { -0.5 }).collect();
    let other = write_policy(tmp.path(), "other.json", 5, 3, target_theta.clone());
    let out = tmp.path().join("b");
    let cap = 1.5;
    let o = mocha(&["eval-ncis", "--dataset", s(&data_path), "--policy", s(&other), "--cap", "1.5", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let scores: Vec<f64> = serde_json::from_value(read_json(&out.join("ncis_scores.json"))["scores"].clone()).unwrap();
    let softmax = |theta: &[f64], s: usize, a: usize| {
        let row = &theta[3 * s..3 * s + 3];
        let z: f64 = row.iter().map(|x| x.exp()).sum();
        row[a].exp() / z
    };
    let (mut num, mut den) = (vec![0.0; 2], 0.0);
    for LoggedStep(st, a, r) in &data.steps {
        let w = (softmax(&target_theta, *st, *a) / softmax(&behavior_theta, *st, *a)).min(cap);
        den += w;
        for i in 0..2 {
            num[i] += w * r[i];
        }
    }
    for i in 0..2 {
        assert!((scores[i] - num[i] / den).abs() <= 1e-12, "{} vs {}", scores[i], num[i] / den);
    }

    let o = mocha(&["eval-ncis", "--dataset", s(&data_path), "--policy", s(&same), "--cap", "0", "--out", s(&out)]);
    assert_eq!(code(&o), 2);

    // an action the behavior policy could never have taken
    let zero = LoggedDataset { behavior_policy_theta: vec![0.0, -2000.0], steps: vec![LoggedStep(0, 1, vec![1.0])] };
    let zero_path = tmp.path().join("zero.json");
    std::fs::write(&zero_path, zero.to_json_string().unwrap()).unwrap();
    let pol = write_policy(tmp.path(), "one.json", 1, 2, vec![0.0, 0.0]);
    let o = mocha(&["eval-ncis", "--dataset", s(&zero_path), "--policy", s(&pol), "--cap", "10", "--out", s(&out)]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
}

#[test]
fn validate_command() {
    let tmp = tempfile::tempdir().unwrap();
    let good = fixture("mixed_discount_4x2.json");
    assert_eq!(code(&mocha(&["validate", "--momdp", s(&good)])), 0);
    let cfg = config(tmp.path(), &good, serde_json::json!({ "mode": "average" }));
    let o = mocha(&["validate", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let mut spec = MomdpSpec::load(&good).unwrap();
    spec.transition[0][0][0] -= 0.1;
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, spec.to_json_string().unwrap()).unwrap();
    let o = mocha(&["validate", "--momdp", s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bad.json"));

    // identity features contain the constant vector, which average mode rejects
    let feats = tmp.path().join("phi.json");
    let phi: Vec<Vec<f64>> = (0..4).map(|s| (0..4).map(|k| if k == s { 1.0 } else { 0.0 }).collect()).collect();
    std::fs::write(&feats, serde_json::json!({ "phi": phi }).to_string()).unwrap();
    let cfg = config(tmp.path(), &good, serde_json::json!({ "mode": "average", "features_path": feats }));
    assert_eq!(code(&mocha(&["validate", "--config", s(&cfg)])), 2);
}
