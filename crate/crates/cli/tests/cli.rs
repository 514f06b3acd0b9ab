use std::path::Path;
use std::process::{Command, Output};

use rallybot::config::Stamp;
use rallybot::skills::{LinearPolicy, Skill, ACTION_DIM};
use tempfile::TempDir;

fn rallybot(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rallybot"))
        .arg("--root")
        .arg(dir)
        .args(args)
        .env_remove("RALLYBOT_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = rallybot(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

/// Small corpus and one-repetition descriptors so the stack builds quickly.
const SMALL: [&str; 4] = ["--set", "dataset.rally_balls=120", "--set", "descriptors.repetitions=1"];

fn small(args: &[&str]) -> Vec<String> {
    SMALL.iter().chain(args).map(|s| s.to_string()).collect()
}

fn ok_small(dir: &Path, args: &[&str]) -> String {
    let v = small(args);
    ok(dir, &v.iter().map(String::as_str).collect::<Vec<_>>())
}

fn prepared() -> TempDir {
    let t = TempDir::new().unwrap();
    ok_small(t.path(), &["dataset", "synth", "--serve", "40"]);
    ok_small(t.path(), &["descriptors", "build"]);
    t
}

#[test]
fn help_and_usage_errors() {
    let t = TempDir::new().unwrap();
    let help = rallybot(t.path(), &["--help"]);
    assert_eq!(code(&help), 0);
    let text = String::from_utf8_lossy(&help.stdout);
    for sub in ["dataset", "train", "descriptors", "play", "config", "Exit codes"] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
    assert_eq!(code(&rallybot(t.path(), &["play", "frobnicate"])), 1);
    assert_eq!(code(&rallybot(t.path(), &["dataset", "fit"])), 1);
    assert_eq!(code(&rallybot(t.path(), &["--set", "hlc.alpha=0", "config", "hash"])), 1);
    assert_eq!(code(&rallybot(t.path(), &["--set", "hlc.nonsense=1", "config", "hash"])), 1);
    assert_eq!(code(&rallybot(t.path(), &["play", "match", "--opponent", "nobody"])), 1);
}

#[test]
fn import_of_an_empty_file_fails_without_artifacts() {
    let t = TempDir::new().unwrap();
    let empty = t.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let out = rallybot(t.path(), &["dataset", "import", "--input", empty.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(!t.path().join("dataset.jsonl").exists());
    assert!(!t.path().join("reports").exists());
    let bad = t.path().join("bad.csv");
    std::fs::write(&bad, "t,x,y,z\n0,1,2\n").unwrap();
    assert_eq!(code(&rallybot(t.path(), &["dataset", "import", "--input", bad.to_str().unwrap()])), 2);
}

#[test]
fn missing_stages_are_named() {
    let t = TempDir::new().unwrap();
    let out = rallybot(t.path(), &["dataset", "stats"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing dataset stage"));
    ok(t.path(), &["dataset", "synth", "--rally", "20", "--serve", "5"]);
    let out = rallybot(t.path(), &["play", "match"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing descriptors stage"));
    let out = rallybot(t.path(), &["train", "film", "--skill", "0"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing skill stage"));
}

#[test]
fn reflect_doubles_the_all_column() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &["dataset", "synth", "--rally", "37", "--serve", "11"]);
    ok(t.path(), &["dataset", "reflect"]);
    let stats = ok(t.path(), &["dataset", "stats"]);
    let all = |label: &str, name: &str| -> usize {
        let line = stats.lines().find(|l| l.starts_with(&format!("{label},{name},"))).unwrap();
        line.split(',').nth(2).unwrap().parse().unwrap()
    };
    assert_eq!(all("Rallying", "Final"), 37);
    assert_eq!(all("Rallying", "Final+reflection"), 74);
    assert_eq!(all("Serves", "Final+reflection"), 22);
    let report = read(t.path().join("reports/dataset_stats.csv"));
    assert_eq!(Stamp::from_csv(&report).unwrap().seed, 0);
}

#[test]
fn fit_reports_a_residual_per_ball() {
    let t = TempDir::new().unwrap();
    let obs = t.path().join("obs");
    ok(t.path(), &["dataset", "observe", "--out-dir", obs.to_str().unwrap(), "--count", "4"]);
    let inputs: Vec<String> = (0..4).map(|i| obs.join(format!("flight_{i:03}.csv")).display().to_string()).collect();
    let mut args = vec!["dataset", "fit"];
    for i in &inputs {
        args.extend(["--input", i.as_str()]);
    }
    ok(t.path(), &args);
    let csv = read(t.path().join("reports/fit.csv"));
    let rows: Vec<&str> = csv.lines().skip(2).collect();
    assert_eq!(rows.len(), 4);
    let mut res: Vec<f64> = rows.iter().map(|r| r.split(',').nth(2).unwrap().parse().unwrap()).collect();
    res.sort_by(f64::total_cmp);
    assert!(res[1] <= 0.02 && res[2] <= 0.02, "residuals {res:?}");
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("ok")));
}

#[test]
fn import_recovers_rally_segments() {
    let t = TempDir::new().unwrap();
    let obs = t.path().join("obs");
    ok(t.path(), &["dataset", "observe", "--out-dir", obs.to_str().unwrap(), "--count", "2", "--kind", "rally"]);
    let a = obs.join("rally_000.csv").display().to_string();
    let b = obs.join("rally_001.csv").display().to_string();
    let out = ok(t.path(), &["dataset", "import", "--input", &a, "--input", &b]);
    assert!(out.contains("imported"), "{out}");
    let rows = read(t.path().join("dataset.jsonl")).lines().count();
    assert!(rows >= 2, "{rows} records");
    assert!(t.path().join("dataset.jsonl.meta.json").exists());
}

#[test]
fn zero_iteration_training_returns_the_initial_policy() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &["dataset", "synth", "--rally", "40", "--serve", "5"]);
    ok(t.path(), &["train", "skill", "--iterations", "0"]);
    let doc: serde_json::Value = serde_json::from_str(&read(t.path().join("skills/skill_00.json"))).unwrap();
    assert_eq!(doc["kind"], "skill");
    let skill: Skill = serde_json::from_value(doc["payload"].clone()).unwrap();
    assert_eq!(skill.policy, Some(LinearPolicy::zeros(ACTION_DIM)));
    assert_eq!(skill.id(), 0);
}

#[test]
fn same_seed_same_artifacts() {
    let run = |seed: &str| {
        let t = TempDir::new().unwrap();
        ok(t.path(), &["--seed", seed, "dataset", "synth", "--rally", "40", "--serve", "5"]);
        ok(t.path(), &["--seed", seed, "train", "skill", "--iterations", "2"]);
        let files = ["dataset.jsonl", "dataset.jsonl.meta.json", "skills/skill_00.json", "reports/train_skill_00.csv"];
        files.map(|f| read(t.path().join(f)))
    };
    let (a, b, c) = (run("5"), run("5"), run("6"));
    assert_eq!(a, b);
    assert_ne!(a[0], c[0]);
    assert_ne!(a[2], c[2]);
    let stamp = Stamp::from_csv(&a[3]).unwrap();
    assert_eq!(stamp.seed, 5);
    let doc: serde_json::Value = serde_json::from_str(&a[2]).unwrap();
    assert_eq!(doc["seed"], 5);
    assert_eq!(doc["config_hash"], stamp.config_hash.as_str());
}

#[test]
fn divergence_exits_three_and_keeps_a_checkpoint() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &["dataset", "synth", "--rally", "40", "--serve", "5"]);
    let out = rallybot(t.path(), &["--set", "train.reward.transition=nan", "train", "skill", "--iterations", "3"]);
    assert_eq!(code(&out), 3);
    assert!(t.path().join("skills/skill_00.checkpoint.json").exists());
    assert!(!t.path().join("skills/skill_00.json").exists());
}

#[test]
fn config_file_from_the_environment() {
    let t = TempDir::new().unwrap();
    let path = t.path().join("run.toml");
    ok(t.path(), &["--seed", "7", "--set", "hlc.alpha=0.2", "config", "init", path.to_str().unwrap()]);
    assert_eq!(code(&rallybot(t.path(), &["config", "init", path.to_str().unwrap()])), 1);
    let via_env = Command::new(env!("CARGO_BIN_EXE_rallybot")).args(["config", "show"]).env("RALLYBOT_CONFIG", &path).output().unwrap();
    assert!(via_env.status.success());
    let shown = String::from_utf8(via_env.stdout).unwrap();
    assert!(shown.contains("seed = 7"));
    assert!(shown.contains("alpha = 0.2"));
    let hash = Command::new(env!("CARGO_BIN_EXE_rallybot")).args(["config", "hash"]).env("RALLYBOT_CONFIG", &path).output().unwrap();
    let hash = String::from_utf8(hash.stdout).unwrap();
    assert!(shown.starts_with(&format!("# config_hash = \"{}\"", hash.trim())));
    assert_ne!(hash.trim(), ok(t.path(), &["config", "hash"]).trim());
}

#[test]
fn style_and_spin_models_train_and_load() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &["dataset", "synth", "--rally", "80", "--serve", "10"]);
    ok(t.path(), &["--set", "train.style_balls=60", "--set", "train.style.iterations=10", "train", "style"]);
    let doc: serde_json::Value = serde_json::from_str(&read(t.path().join("models/style.json"))).unwrap();
    let p = &doc["payload"];
    let (tv, hv) = (p["trained_validation"].as_f64().unwrap(), p["heuristic_validation"].as_f64().unwrap());
    let kept = p["kept_trained"].as_bool().unwrap();
    // The saved selector never does worse than the table-half rule on held-out balls.
    assert!(if kept { tv >= hv } else { p["selector"]["weights"].is_array() });
    ok(t.path(), &["--set", "train.spin_strokes=120", "--set", "train.spin.epochs=4", "train", "spin"]);
    let spin: serde_json::Value = serde_json::from_str(&read(t.path().join("models/spin.json"))).unwrap();
    assert_eq!(spin["kind"], "spin");
    assert!(spin["payload"]["report"]["holdout_accuracy"].as_f64().unwrap() > 0.5);
}

#[test]
fn end_to_end_pipeline() {
    let t = prepared();
    let dir = t.path();
    assert_eq!(std::fs::read_dir(dir.join("descriptors")).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "desc")).count(), 17);

    let out = ok_small(dir, &["play", "match", "--opponent", "never-returns"]);
    assert!(out.contains("games 3-0") && out.contains("points 33-0"), "{out}");
    let doc: serde_json::Value = serde_json::from_str(&read(dir.join("reports/match_never-returns.json"))).unwrap();
    assert_eq!(doc["payload"]["games"], serde_json::json!([0, 3]));
    assert_eq!(doc["payload"]["points"], serde_json::json!([0, 33]));
    let events = read(dir.join("reports/match_never-returns.events.jsonl"));
    let hits = events.lines().filter(|l| l.contains("\"event\":\"opponent_hit\"")).count();
    let decisions = events.lines().filter(|l| l.contains("\"event\":\"decision\"")).count();
    assert_eq!(hits, decisions);

    // Same seed, same report.
    let first = read(dir.join("reports/match_never-returns.json"));
    ok_small(dir, &["play", "match", "--opponent", "never-returns"]);
    assert_eq!(first, read(dir.join("reports/match_never-returns.json")));

    ok_small(dir, &["play", "match", "--variant", "alternating", "--opponent", "beginner"]);
    let doc: serde_json::Value = serde_json::from_str(&read(dir.join("reports/match_beginner.json"))).unwrap();
    assert_eq!(doc["payload"]["variant"], "AlternatingServes");

    let csv = ok_small(dir, &["play", "ablate", "--kind", "wait", "--balls", "40"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "setting,episodes,hit,land,miss,reference_land");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("wait-1,40,") && lines[2].starts_with("wait-3,40,"));
    let csv = ok_small(dir, &["play", "ablate", "--kind", "redecide", "--balls", "40"]);
    assert!(csv.contains("\ndecisive,40,") && csv.contains("\nre-decide,40,"), "{csv}");
}

#[test]
fn controller_beats_uniform_selection_in_a_tournament() {
    let t = prepared();
    let dir = t.path();
    let args = ["--set", "play.tournament=[\"intermediate\"]", "play", "tournament", "--matches", "4"];
    let full = ok_small(dir, &args);
    let mut uniform_args = args.to_vec();
    uniform_args.push("--uniform-random");
    let uniform = ok_small(dir, &uniform_args);
    let pct = |csv: &str| -> (u64, f64) {
        let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        (row[5].parse().unwrap(), row[6].parse().unwrap())
    };
    let (np, full_pct) = pct(&full);
    let (_, uni_pct) = pct(&uniform);
    assert!(np >= 150, "{np} points");
    assert!(full_pct > uni_pct, "full {full_pct} vs uniform {uni_pct}");
    assert!(dir.join("reports/tournament.csv").exists() && dir.join("reports/tournament_uniform.csv").exists());
}
