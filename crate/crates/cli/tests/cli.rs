use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

const TINY: &str = r#"
seed = 3

[train]
epochs = 3
hidden = 4
layers = 1
batch_size = 32
learning_rate = 0.01

[protocol]
t_max = 15.0
contact_loss_max = 10.0
no_contact_trials = 2
no_contact_duration = 3.0
window_stride = 4
train_grid = { kind = "points", points = [[1.0, 0.0], [0.0, 1.0]] }
val_grid = { kind = "points", points = [[1.0, 1.0]] }
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_proxipush"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn value(o: &Output, key: &str) -> Option<String> {
    stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stdout:\n{}\nstderr:\n{}", stdout(o), stderr(o));
}

struct Fixture {
    _root: tempfile::TempDir,
    config: PathBuf,
    data: PathBuf,
    models: PathBuf,
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// One collected box-only dataset plus trained models, shared by the tests.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let root = tempfile::tempdir().unwrap();
        let config = root.path().join("tiny.toml");
        fs::write(&config, TINY).unwrap();
        let data = root.path().join("data");
        let models = root.path().join("models");
        ok(&run(&["--config", s(&config), "--out", s(&data), "collect", "--objects", "box"]));
        for kind in ["cle", "cte"] {
            ok(&run(&["--config", s(&config), "--out", s(&models), "train", "--dataset", s(&data), "--kind", kind]));
        }
        Fixture {
            _root: root,
            config,
            data,
            models,
        }
    })
}

#[test]
fn collect_writes_counts_per_manifest_formula() {
    let f = fixture();
    let m: Value = serde_json::from_str(&fs::read_to_string(f.data.join("manifest.json")).unwrap()).unwrap();
    // 1 object × 2 friction sets × 2 targets + 2 no-contact trials
    assert_eq!(m["train_push_trials"], 4);
    assert_eq!(m["no_contact_trials"], 2);
    assert_eq!(m["train_trials"], 6);
    assert_eq!(m["val_trials"], 2);
    assert_eq!(m["objects"], serde_json::json!(["box"]));
    assert_eq!(m["trials"].as_array().unwrap().len(), 8);
    let logs = fs::read_dir(f.data.join("logs")).unwrap().count();
    assert_eq!(logs, 8);
    assert!(f.data.join("train.jsonl").exists() && f.data.join("val.jsonl").exists());
}

#[test]
fn default_protocol_counts() {
    // Counting only: the default manifest formula gives 3 × 2 × 24 + 12 and 3 × 2 × 6.
    let cfg = proxipush::WorkbenchConfig::default();
    assert_eq!(proxipush::pipeline::training_plan(&cfg, 0).len(), 156);
    let val = proxipush::pipeline::generate_target_grid(&cfg.protocol.val_grid);
    assert_eq!(proxipush::pipeline::push_plan(&cfg, &val, proxipush::SensingMode::ContactSkin, 0).len(), 36);
}

#[test]
fn collect_refuses_non_empty_output_and_is_deterministic() {
    let f = fixture();
    let o = run(&["--config", s(&f.config), "--out", s(&f.data), "collect", "--objects", "box"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("not empty"));

    let dir = tempfile::tempdir().unwrap();
    let again = dir.path().join("again");
    let o = run(&["--config", s(&f.config), "--out", s(&again), "collect", "--objects", "box"]);
    ok(&o);
    for name in ["train.jsonl", "val.jsonl", "manifest.json", "logs/trial_00003.jsonl"] {
        assert_eq!(fs::read(f.data.join(name)).unwrap(), fs::read(again.join(name)).unwrap(), "{name}");
    }
    // --force writes into the existing directory
    ok(&run(&["--config", s(&f.config), "--out", s(&again), "--force", "collect", "--objects", "box"]));
    // a different seed changes the hash and the data
    let other = dir.path().join("other");
    let o2 = run(&["--config", s(&f.config), "--seed", "4", "--out", s(&other), "collect", "--objects", "box"]);
    ok(&o2);
    assert_ne!(value(&o, "config_hash"), value(&o2, "config_hash"));
    assert_ne!(fs::read(f.data.join("train.jsonl")).unwrap(), fs::read(other.join("train.jsonl")).unwrap());
}

#[test]
fn train_writes_models_with_the_right_heads_and_curves() {
    let f = fixture();
    for (kind, outputs) in [("cle", 1), ("cte", 3)] {
        let m = proxipush::load_model(&f.models.join(format!("{kind}.model"))).unwrap();
        assert_eq!(m.shape.outputs, outputs);
        let curve = fs::read_to_string(f.models.join(format!("{kind}_curve.csv"))).unwrap();
        let mut lines = curve.lines();
        assert_eq!(lines.next(), Some("epoch,train_loss,val_loss"));
        assert_eq!(lines.count(), m.meta.epochs_run as usize);
        assert_eq!(m.meta.epochs_run, 3);
    }
}

#[test]
fn train_is_deterministic_and_refuses_overwrite() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &Path| {
        run(&["--config", s(&f.config), "--out", s(out), "train", "--dataset", s(&f.data), "--kind", "cte"])
    };
    ok(&args(dir.path()));
    assert_eq!(fs::read(dir.path().join("cte.model")).unwrap(), fs::read(f.models.join("cte.model")).unwrap());
    assert_eq!(args(dir.path()).status.code(), Some(1));
}

#[test]
fn train_rejects_bad_datasets() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    // no manifest
    let o = run(&["--out", s(dir.path()), "train", "--dataset", s(dir.path()), "--kind", "cle"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    // splits swapped
    let swapped = dir.path().join("swapped");
    fs::create_dir(&swapped).unwrap();
    fs::copy(f.data.join("manifest.json"), swapped.join("manifest.json")).unwrap();
    fs::copy(f.data.join("val.jsonl"), swapped.join("train.jsonl")).unwrap();
    fs::copy(f.data.join("val.jsonl"), swapped.join("val.jsonl")).unwrap();
    let o = run(&["--out", s(dir.path()), "train", "--dataset", s(&swapped), "--kind", "cle"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("split"), "{}", stderr(&o));
    // a dataset with a tick gap
    let gap = dir.path().join("gap");
    fs::create_dir(&gap).unwrap();
    fs::copy(f.data.join("manifest.json"), gap.join("manifest.json")).unwrap();
    fs::copy(f.data.join("val.jsonl"), gap.join("val.jsonl")).unwrap();
    let train = fs::read_to_string(f.data.join("train.jsonl")).unwrap();
    let kept: Vec<&str> = train.lines().enumerate().filter(|(i, _)| *i != 10).map(|(_, l)| l).collect();
    fs::write(gap.join("train.jsonl"), kept.join("\n")).unwrap();
    let o = run(&["--out", s(dir.path()), "train", "--dataset", s(&gap), "--kind", "cte"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("line 11"), "{}", stderr(&o));
}

#[test]
fn eval_skin_writes_a_six_column_table() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.csv");
    fs::write(&grid, "x,y\n1.0,0.0\n").unwrap();
    let out = dir.path().join("skin");
    let o = run(&["--config", s(&f.config), "--out", s(&out), "eval", "--mode", "skin", "--grid", s(&grid)]);
    ok(&o);
    assert_eq!(value(&o, "targets").as_deref(), Some("1"));
    let table = fs::read_to_string(out.join("success.csv")).unwrap();
    let mut rows = table.lines();
    let header = rows.next().unwrap();
    assert_eq!(header.split(',').count(), 7, "{header}");
    assert!(header.starts_with("mode,box/S_mu1,box/S_mu2,cylinder/S_mu1"));
    let skin = rows.next().unwrap();
    assert!(skin.starts_with("skin,"));
    assert!(skin.split(',').skip(1).all(|c| c.ends_with("/1")), "{skin}");
    for name in ["min_distance.csv", "metrics.csv", "wilcoxon.csv"] {
        assert!(out.join(name).exists(), "{name}");
    }
    assert_eq!(fs::read_dir(out.join("logs")).unwrap().count(), 6);
    // a second run into the same directory needs --force
    let o = run(&["--config", s(&f.config), "--out", s(&out), "eval", "--mode", "skin", "--grid", s(&grid)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_learned_modes_need_models() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--config", s(&f.config), "--out", s(dir.path()), "eval", "--mode", "lidar"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--models"), "{}", stderr(&o));
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = run(&["--out", s(dir.path()), "eval", "--mode", "lidar", "--models", s(&empty)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing cle model"), "{}", stderr(&o));
    // a CTE file in the CLE slot
    let wrong = dir.path().join("wrong");
    fs::create_dir(&wrong).unwrap();
    fs::copy(f.models.join("cte.model"), wrong.join("cle.model")).unwrap();
    fs::copy(f.models.join("cte.model"), wrong.join("cte.model")).unwrap();
    let o = run(&["--out", s(dir.path()), "eval", "--mode", "lidar", "--models", s(&wrong)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("expected cle"), "{}", stderr(&o));
}

#[test]
fn eval_depth_runs_with_lidar_models_and_pairs_with_skin() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.csv");
    fs::write(&grid, "x,y\n0.0,1.0\n").unwrap();
    let out = dir.path().join("depth");
    let o = run(&[
        "--config",
        s(&f.config),
        "--out",
        s(&out),
        "--jobs",
        "2",
        "eval",
        "--mode",
        "depth",
        "--grid",
        s(&grid),
        "--models",
        s(&f.models),
    ]);
    ok(&o);
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let modes: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(modes, ["skin", "depth"]);
    let wil = fs::read_to_string(out.join("wilcoxon.csv")).unwrap();
    assert!(wil.starts_with("comparison,pairs,"));
    assert!(wil.contains("abs_l_truth_vs_estimate"));
    assert!(wil.contains("delta_theta_norm_estimated_vs_skin"));
}

fn first_log_with_approach(dir: &Path) -> PathBuf {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir.join("logs")).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    paths
        .into_iter()
        .find(|p| {
            let head: Value =
                serde_json::from_str(fs::read_to_string(p).unwrap().lines().next().unwrap()).unwrap();
            head["summary"]["t_min"].as_f64().is_some_and(|t| t > 1.0)
        })
        .expect("a push trial with a late closest approach")
}

#[test]
fn replay_matches_every_stored_summary() {
    let f = fixture();
    for e in fs::read_dir(f.data.join("logs")).unwrap() {
        let p = e.unwrap().path();
        let o = run(&["replay", "--log", s(&p)]);
        ok(&o);
        assert_eq!(value(&o, "summary_match").as_deref(), Some("true"));
        assert!(value(&o, "config_hash").is_some());
    }
}

#[test]
fn replay_reports_the_line_of_a_truncated_log() {
    let f = fixture();
    let src = first_log_with_approach(&f.data);
    let text = fs::read_to_string(&src).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let mut cut = lines[..5].join("\n");
    cut.push('\n');
    cut.push_str(&lines[5][..lines[5].len() / 2]);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cut.jsonl");
    fs::write(&p, cut).unwrap();
    let o = run(&["replay", "--log", s(&p)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 6"), "{}", stderr(&o));
}

#[test]
fn replay_detects_an_edited_heading() {
    let f = fixture();
    let src = first_log_with_approach(&f.data);
    let text = fs::read_to_string(&src).unwrap();
    let original = run(&["replay", "--log", s(&src)]);
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 3 {
            let mut v: Value = serde_json::from_str(line).unwrap();
            let th = v["robot"]["theta"].as_f64().unwrap();
            v["robot"]["theta"] = Value::from(th + 0.5);
            out.push(v.to_string());
        } else {
            out.push(line.to_string());
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("edited.jsonl");
    fs::write(&p, out.join("\n")).unwrap();
    let o = run(&["replay", "--log", s(&p)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(value(&o, "summary_match").as_deref(), Some("false"));
    let before: f64 = value(&original, "delta_theta_norm").unwrap().parse().unwrap();
    let after: f64 = value(&o, "delta_theta_norm").unwrap().parse().unwrap();
    assert!(after > before + 0.05, "{before} -> {after}");
    assert!(stderr(&o).contains("delta_theta_norm"));
}

#[test]
fn invalid_inputs_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "sede = 1\n").unwrap();
    let o = run(&["--config", s(&cfg), "--out", s(dir.path()), "collect"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[validation]"));
    assert_eq!(run(&["collect", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--dataset", "x", "--kind", "rnn"]).status.code(), Some(1));
    assert_eq!(run(&["--jobs", "0", "replay", "--log", "x"]).status.code(), Some(1));
    assert_eq!(run(&["replay", "--log", s(&dir.path().join("missing"))]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
