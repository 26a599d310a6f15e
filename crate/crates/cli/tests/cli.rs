use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dccgcn::graph::load_generic;
use dccgcn::training::read_params;
use serde_json::Value;

fn dccgcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dccgcn")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A 90-node, 3-class graph and a small training config beside it.
fn toy(dir: &Path) -> (String, String) {
    let data = dir.join("toy");
    let o = dccgcn(&[
        "synth", "--n", "90", "--c", "3", "--d", "12", "--separation", "1.5", "--p-intra", "0.12", "--p-inter", "0.01",
        "--seed", "3", "--out", path(&data),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = dir.join("small.json");
    fs::write(&cfg, r#"{"epochs": 30, "hidden1": 16, "hidden2": 8, "k": 4, "warmup": 10, "lr": 0.01}"#).unwrap();
    (path(&data).to_string(), path(&cfg).to_string())
}

#[test]
fn bound_prints_one_value() {
    let o = dccgcn(&["theory", "bound", "--p1", "0.8", "--p2", "0.7"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "0.5455");
    let o = dccgcn(&["theory", "bound", "--p1", "0.8", "--p2", "0.7", "--c", "7", "--kind", "refined"]);
    assert_eq!(stdout(&o).trim(), "0.5349");
}

#[test]
fn invalid_probabilities_are_usage_errors() {
    assert_eq!(dccgcn(&["theory", "bound", "--p1", "1.5", "--p2", "0.7"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let o = dccgcn(&["theory", "simulate", "--p1", "0.0", "--p2", "0.7", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(dccgcn(&["theory", "frobnicate"]).status.code(), Some(2));
}

#[test]
fn simulate_writes_result_with_its_spec() {
    let dir = tempfile::tempdir().unwrap();
    let o = dccgcn(&["theory", "simulate", "--n", "50000", "--c", "7", "--p1", "0.8", "--p2", "0.7", "--seed", "7", "--out", path(dir.path())]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("sim.json")).unwrap()).unwrap();
    assert_eq!(v["spec"]["seed"], 7);
    assert_eq!(v["spec"]["n"], 50000);
    assert_eq!(v["n_a"].as_u64().unwrap(), v["n_r"].as_u64().unwrap() + v["n_w"].as_u64().unwrap());
}

#[test]
fn sweep_writes_surface() {
    let dir = tempfile::tempdir().unwrap();
    let o = dccgcn(&["theory", "sweep", "--c", "3,7,70", "--step", "0.02", "--out", path(dir.path())]);
    assert!(o.status.success());
    let text = fs::read_to_string(dir.path().join("surface.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "c,p1,p2,gamma,theorem2_bound,effective_gain_bound");
    assert_eq!(text.lines().count(), 1 + 3 * 49 * 49);
}

#[test]
fn synth_is_loadable_and_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert!(dccgcn(&["synth", "--n", "200", "--c", "4", "--seed", "1", "--out", path(out)]).status.success());
    }
    for f in ["features.tsv", "labels.tsv", "edges.tsv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let ds = load_generic(&a).unwrap();
    assert_eq!(ds.num_nodes(), 200);
    assert_eq!(ds.num_classes, 4);

    let c = dir.path().join("c");
    let o = dccgcn(&["synth", "--n", "40", "--c", "2", "--p-intra", "1", "--p-inter", "0", "--out", path(&c)]);
    assert!(o.status.success());
    let ds = load_generic(&c).unwrap();
    let comp = ds.graph.connected_components();
    for u in 0..40 {
        for v in 0..40 {
            assert_eq!(comp[u] == comp[v], ds.labels[u] == ds.labels[v]);
        }
    }
    assert_eq!(dccgcn(&["synth", "--p-intra", "2", "--out", path(&c)]).status.code(), Some(2));
}

#[test]
fn train_writes_artifacts_and_replays_from_its_run_config() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = toy(dir.path());
    let out = dir.path().join("run1");
    let o = dccgcn(&["train", "--dataset", &data, "--config", &cfg, "--per-class", "5", "--seed", "1", "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let metrics: Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    let acc = metrics["metrics"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(metrics["run"]["train"]["seed"], 1);
    assert_eq!(metrics["metrics"]["config"]["epochs"], 30);

    let emb = fs::read_to_string(out.join("embeddings.csv")).unwrap();
    // fused input is the two calibrated channel representations side by side
    let header: Vec<&str> = emb.lines().next().unwrap().split(',').collect();
    assert_eq!(header[0], "node_id");
    assert_eq!(header.len(), 1 + 2 * 8);
    assert_eq!(header[1], "e0");
    assert_eq!(emb.lines().count(), 91);

    let params = read_params(fs::File::open(out.join("model.bin")).unwrap()).unwrap();
    assert!(params.iter().any(|(name, t)| name == "mu" && t.shape() == (90, 3)));

    let replay = dir.path().join("run2");
    let run_json = out.join("run.json");
    let o = dccgcn(&["train", "--config", path(&run_json), "--out", path(&replay)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(out.join("metrics.json")).unwrap(), fs::read(replay.join("metrics.json")).unwrap());
    assert_eq!(fs::read(out.join("model.bin")).unwrap(), fs::read(replay.join("model.bin")).unwrap());
}

#[test]
fn ablation_flags_reach_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = toy(dir.path());
    let out = dir.path().join("ablate");
    let o = dccgcn(&[
        "train", "--dataset", &data, "--config", &cfg, "--label-fraction", "0.1", "--no-calibration", "--no-aggregation",
        "--out", path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["metrics"]["config"]["no_calibration"], true);
    assert_eq!(m["metrics"]["config"]["no_aggregation"], true);
    assert_eq!(m["run"]["split"]["fraction"], 0.1);
    let emb = fs::read_to_string(out.join("embeddings.csv")).unwrap();
    assert_eq!(emb.lines().next().unwrap().split(',').count(), 1 + 8);
}

#[test]
fn bad_config_and_missing_dataset_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = toy(dir.path());
    let typo = dir.path().join("typo.json");
    fs::write(&typo, r#"{"lamda1": 0.5}"#).unwrap();
    let out = dir.path().join("x");
    assert_eq!(dccgcn(&["train", "--dataset", &data, "--config", path(&typo), "--out", path(&out)]).status.code(), Some(2));
    assert_eq!(dccgcn(&["train", "--out", path(&out)]).status.code(), Some(2));
    assert_eq!(dccgcn(&["train", "--dataset", &data, "--preset", "imagenet"]).status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = toy(dir.path());
    let cfg = dir.path().join("huge.json");
    fs::write(&cfg, r#"{"epochs": 20, "hidden1": 8, "hidden2": 4, "k": 4, "warmup": 5, "lr": 1e200}"#).unwrap();
    let o = dccgcn(&["train", "--dataset", &data, "--config", path(&cfg), "--out", path(&dir.path().join("d"))]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn hop_sweep_rows_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = toy(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = dccgcn(&["hop-sweep", "--dataset", &data, "--config", &cfg, "--m", "1,2", "--seeds", "2", "--out", path(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(out.join("hops.csv")).unwrap()
    };
    let first = run("h1");
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines[0], "m,seed,accuracy");
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[1].starts_with("1,0,") && lines[4].starts_with("2,1,"));
    assert_eq!(first, run("h2"));
}
