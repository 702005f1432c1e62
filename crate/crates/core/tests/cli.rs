use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stereolift"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn summary(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("{e}: {text} / {}", String::from_utf8_lossy(&out.stderr)))
}

fn ok(args: &[&str], dir: &Path) -> Value {
    let out = run(args, dir);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    summary(&out)
}

const SMALL: &str = "
test_fraction = 0.1
[net]
hidden_dim = 32
n_residual_blocks = 1
[train]
epochs = 2
[action]
n_per_class = 6
[action.classifier]
hidden = [16, 8]
[action.train]
epochs = 2
[report]
ablation_pairs = 120
";

#[test]
fn end_to_end_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.toml"), SMALL).unwrap();
    let c = ["--config", "small.toml"];
    let with = |rest: &[&str]| -> Vec<String> { c.iter().chain(rest).map(|s| s.to_string()).collect() };
    let okc = |rest: &[&str]| {
        let args = with(rest);
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>(), d)
    };
    let runc = |rest: &[&str]| {
        let args = with(rest);
        run(&args.iter().map(String::as_str).collect::<Vec<_>>(), d)
    };

    let s = okc(&["--seed", "7", "synth", "gen", "--n", "300", "--out", "data/synth.jsonl"]);
    assert_eq!((s["count"].as_u64(), s["seed"].as_u64()), (Some(300), Some(7)));
    assert_eq!(okc(&["validate", "--input", "data/synth.jsonl"])["violations"], 0);

    let s = okc(&["train", "viewsynth", "--data", "data/synth.jsonl", "--out", "m/view.json"]);
    assert!(s["heldout_pckh"].as_f64().is_some());
    assert!(d.join("m/view.loss.csv").exists());
    let s = okc(&["train", "recon", "--data", "data/synth.jsonl", "--viewsynth", "m/view.json", "--out", "m/recon.json"]);
    assert!(s["heldout_mpjpe_mm"].as_f64().unwrap() > 0.0);
    okc(&["train", "recon", "--data", "data/synth.jsonl", "--monocular", "--out", "m/mono.json"]);

    let s = okc(&["label", "--input", "data/synth.jsonl", "--out", "data/labeled.jsonl", "--viewsynth", "m/view.json", "--recon", "m/recon.json"]);
    assert_eq!((s["total"].as_u64(), s["failed"].as_u64()), (Some(300), Some(0)));
    okc(&["label", "--input", "data/synth.jsonl", "--out", "data/mono.jsonl", "--recon", "m/mono.json"]);
    assert_eq!(okc(&["validate", "--input", "data/labeled.jsonl"])["violations"], 0);
    let s = okc(&["refine", "--input", "data/synth.jsonl", "--out", "data/refined.jsonl"]);
    assert_eq!(s["refined"], 300);

    let s = okc(&["eval", "mpjpe", "--pred", "data/labeled.jsonl", "--gt", "data/synth.jsonl", "--out", "metrics.csv"]);
    assert!(s["value"].as_f64().unwrap() > 0.0);
    okc(&["eval", "pck3d", "--pred", "data/labeled.jsonl", "--gt", "data/synth.jsonl", "--out", "metrics.csv"]);
    assert_eq!(okc(&["eval", "pckh", "--pred", "data/labeled.jsonl", "--gt", "data/synth.jsonl"])["value"], 1.0);
    let csv = std::fs::read_to_string(d.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("metric,name,value,count\nmpjpe,mpjpe,"));
    assert_eq!(csv.lines().count(), 4);
    let fail = runc(&["eval", "mpjpe", "--pred", "data/labeled.jsonl", "--gt", "data/synth.jsonl", "--max-mm", "0.001"]);
    assert_eq!(fail.status.code(), Some(1));

    let s = okc(&["report", "loss", "--input", "m/view.loss.csv", "--input", "m/recon.loss.csv", "--out", "rep", "--svg"]);
    assert_eq!(s["series"], 2);
    assert!(std::fs::read_to_string(d.join("rep/loss.svg")).unwrap().contains("<polyline"));
    okc(&["report", "errors", "--pred", "data/labeled.jsonl", "--gt", "data/synth.jsonl", "--out", "rep"]);
    assert!(std::fs::read_to_string(d.join("rep/joint_errors.csv")).unwrap().starts_with("joint,bin_lo_mm,bin_hi_mm,count\npelvis,0,10,"));
    let s = okc(&["report", "ablation", "--out", "rep", "--svg"]);
    assert_eq!(s["rows"].as_array().unwrap().len(), 3);
    assert_eq!(std::fs::read_to_string(d.join("rep/dx_ablation.csv")).unwrap().lines().count(), 4);

    okc(&["action", "gen", "--out", "act.jsonl"]);
    okc(&["action", "train", "--data", "act.jsonl", "--out", "m/action.json"]);
    let s = okc(&["action", "eval", "--model", "m/action.json", "--data", "act.jsonl", "--out", "metrics.csv"]);
    assert_eq!(s["count"], 30);
    let fail = runc(&["action", "eval", "--model", "m/action.json", "--data", "act.jsonl", "--min-accuracy", "1.01"]);
    assert_eq!(fail.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(&["synth"], d).status.code(), Some(2));
    assert_eq!(run(&["bogus"], d).status.code(), Some(2));
    assert_eq!(run(&["validate", "--input", "missing.jsonl"], d).status.code(), Some(3));
    std::fs::write(d.join("bad.toml"), "[train]\nbatch_size = 0\n").unwrap();
    assert_eq!(run(&["--config", "bad.toml", "config"], d).status.code(), Some(2));
    std::fs::write(d.join("bad.jsonl"), "{not json}\n").unwrap();
    let out = run(&["validate", "--input", "bad.jsonl"], d);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    ok(&["synth", "gen", "--n", "3", "--out", "s.jsonl"], d);
    let text = std::fs::read_to_string(d.join("s.jsonl")).unwrap();
    let mut rec: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    rec["joints3d_abs"][4][2] = Value::from(-1000.0);
    std::fs::write(d.join("s.jsonl"), format!("{rec}\n")).unwrap();
    let out = run(&["validate", "--input", "s.jsonl"], d);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(summary(&out)["first"][0]["kind"], "reprojection");
}

#[test]
fn config_prints_defaults_and_seed_override_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run(&["config"], d);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("lr0 = 0.001") && text.contains("z_max_mm = 10000.0"), "{text}");
    ok(&["--seed", "3", "synth", "gen", "--n", "20", "--out", "a.jsonl"], d);
    ok(&["--seed", "3", "--sequential", "synth", "gen", "--n", "20", "--out", "b.jsonl"], d);
    ok(&["--seed", "4", "synth", "gen", "--n", "20", "--out", "c.jsonl"], d);
    let read = |f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_ne!(read("a.jsonl"), read("c.jsonl"));
}
