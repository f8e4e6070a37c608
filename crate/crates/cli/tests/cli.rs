use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn nar(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nar"))
        .args(args)
        .current_dir(dir)
        .env("NAR_RUN_DIR", dir.join("runs"))
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

const TINY: &[&str] = &[
    "--hidden-dim",
    "8",
    "--batch-size",
    "4",
    "--set",
    "train.eval_every=2",
    "--set",
    "train.val_set_size=4",
    "--set",
    "train.train_sizes=[4,5]",
    "--set",
    "train.val_size=5",
    "--set",
    "test_size=6",
    "--set",
    "test_count=3",
];

fn train(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train"];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    nar(dir, &args)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn train_writes_run_directory_and_manifest() {
    let t = tempfile::tempdir().unwrap();
    let o = train(t.path(), &["--task", "sorting", "--seeds", "2", "--max-steps", "4", "--out", "run"]);
    ok(&o);
    let run = t.path().join("run");
    let m = read_json(&run.join("manifest.json"));
    assert_eq!(m["complete"], true);
    assert_eq!(m["config"]["train"]["max_steps"], 4);
    assert_eq!(m["config"]["model"]["hidden_dim"], 8);
    assert_eq!(m["seeds"].as_array().unwrap().len(), 2);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 40);
    for s in 0..2 {
        let d = run.join(format!("seed-{s}"));
        assert!(d.join("checkpoint").is_dir());
        let metrics = fs::read_to_string(d.join("metrics.jsonl")).unwrap();
        let steps = metrics.lines().filter(|l| l.contains("\"step\"") && l.contains("grad_norm")).count();
        assert_eq!(steps, 4);
        assert!(!metrics.contains("wall_ms"));
        assert!(fs::read_to_string(d.join("timing.jsonl")).unwrap().contains("wall_ms"));
    }
    let agg = &m["aggregate"];
    assert!(agg["mean"].as_f64().unwrap() >= 0.0 && agg["seeds"] == 2);
}

#[test]
fn default_run_directory_uses_env_root() {
    let t = tempfile::tempdir().unwrap();
    ok(&train(t.path(), &["--task", "minimum", "--seeds", "1", "--max-steps", "1"]));
    let entries: Vec<_> = fs::read_dir(t.path().join("runs")).unwrap().flatten().collect();
    assert_eq!(entries.len(), 1);
    assert!(entries[0].file_name().to_string_lossy().starts_with("minimum-nohint_latent-"));
}

#[test]
fn config_file_and_set_overrides() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("c.json"), r#"{"task": "bfs", "seeds": [3], "train": {"max_steps": 50}}"#).unwrap();
    ok(&train(t.path(), &["--config", "c.json", "--set", "train.max_steps=2", "--out", "run"]));
    let m = read_json(&t.path().join("run/manifest.json"));
    assert_eq!(m["config"]["task"], "bfs");
    assert_eq!(m["config"]["train"]["max_steps"], 2);
    assert_eq!(m["seeds"][0]["seed"], 3);
}

#[test]
fn invalid_config_exits_2() {
    let t = tempfile::tempdir().unwrap();
    for extra in [
        &["--task", "bfs", "--w", "1"][..],
        &["--set", "train.max_stepz=3", "--task", "sorting"][..],
        &["--max-steps", "3"][..],
        &["--task", "sorting", "--set", "seeds=[]"][..],
    ] {
        let o = train(t.path(), extra);
        assert_eq!(o.status.code(), Some(2), "{extra:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    fs::write(t.path().join("bad.json"), "{not json").unwrap();
    assert_eq!(train(t.path(), &["--config", "bad.json"]).status.code(), Some(2));
}

#[test]
fn training_abort_exits_3_with_partial_manifest() {
    let t = tempfile::tempdir().unwrap();
    let o = train(
        t.path(),
        &["--task", "sorting", "--seeds", "1", "--max-steps", "20", "--learning-rate", "1e30", "--out", "run"],
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_json(&t.path().join("run/manifest.json"));
    assert_eq!(m["complete"], false);
    assert!(m["error"].as_str().unwrap().contains("non-finite"));
}

#[test]
fn eval_checkpoint_and_run_directory() {
    let t = tempfile::tempdir().unwrap();
    ok(&train(t.path(), &["--task", "sorting", "--seeds", "1", "--max-steps", "2", "--out", "run"]));
    let o = nar(t.path(), &["eval", "run/seed-0/checkpoint", "--size", "7", "--count", "2", "--out", "r.json"]);
    ok(&o);
    let r = read_json(&t.path().join("r.json"));
    assert_eq!(r["test_size"], 7);
    assert_eq!(r["per_instance"].as_array().unwrap().len(), 2);
    let printed: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(printed, r);

    ok(&nar(t.path(), &["eval", "run", "--count", "2"]));
    let all = read_json(&t.path().join("run/eval-6.json"));
    assert_eq!(all.as_array().unwrap().len(), 1);
}

#[test]
fn eval_rejects_bad_checkpoints_and_requests() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(nar(t.path(), &["eval", "missing"]).status.code(), Some(2));
    ok(&train(t.path(), &["--task", "minimum", "--seeds", "1", "--max-steps", "1", "--out", "run"]));
    let ck = t.path().join("run/seed-0/checkpoint");
    assert_eq!(nar(t.path(), &["eval", ck.to_str().unwrap(), "--count", "0"]).status.code(), Some(2));
    let victim = fs::read_dir(&ck)
        .unwrap()
        .flatten()
        .find(|e| e.file_name().to_string_lossy().ends_with(".f32"))
        .unwrap()
        .path();
    fs::write(&victim, [0u8; 3]).unwrap();
    assert_eq!(nar(t.path(), &["eval", ck.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn probes_are_deterministic_and_task_checked() {
    let t = tempfile::tempdir().unwrap();
    ok(&train(
        t.path(),
        &["--task", "sorting", "--mode", "hints_supervised", "--seeds", "1", "--max-steps", "2", "--out", "run"],
    ));
    let ck = "run/seed-0/checkpoint";
    for (kind, files) in [
        ("stability", &["stability.csv", "stability_hint.csv"][..]),
        ("equivalence", &["equivalence.csv"][..]),
    ] {
        ok(&nar(t.path(), &["probe", ck, "--probe", kind, "--count", "3", "--size", "6", "--out", "a"]));
        ok(&nar(t.path(), &["probe", ck, "--probe", kind, "--count", "3", "--size", "6", "--out", "b"]));
        for f in files {
            let a = fs::read_to_string(t.path().join("a").join(f)).unwrap();
            assert_eq!(a, fs::read_to_string(t.path().join("b").join(f)).unwrap());
            let lines: Vec<&str> = a.lines().collect();
            assert_eq!(lines[0], "step,value");
            assert_eq!(lines.len(), 7);
            if kind == "stability" {
                assert_eq!(lines[6], "6,1");
            }
        }
    }

    // minimum has no pointer output; bfs has no augmentations
    for (task, kind) in [("minimum", "stability"), ("bfs", "equivalence")] {
        ok(&train(t.path(), &["--task", task, "--seeds", "1", "--max-steps", "1", "--out", task]));
        let ck = format!("{task}/seed-0/checkpoint");
        let o = nar(t.path(), &["probe", &ck, "--probe", kind, "--out", "c"]);
        assert_eq!(o.status.code(), Some(2), "{task} {kind}");
    }
}

#[test]
fn gen_writes_dataset_lines() {
    let t = tempfile::tempdir().unwrap();
    ok(&nar(t.path(), &["gen", "--task", "bellman_ford", "--size", "5", "--count", "3", "--out", "d.jsonl"]));
    let text = fs::read_to_string(t.path().join("d.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 3);
    for l in text.lines() {
        let v: Value = serde_json::from_str(l).unwrap();
        assert_eq!(v["task"], "bellman_ford");
        assert_eq!(v["n"], 5);
    }
    let o = nar(t.path(), &["gen", "--task", "bellman_ford", "--size", "5", "--count", "3"]);
    assert_eq!(String::from_utf8(o.stdout).unwrap(), text);
}

#[test]
fn verify_reports_every_check() {
    let t = tempfile::tempdir().unwrap();
    let o = nar(t.path(), &["verify", "--cases", "4", "--coords", "4", "--json", "v.json"]);
    ok(&o);
    let checks = read_json(&t.path().join("v.json"));
    let names: Vec<&str> = checks.as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    for prefix in ["oracle.", "gradient.", "identity."] {
        assert!(names.iter().any(|n| n.starts_with(prefix)), "{prefix}");
    }
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), names.len());
}
