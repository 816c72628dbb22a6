use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clinfusion"))
        .args(args)
        .output()
        .expect("spawn clinfusion")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn generate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for p in [&a, &b] {
        ok(&run(&["generate", "--preset", "learnability", "--n", "40", "--seed", "11", "--out", s(p)]));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "generate");
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config"]["n_patients"], 40);
    assert_eq!(manifest["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn toml_config_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 5\n[synth]\npreset = \"learnability\"\nn_patients = 12\n").unwrap();
    let out = dir.path().join("c.jsonl");
    ok(&run(&["--config", s(&cfg), "generate", "--n", "9", "--out", s(&out)]));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("c.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["n_patients"], 9);

    std::fs::write(&cfg, "[synth]\nunknown_key = 1\n").unwrap();
    let bad = run(&["--config", s(&cfg), "generate", "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn train_evaluate_explain_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&run(&["generate", "--preset", "learnability", "--n", "60", "--seed", "2", "--out", s(&p("c.jsonl"))]));
    ok(&run(&[
        "split", "--cohort", s(&p("c.jsonl")), "--seed", "2", "--train-out", s(&p("tr.jsonl")), "--test-out",
        s(&p("te.jsonl")),
    ]));
    ok(&run(&[
        "train", "--cohort", s(&p("tr.jsonl")), "--out", s(&p("m.json")), "--mode", "fusion", "--epochs", "2",
        "--d-model", "8", "--heads", "2", "--layers", "1", "--ffn-mult", "2", "--max-len", "48", "--lab-hidden",
        "16", "--fusion-heads", "2", "--threads", "1",
    ]));
    for f in ["m.json", "m.json.vocab.txt", "m.json.history.json", "m.json.manifest.json"] {
        assert!(p(f).is_file(), "missing {f}");
    }

    let out = run(&[
        "evaluate", "--model", s(&p("m.json")), "--cohort", s(&p("te.jsonl")), "--out", s(&p("metrics.json")),
        "--predictions", s(&p("pred.jsonl")),
    ]);
    ok(&out);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(p("metrics.json")).unwrap()).unwrap();
    for key in [
        "task", "mode", "n", "class_counts", "averaging", "accuracy", "precision", "recall", "f1", "auroc", "auprc",
        "confusion",
    ] {
        assert!(report.get(key).is_some(), "report lacks {key}");
    }
    assert_eq!(report["mode"], "fusion");
    let stdout: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stdout, report);
    let n_rows = std::fs::read_to_string(p("pred.jsonl")).unwrap().lines().count();
    assert_eq!(report["n"].as_u64().unwrap() as usize, n_rows);

    ok(&run(&[
        "explain", "--model", s(&p("m.json")), "--cohort", s(&p("te.jsonl")), "--out-dir", s(&p("x")), "--limit",
        "1", "--quiet", "--method", "sampled", "--samples", "8",
    ]));
    let produced: Vec<String> = std::fs::read_dir(p("x"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(produced.iter().any(|f| f.ends_with(".attribution.json")));
    assert!(produced.iter().any(|f| f.ends_with(".html")));
    assert!(produced.iter().any(|f| f.ends_with(".fusion_attention.json")));
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = run(&["serialize-labs", "--cohort", s(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["generate", "--n", "0", "--out", s(&dir.path().join("c.jsonl"))]);
    assert_eq!(out.status.code(), Some(1));
}
