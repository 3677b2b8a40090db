use std::path::Path;
use std::process::{Command, Output};

fn qpn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qpn"))
        .args(args)
        .output()
        .expect("spawn qpn")
}

fn ok(args: &[&str]) -> String {
    let out = qpn(args);
    assert!(
        out.status.success(),
        "qpn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

const SMALL: &str = r#"{"env": {"n_clients": 4, "n_vehicles": 2},
    "policy": {"classical_layers": 1, "hidden": 16},
    "train": {"episodes": 4, "eval_every": 2}}"#;

#[test]
fn instance_files_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        ok(&[
            "instance",
            "--seed",
            "7",
            "--config",
            &cfg,
            "--out",
            p.to_str().unwrap(),
        ]);
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in [
        "seed",
        "n_clients",
        "n_vehicles",
        "positions",
        "demands",
        "depot",
        "Q",
        "depot_capacity",
    ] {
        assert!(v.get(key).is_some(), "instance lacks {key}");
    }
    assert_eq!(v["positions"].as_array().unwrap().len(), 4);
}

#[test]
fn train_without_variant_is_a_usage_error() {
    let out = qpn(&["train", "--out", "unused"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--variant"), "{err}");
    assert!(err.to_lowercase().contains("usage"), "{err}");
}

#[test]
fn unknown_variant_and_bad_config_fail_cleanly() {
    let out = qpn(&["train", "--variant", "qnn", "--out", "unused"]);
    assert!(!out.status.success());
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"env": {"n_clients": 0}}"#);
    let out = qpn(&[
        "instance",
        "--seed",
        "1",
        "--config",
        &cfg,
        "--out",
        dir.path().join("x.json").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run = dir.path().join("run");
    let stdout = ok(&[
        "train",
        "--variant",
        "cpn",
        "--config",
        &cfg,
        "--seed",
        "3",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(stdout.contains("cpn seed 3"));
    for f in [
        "log.jsonl",
        "checkpoint.json",
        "eval_instance.json",
        "config.json",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let log = std::fs::read_to_string(run.join("log.jsonl")).unwrap();
    let evals = log
        .lines()
        .filter(|l| l.contains(r#""kind":"eval""#))
        .count();
    assert_eq!(evals, 3);

    let inst = dir.path().join("inst.json");
    ok(&[
        "instance",
        "--seed",
        "11",
        "--config",
        &cfg,
        "--out",
        inst.to_str().unwrap(),
    ]);
    let eval = dir.path().join("eval");
    let ck = run.join("checkpoint.json");
    let args = [
        "eval",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--instance",
        inst.to_str().unwrap(),
        "--out",
        eval.to_str().unwrap(),
    ];
    ok(&args);
    let first = std::fs::read(eval.join("trajectory.json")).unwrap();
    ok(&args);
    assert_eq!(first, std::fs::read(eval.join("trajectory.json")).unwrap());
    for f in ["metrics.json", "routes.json", "routes.svg"] {
        assert!(eval.join(f).exists(), "missing {f}");
    }
}

#[test]
fn resume_continues_a_stopped_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let full = dir.path().join("full");
    ok(&[
        "train",
        "--variant",
        "cpn",
        "--config",
        &cfg,
        "--seed",
        "1",
        "--out",
        full.to_str().unwrap(),
    ]);
    let ck = full.join("checkpoints").join("episode_000002.json");
    let cont = dir.path().join("cont");
    ok(&[
        "train",
        "--variant",
        "cpn",
        "--config",
        &cfg,
        "--seed",
        "1",
        "--resume",
        ck.to_str().unwrap(),
        "--out",
        cont.to_str().unwrap(),
    ]);
    let a: serde_json::Value =
        serde_json::from_slice(&std::fs::read(full.join("checkpoint.json")).unwrap()).unwrap();
    let b: serde_json::Value =
        serde_json::from_slice(&std::fs::read(cont.join("checkpoint.json")).unwrap()).unwrap();
    assert_eq!(a["parameters"], b["parameters"]);
    assert_eq!(a["episode"], b["episode"]);
    assert_eq!(a["optimizer"], b["optimizer"]);
}

#[test]
fn bench_reports_one_column_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("bench");
    let table = ok(&[
        "bench",
        "--variants",
        "cpn,hqp",
        "--seeds",
        "2",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    let header = table.lines().next().unwrap();
    assert!(header.contains("CPN") || header.contains("cpn"), "{table}");
    assert!(header.contains("HQP") || header.contains("hqp"), "{table}");
    assert!(!header.to_lowercase().contains("fqp"));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    let columns = report["table"].as_object().unwrap();
    assert_eq!(columns.len(), 2);
    for v in columns.values() {
        for m in ["distance", "compactness", "crossings"] {
            let s = &v[m];
            assert!(s["min"].as_f64().unwrap() <= s["avg"].as_f64().unwrap());
            assert!(s["avg"].as_f64().unwrap() <= s["max"].as_f64().unwrap());
        }
    }
    assert_eq!(report["records"].as_array().unwrap().len(), 4);
    for seed in 0..2 {
        assert!(out
            .join("cpn")
            .join(format!("seed_{seed}"))
            .join("log.jsonl")
            .exists());
    }
    assert!(out.join("boxplot_distance.svg").exists());
}
