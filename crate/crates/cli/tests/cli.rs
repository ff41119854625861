mod common;

use std::fs;

use common::{debias, json, lines, ok, pipeline, s, BIN};
use debias_core::synth::SynthConfig;

fn small() -> SynthConfig {
    SynthConfig::preset(2, 40, 0.05, 0)
}

#[test]
fn pipeline_writes_outputs_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), &small(), 3);
    assert_eq!(lines(&p.train()), 80);
    assert_eq!(lines(&p.plan), 160);
    assert_eq!(lines(&p.edited), 160);
    assert_eq!(lines(&p.full), 240);
    assert_eq!(
        fs::read(dir.path().join("edited.failures.jsonl")).unwrap(),
        b""
    );
    for m in [
        "data/manifest.json",
        "report.manifest.json",
        "plan.manifest.json",
        "edited.manifest.json",
        "full.manifest.json",
    ] {
        let v = json(&dir.path().join(m));
        assert_eq!(v["tool"], "debias", "{m}");
        assert!(
            v["outputs"].as_object().is_some_and(|o| !o.is_empty()),
            "{m}"
        );
    }
    let build = json(&dir.path().join("full.manifest.json"));
    assert_eq!(
        build["params"]["counts"],
        serde_json::json!({"original": 80, "bias_edit": 80, "target_edit": 80})
    );
    let report = json(&p.report);
    let truth = json(&p.truth());
    assert!(report.to_string().contains("\"b0\"") && truth.to_string().contains("\"b0\""));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = pipeline(a.path(), &small(), 5);
    let pb = pipeline(b.path(), &small(), 5);
    for (x, y) in [
        (&pa.report, &pb.report),
        (&pa.plan, &pb.plan),
        (&pa.edited, &pb.edited),
        (&pa.full, &pb.full),
    ] {
        assert_eq!(
            fs::read(x).unwrap(),
            fs::read(y).unwrap(),
            "{}",
            x.display()
        );
    }
}

#[test]
fn detect_output_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), &SynthConfig::preset(4, 200, 0.05, 1), 1);
    let one = dir.path().join("r1.json");
    let three = dir.path().join("r3.json");
    ok(&[
        "detect",
        "--corpus",
        s(&p.train()),
        "--jobs",
        "1",
        "--out",
        s(&one),
    ]);
    ok(&[
        "detect",
        "--corpus",
        s(&p.train()),
        "--jobs",
        "3",
        "--out",
        s(&three),
    ]);
    assert_eq!(fs::read(&one).unwrap(), fs::read(&three).unwrap());
    assert_eq!(fs::read(&one).unwrap(), fs::read(&p.report).unwrap());
}

#[test]
fn exec_backend_matches_in_process_mock() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), &small(), 2);
    let via_exec = dir.path().join("exec.jsonl");
    let cmd = format!(
        "exec:'{BIN}' mock-editor --report '{}' --truth '{}'",
        s(&p.report),
        s(&p.truth())
    );
    ok(&[
        "edit",
        "--plan",
        s(&p.plan),
        "--corpus",
        s(&p.train()),
        "--backend",
        &cmd,
        "--batch-size",
        "7",
        "--jobs",
        "2",
        "--out",
        s(&via_exec),
    ]);
    assert_eq!(fs::read(&via_exec).unwrap(), fs::read(&p.edited).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let out = debias(&[
        "detect",
        "--corpus",
        s(&missing),
        "--out",
        s(&dir.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = debias(&[
        "detect",
        "--corpus",
        s(&missing),
        "--mode",
        "nonsense",
        "--out",
        "r.json",
    ]);
    assert_eq!(out.status.code(), Some(2));

    let p = pipeline(dir.path(), &small(), 0);
    let out = debias(&[
        "edit",
        "--plan",
        s(&p.plan),
        "--corpus",
        s(&p.train()),
        "--backend",
        "exec:exit 1",
        "--out",
        s(&dir.path().join("failed.jsonl")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(lines(&dir.path().join("failed.failures.jsonl")), 160);
}

#[test]
fn train_eval_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = SynthConfig::preset(2, 100, 0.0, 0);
    cfg.test_per_class = Some(40);
    let p = pipeline(dir.path(), &cfg, 4);
    let data = &p.data;
    let mut runs = Vec::new();
    for (name, train) in [("orig", p.train()), ("full", p.full.clone())] {
        let run = dir.path().join(name);
        ok(&[
            "train",
            "--train",
            s(&train),
            "--val",
            s(&data.join("val.jsonl")),
            "--test",
            s(&data.join("test.jsonl")),
            "--report",
            s(&p.report),
            "--epochs",
            "8",
            "--seed",
            "4",
            "--out",
            s(&run),
        ]);
        assert_eq!(lines(&run.join("trace.jsonl")), 8);
        runs.push(run);
    }
    let id = dir.path().join("id.json");
    let bc = dir.path().join("bc.json");
    ok(&[
        "eval",
        "--run",
        s(&runs[0]),
        "--protocol",
        "id_val",
        "--out",
        s(&id),
    ]);
    ok(&[
        "eval",
        "--run",
        s(&runs[0]),
        "--protocol",
        "best_bc",
        "--out",
        s(&bc),
    ]);
    let (id, bc) = (json(&id), json(&bc));
    assert_eq!(id["protocol"], "id_val");
    assert_eq!(bc["protocol"], "best_bc_test");
    assert!(bc["bc_acc"].as_f64() >= id["bc_acc"].as_f64());
    assert_eq!(id["n_bc"].as_u64(), Some(40));

    // Retracing under the same report reproduces the stored trace.
    let re = dir.path().join("re.json");
    ok(&[
        "eval",
        "--run",
        s(&runs[0]),
        "--report",
        s(&p.report),
        "--out",
        s(&re),
    ]);
    assert_eq!(json(&re), id);

    // External predictions: everything predicted as c0.
    let test = data.join("test.jsonl");
    let preds: String = fs::read_to_string(&test)
        .unwrap()
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            format!("{{\"id\":{},\"predicted\":\"c0\"}}\n", v["id"])
        })
        .collect();
    let preds_path = dir.path().join("preds.jsonl");
    fs::write(&preds_path, preds).unwrap();
    let pm = dir.path().join("pm.json");
    ok(&[
        "eval",
        "--predictions",
        s(&preds_path),
        "--test",
        s(&test),
        "--out",
        s(&pm),
    ]);
    let pm = json(&pm);
    assert_eq!(pm["bc_acc"].as_f64(), Some(0.5));
    assert_eq!(pm["ba_acc"].as_f64(), Some(0.5));

    let table = dir.path().join("table.md");
    ok(&[
        "report",
        "--runs",
        s(&runs[0]),
        s(&runs[1]),
        "--out",
        s(&table),
    ]);
    let md = fs::read_to_string(&table).unwrap();
    assert!(md.contains("| orig |") && md.contains("| full |"), "{md}");
}

#[test]
fn eval_rejects_modified_test_split() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), &small(), 6);
    let run = dir.path().join("run");
    let test = p.data.join("test.jsonl");
    ok(&[
        "train",
        "--train",
        s(&p.train()),
        "--val",
        s(&p.data.join("val.jsonl")),
        "--test",
        s(&test),
        "--epochs",
        "2",
        "--out",
        s(&run),
    ]);
    let mut bytes = fs::read(&test).unwrap();
    bytes.extend_from_slice(b"\n");
    fs::write(&test, bytes).unwrap();
    let out = debias(&[
        "eval",
        "--run",
        s(&run),
        "--out",
        s(&dir.path().join("m.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("changed"));
}

#[test]
fn feature_backend_and_variants() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), &small(), 8);
    let feat = dir.path().join("feat.jsonl");
    ok(&[
        "edit",
        "--plan",
        s(&p.plan),
        "--corpus",
        s(&p.train()),
        "--backend",
        "mock-feature",
        "--report",
        s(&p.report),
        "--truth",
        s(&p.truth()),
        "--seed",
        "8",
        "--out",
        s(&feat),
    ]);
    for (variant, n) in [
        ("original", 80),
        ("sampled", 80),
        ("be-only", 160),
        ("te-only", 160),
        ("full", 240),
    ] {
        let out = dir.path().join(format!("{variant}.jsonl"));
        ok(&[
            "build",
            "--corpus",
            s(&p.train()),
            "--edited",
            s(&feat),
            "--variant",
            variant,
            "--out",
            s(&out),
        ]);
        assert_eq!(lines(&out), n, "{variant}");
    }
}
