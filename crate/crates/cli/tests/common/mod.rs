#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use debias_core::synth::SynthConfig;

pub const BIN: &str = env!("CARGO_BIN_EXE_debias");

pub fn debias(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn debias")
}

/// Run and require exit status 0.
pub fn ok(args: &[&str]) -> Output {
    let out = debias(args);
    assert!(
        out.status.success(),
        "debias {args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

pub fn json(p: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))).unwrap()
}

pub fn lines(p: &Path) -> usize {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .count()
}

/// Paths produced by [`pipeline`].
pub struct Pipeline {
    pub data: PathBuf,
    pub report: PathBuf,
    pub plan: PathBuf,
    pub edited: PathBuf,
    pub full: PathBuf,
}

impl Pipeline {
    pub fn train(&self) -> PathBuf {
        self.data.join("train.jsonl")
    }
    pub fn truth(&self) -> PathBuf {
        self.data.join("truth.json")
    }
}

/// synth -> detect -> plan -> edit (mock-tag) -> build full, under `dir`.
pub fn pipeline(dir: &Path, cfg: &SynthConfig, seed: u64) -> Pipeline {
    let config = dir.join("synth.toml");
    fs::write(&config, cfg.to_toml()).unwrap();
    let p = Pipeline {
        data: dir.join("data"),
        report: dir.join("report.json"),
        plan: dir.join("plan.jsonl"),
        edited: dir.join("edited.jsonl"),
        full: dir.join("full.jsonl"),
    };
    let seed = seed.to_string();
    ok(&[
        "synth",
        "--config",
        s(&config),
        "--seed",
        &seed,
        "--out",
        s(&p.data),
    ]);
    ok(&["detect", "--corpus", s(&p.train()), "--out", s(&p.report)]);
    ok(&[
        "plan",
        "--corpus",
        s(&p.train()),
        "--report",
        s(&p.report),
        "--seed",
        &seed,
        "--out",
        s(&p.plan),
    ]);
    ok(&[
        "edit",
        "--plan",
        s(&p.plan),
        "--corpus",
        s(&p.train()),
        "--backend",
        "mock-tag",
        "--report",
        s(&p.report),
        "--truth",
        s(&p.truth()),
        "--out",
        s(&p.edited),
    ]);
    ok(&[
        "build",
        "--corpus",
        s(&p.train()),
        "--edited",
        s(&p.edited),
        "--variant",
        "full",
        "--seed",
        &seed,
        "--out",
        s(&p.full),
    ]);
    p
}
