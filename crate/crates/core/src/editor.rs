//! Edit backends.
//!
//! Mock backends act directly on tags (and synthetic feature channels) so
//! the whole pipeline can be checked without an image model. The external
//! backend speaks line-delimited JSON over a child process's stdio:
//!
//! ```text
//! stdin : {"instruction": <EditInstruction>, "record": <SampleRecord>}\n ...
//! stdout: <SampleRecord>\n ...            (same order, one line per input)
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};
use std::time::Duration;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{fold_tag, Alignment, SampleRecord};
use crate::editplan::{EditInstruction, EditKind};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{self, domain};

/// Env var overriding the external backend's per-batch timeout.
pub const TIMEOUT_ENV: &str = "DEBIAS_EDITOR_TIMEOUT_SECS";
pub const DEFAULT_TIMEOUT_SECS: u64 = 300;

/// Meta key set on mock outputs whose bias edit was a no-op.
pub const WARNING_META: &str = "edit_warning";

pub trait EditorBackend: Send + Sync {
    fn name(&self) -> &str;

    fn apply(&self, instruction: &EditInstruction, record: &SampleRecord) -> Result<SampleRecord>;

    /// Apply many edits; the output is index-aligned with `items`.
    fn apply_batch(
        &self,
        items: &[(&EditInstruction, &SampleRecord)],
    ) -> Vec<Result<SampleRecord>> {
        par::map_indexed(items, |_, (ins, rec)| self.apply(ins, rec))
    }
}

fn edit_err(ins: &EditInstruction, reason: impl Into<String>) -> Error {
    Error::Edit {
        id: ins.source_id.clone(),
        reason: reason.into(),
    }
}

fn check_source(ins: &EditInstruction, rec: &SampleRecord) -> Result<()> {
    if rec.id != ins.source_id {
        return Err(edit_err(
            ins,
            format!("record id {:?} does not match", rec.id),
        ));
    }
    if rec.class_label != ins.source_class {
        return Err(edit_err(
            ins,
            format!(
                "record class {:?} does not match {:?}",
                rec.class_label, ins.source_class
            ),
        ));
    }
    Ok(())
}

/// Tag-space editor.
///
/// Bias edits swap `source_bias` for `replacement_bias`. Target edits move
/// the record to `target_class`, rewriting the source class's target
/// keyword (by default the folded class name) to the target class's.
#[derive(Debug, Clone, Default)]
pub struct MockTagEditor {
    /// class -> detected bias, used to label edited records aligned/conflict
    pub class_bias: BTreeMap<String, String>,
    /// class -> target keyword override
    pub target_keywords: BTreeMap<String, String>,
}

impl MockTagEditor {
    pub fn new(class_bias: BTreeMap<String, String>) -> Self {
        MockTagEditor {
            class_bias,
            target_keywords: BTreeMap::new(),
        }
    }

    pub fn with_target_keywords(mut self, keywords: BTreeMap<String, String>) -> Self {
        self.target_keywords = keywords;
        self
    }

    fn target_keyword(&self, class: &str) -> String {
        self.target_keywords
            .get(class)
            .map_or_else(|| fold_tag(class), |k| fold_tag(k))
    }

    fn alignment_in(&self, class: &str, rec: &SampleRecord) -> Option<Alignment> {
        self.class_bias.get(class).map(|b| {
            if rec.has_tag(b) {
                Alignment::Aligned
            } else {
                Alignment::Conflict
            }
        })
    }

    pub fn mock_tag_edit(&self, ins: &EditInstruction, rec: &SampleRecord) -> Result<SampleRecord> {
        check_source(ins, rec)?;
        let mut out = rec.clone();
        out.id = ins.output_id();
        out.provenance = ins.kind.provenance();
        match ins.kind {
            EditKind::BiasEdit => {
                let (Some(src), Some(rep)) = (&ins.source_bias, &ins.replacement_bias) else {
                    return Err(edit_err(
                        ins,
                        "bias edit needs source_bias and replacement_bias",
                    ));
                };
                let (src, rep) = (fold_tag(src), fold_tag(rep));
                if src == rep {
                    out.meta
                        .insert(WARNING_META.into(), "replacement equals source bias".into());
                    out.truth_alignment = self.alignment_in(&out.class_label, &out);
                } else {
                    out.tags.remove(&src);
                    out.tags.insert(rep);
                    out.truth_alignment = Some(Alignment::Conflict);
                }
            }
            EditKind::TargetEdit => {
                let Some(target) = &ins.target_class else {
                    return Err(edit_err(ins, "target edit needs target_class"));
                };
                let from = self.target_keyword(&ins.source_class);
                if out.tags.remove(&from) {
                    out.tags.insert(self.target_keyword(target));
                }
                out.class_label = target.clone();
                out.truth_alignment = self.alignment_in(target, &out);
            }
        }
        Ok(out)
    }
}

impl EditorBackend for MockTagEditor {
    fn name(&self) -> &str {
        "mock-tag"
    }

    fn apply(&self, ins: &EditInstruction, rec: &SampleRecord) -> Result<SampleRecord> {
        self.mock_tag_edit(ins, rec)
    }
}

/// Where each group of feature channels lives in a record's vector:
/// `[target | bias slot 0 | bias slot 1 | ... | noise]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelLayout {
    pub n_target: usize,
    pub n_bias: usize,
    pub bias_slots: usize,
    pub n_noise: usize,
}

impl ChannelLayout {
    pub fn dim(&self) -> usize {
        self.n_target + self.n_bias * self.bias_slots + self.n_noise
    }

    pub fn target_range(&self) -> std::ops::Range<usize> {
        0..self.n_target
    }

    pub fn bias_range(&self, slot: usize) -> std::ops::Range<usize> {
        let start = self.n_target + slot * self.n_bias;
        start..start + self.n_bias
    }
}

/// Canonical per-class channel values of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub layout: ChannelLayout,
    /// class -> target channel values
    pub target: BTreeMap<String, Vec<f64>>,
    /// class -> values of the primary bias slot when carrying that class's bias
    pub bias: BTreeMap<String, Vec<f64>>,
}

/// Feature-space editor: rewrites channel groups to another class's
/// canonical values plus fresh seeded noise, and edits tags like
/// [`MockTagEditor`].
#[derive(Debug, Clone)]
pub struct MockFeatureEditor {
    pub tags: MockTagEditor,
    pub feature_map: FeatureMap,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl MockFeatureEditor {
    fn noisy(&self, base: &[f64], out_id: &str, ins: &EditInstruction) -> Result<Vec<f64>> {
        if self.noise_sigma == 0.0 {
            return Ok(base.to_vec());
        }
        let normal = Normal::new(0.0, self.noise_sigma)
            .map_err(|e| edit_err(ins, format!("bad noise sigma: {e}")))?;
        let mut rng = rng::stream(self.seed, domain::FEATURE_NOISE, rng::key_of(out_id));
        Ok(base.iter().map(|v| v + normal.sample(&mut rng)).collect())
    }

    fn class_with_bias(&self, bias: &str) -> Option<&str> {
        let bias = fold_tag(bias);
        self.tags
            .class_bias
            .iter()
            .find(|(_, b)| fold_tag(b) == bias)
            .map(|(c, _)| c.as_str())
    }

    pub fn mock_feature_edit(
        &self,
        ins: &EditInstruction,
        rec: &SampleRecord,
    ) -> Result<SampleRecord> {
        let Some(features) = &rec.features else {
            return Err(edit_err(ins, "record has no features"));
        };
        let layout = self.feature_map.layout;
        if features.len() != layout.dim() {
            return Err(edit_err(
                ins,
                "feature dimensionality does not match layout",
            ));
        }
        let mut out = self.tags.mock_tag_edit(ins, rec)?;
        let mut f = features.clone();
        match ins.kind {
            EditKind::BiasEdit => {
                let rep = ins.replacement_bias.as_deref().unwrap_or_default();
                let class = self
                    .class_with_bias(rep)
                    .ok_or_else(|| edit_err(ins, format!("no class carries bias {rep:?}")))?;
                let base =
                    self.feature_map.bias.get(class).ok_or_else(|| {
                        edit_err(ins, format!("class {class:?} not in feature map"))
                    })?;
                let vals = self.noisy(base, &out.id, ins)?;
                f[layout.bias_range(0)].copy_from_slice(&vals);
            }
            EditKind::TargetEdit => {
                let target = ins.target_class.as_deref().unwrap_or_default();
                let base =
                    self.feature_map.target.get(target).ok_or_else(|| {
                        edit_err(ins, format!("class {target:?} not in feature map"))
                    })?;
                let vals = self.noisy(base, &out.id, ins)?;
                f[layout.target_range()].copy_from_slice(&vals);
            }
        }
        out.features = Some(f);
        Ok(out)
    }
}

impl EditorBackend for MockFeatureEditor {
    fn name(&self) -> &str {
        "mock-feature"
    }

    fn apply(&self, ins: &EditInstruction, rec: &SampleRecord) -> Result<SampleRecord> {
        self.mock_feature_edit(ins, rec)
    }
}

/// One stdio request line.
pub fn request_line(ins: &EditInstruction, rec: &SampleRecord) -> String {
    let v = json!({
        "instruction": ins,
        "record": rec.to_json_value(),
    });
    serde_json::to_string(&v).expect("request serialization cannot fail")
}

/// Decode one stdio request line.
pub fn parse_request(line: &str) -> Result<(EditInstruction, SampleRecord)> {
    #[derive(Deserialize)]
    struct Req {
        instruction: EditInstruction,
        record: serde_json::Value,
    }
    let req: Req = serde_json::from_str(line).map_err(|e| Error::Schema(e.to_string()))?;
    req.instruction.validate()?;
    let rec = SampleRecord::from_json_value(req.record).map_err(Error::Schema)?;
    Ok((req.instruction, rec))
}

/// Serve a backend over stdio until EOF. Failed edits are answered with
/// `{"error": "..."}` so line alignment is kept.
pub fn serve_stdio(
    backend: &dyn EditorBackend,
    input: impl BufRead,
    mut output: impl Write,
) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match parse_request(&line).and_then(|(ins, rec)| backend.apply(&ins, &rec)) {
            Ok(rec) => rec.to_json_line(),
            Err(e) => json!({ "error": e.to_string() }).to_string(),
        };
        writeln!(output, "{reply}")?;
    }
    output.flush()
}

/// Subprocess backend: runs `sh -c <command>` once per batch.
#[derive(Debug, Clone)]
pub struct ExternalBackend {
    pub command: String,
    pub timeout: Duration,
    pub batch_size: usize,
    pub jobs: usize,
    name: String,
}

impl ExternalBackend {
    /// Timeout comes from `DEBIAS_EDITOR_TIMEOUT_SECS` when set.
    pub fn new(command: impl Into<String>) -> Self {
        let command = command.into();
        let secs = std::env::var(TIMEOUT_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<u64>().ok())
            .unwrap_or(DEFAULT_TIMEOUT_SECS);
        ExternalBackend {
            name: format!("exec:{command}"),
            command,
            timeout: Duration::from_secs(secs),
            batch_size: 256,
            jobs: 1,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_batch_size(mut self, n: usize) -> Self {
        self.batch_size = n.max(1);
        self
    }

    pub fn with_jobs(mut self, n: usize) -> Self {
        self.jobs = n.max(1);
        self
    }

    fn run_batch(&self, items: &[(&EditInstruction, &SampleRecord)]) -> Vec<Result<SampleRecord>> {
        let fail_all = |reason: String| -> Vec<Result<SampleRecord>> {
            items
                .iter()
                .map(|(ins, _)| Err(edit_err(ins, reason.clone())))
                .collect()
        };
        let mut child = match Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
        {
            Ok(c) => c,
            Err(e) => return fail_all(format!("spawn failed: {e}")),
        };
        let (Some(mut stdin), Some(stdout), Some(mut stderr)) =
            (child.stdin.take(), child.stdout.take(), child.stderr.take())
        else {
            let _ = child.kill();
            let _ = child.wait();
            return fail_all("child pipes unavailable".into());
        };
        let payload: Vec<String> = items.iter().map(|(i, r)| request_line(i, r)).collect();
        let writer = std::thread::spawn(move || {
            for line in payload {
                if writeln!(stdin, "{line}").is_err() {
                    break;
                }
            }
        });
        let err_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stderr.read_to_string(&mut s);
            s
        });
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let lines: std::io::Result<Vec<String>> = BufReader::new(stdout).lines().collect();
            let _ = tx.send(lines);
        });
        let lines = match rx.recv_timeout(self.timeout) {
            Ok(lines) => lines,
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                return fail_all(format!("timed out after {:?}", self.timeout));
            }
        };
        let _ = writer.join();
        let status = child.wait();
        let stderr_text = err_reader.join().unwrap_or_default();
        match status {
            Ok(s) if s.success() => {}
            Ok(s) => {
                return fail_all(format!("editor exited with {s}: {}", stderr_text.trim()));
            }
            Err(e) => return fail_all(format!("wait failed: {e}")),
        }
        let lines: Vec<String> = match lines {
            Ok(l) => l.into_iter().filter(|l| !l.trim().is_empty()).collect(),
            Err(e) => return fail_all(format!("reading editor output: {e}")),
        };
        if lines.len() != items.len() {
            return fail_all(format!(
                "protocol violation: {} output lines for {} inputs",
                lines.len(),
                items.len()
            ));
        }
        items
            .iter()
            .zip(lines)
            .map(|((ins, _), line)| decode_reply(ins, &line))
            .collect()
    }
}

fn decode_reply(ins: &EditInstruction, line: &str) -> Result<SampleRecord> {
    let v: serde_json::Value =
        serde_json::from_str(line).map_err(|e| edit_err(ins, format!("bad output line: {e}")))?;
    if let Some(err) = v.get("error") {
        return Err(edit_err(ins, format!("editor reported: {err}")));
    }
    let mut rec = SampleRecord::from_json_value(v).map_err(|e| edit_err(ins, e))?;
    let want = ins.output_id();
    if rec.id != want {
        return Err(edit_err(
            ins,
            format!("output id {:?}, expected {want:?}", rec.id),
        ));
    }
    rec.provenance = ins.kind.provenance();
    Ok(rec)
}

impl EditorBackend for ExternalBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn apply(&self, ins: &EditInstruction, rec: &SampleRecord) -> Result<SampleRecord> {
        self.run_batch(&[(ins, rec)])
            .pop()
            .expect("one result per input")
    }

    /// Batches run on at most `jobs` concurrent subprocesses; results are
    /// returned in input order.
    fn apply_batch(
        &self,
        items: &[(&EditInstruction, &SampleRecord)],
    ) -> Vec<Result<SampleRecord>> {
        let batches: Vec<&[(&EditInstruction, &SampleRecord)]> =
            items.chunks(self.batch_size).collect();
        let slots: Vec<Mutex<Option<Vec<Result<SampleRecord>>>>> =
            batches.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..self.jobs.min(batches.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= batches.len() {
                        break;
                    }
                    let out = self.run_batch(batches[i]);
                    *slots[i].lock().expect("slot lock") = Some(out);
                });
            }
        });
        slots
            .into_iter()
            .flat_map(|m| m.into_inner().expect("slot lock").unwrap_or_default())
            .collect()
    }
}
