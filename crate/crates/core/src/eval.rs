//! Group accuracy, a reference linear classifier and checkpoint selection.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Alignment, Corpus, SampleRecord};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{self, domain};
use crate::stab::BiasReport;

/// Aligned iff the record carries its class's detected bias. Falls back to
/// the record's ground truth when the report has no bias for the class.
pub fn alignment_of(rec: &SampleRecord, report: Option<&BiasReport>) -> Result<Alignment> {
    if let Some(bias) = report.and_then(|r| r.chosen(&rec.class_label)) {
        return Ok(if rec.has_tag(bias) {
            Alignment::Aligned
        } else {
            Alignment::Conflict
        });
    }
    rec.truth_alignment.ok_or_else(|| Error::InvalidRecord {
        id: rec.id.clone(),
        reason: format!(
            "no detected bias for class {:?} and no truth_alignment",
            rec.class_label
        ),
    })
}

pub fn alignment_map(
    corpus: &Corpus,
    report: Option<&BiasReport>,
) -> Result<HashMap<String, Alignment>> {
    par::map_indexed(corpus.records(), |_, r| {
        alignment_of(r, report).map(|a| (r.id.clone(), a))
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub bc_acc: f64,
    pub ba_acc: f64,
    /// Unweighted mean of `bc_acc` and `ba_acc`.
    pub avg: f64,
    pub n_bc: usize,
    pub n_ba: usize,
}

impl GroupMetrics {
    pub fn from_counts(
        bc_correct: usize,
        n_bc: usize,
        ba_correct: usize,
        n_ba: usize,
    ) -> Result<Self> {
        if n_bc == 0 || n_ba == 0 {
            return Err(Error::invalid(format!(
                "empty group: {n_bc} bias-conflict and {n_ba} bias-aligned records"
            )));
        }
        let bc_acc = bc_correct as f64 / n_bc as f64;
        let ba_acc = ba_correct as f64 / n_ba as f64;
        Ok(GroupMetrics {
            bc_acc,
            ba_acc,
            avg: (bc_acc + ba_acc) / 2.0,
            n_bc,
            n_ba,
        })
    }
}

/// BC/BA accuracy of `predictions` (id -> class) over `test`.
pub fn group_accuracy<S: AsRef<str>>(
    predictions: &HashMap<String, S>,
    test: &Corpus,
    alignment: &HashMap<String, Alignment>,
) -> Result<GroupMetrics> {
    let mut c = [[0usize; 2]; 2];
    for r in test.records() {
        let pred = predictions
            .get(&r.id)
            .ok_or_else(|| Error::invalid(format!("no prediction for {:?}", r.id)))?;
        let group = alignment
            .get(&r.id)
            .ok_or_else(|| Error::invalid(format!("no alignment for {:?}", r.id)))?;
        let g = usize::from(*group == Alignment::Aligned);
        c[g][0] += 1;
        c[g][1] += usize::from(pred.as_ref() == r.class_label);
    }
    GroupMetrics::from_counts(c[0][1], c[0][0], c[1][1], c[1][0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub predicted: String,
}

pub fn predictions_to_jsonl(preds: &[Prediction]) -> Vec<u8> {
    let mut out = Vec::new();
    for p in preds {
        serde_json::to_writer(&mut out, p).expect("prediction serializes");
        out.push(b'\n');
    }
    out
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<HashMap<String, String>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if out.insert(p.id.clone(), p.predicted).is_some() {
            return Err(Error::DuplicateId(p.id));
        }
    }
    Ok(out)
}

/// Multinomial logistic regression: `logits = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub classes: Vec<String>,
    /// `classes.len()` rows of `feature_dim` weights
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// Digest of the training corpus
    pub trained_on: String,
    pub seed: u64,
    pub epoch: usize,
}

impl LinearModel {
    pub fn zeros(classes: Vec<String>, dim: usize, trained_on: String, seed: u64) -> Self {
        let k = classes.len();
        LinearModel {
            classes,
            weights: vec![vec![0.0; dim]; k],
            bias: vec![0.0; k],
            trained_on,
            seed,
            epoch: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, w), b) in out.iter_mut().zip(&self.weights).zip(&self.bias) {
            *o = b + w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    /// Index of the highest logit (lowest index on ties).
    pub fn predict_index(&self, x: &[f64]) -> usize {
        let mut z = vec![0.0; self.classes.len()];
        self.logits_into(x, &mut z);
        let mut best = 0;
        for (k, v) in z.iter().enumerate() {
            if *v > z[best] {
                best = k;
            }
        }
        best
    }

    pub fn predict(&self, x: &[f64]) -> &str {
        &self.classes[self.predict_index(x)]
    }

    pub fn predict_corpus(&self, corpus: &Corpus) -> Result<Vec<Prediction>> {
        check_features(corpus, self.dim())?;
        Ok(par::map_indexed(corpus.records(), |_, r| Prediction {
            id: r.id.clone(),
            predicted: self
                .predict(r.features.as_deref().unwrap_or_default())
                .to_string(),
        }))
    }

    pub fn accuracy(&self, corpus: &Corpus) -> Result<f64> {
        check_features(corpus, self.dim())?;
        let correct = par::fold_chunks(
            corpus.records(),
            4096,
            || 0usize,
            |n, r| {
                n + usize::from(
                    self.predict(r.features.as_deref().unwrap_or_default()) == r.class_label,
                )
            },
            |a, b| a + b,
        );
        Ok(correct as f64 / corpus.len() as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.bias
            .iter()
            .chain(self.weights.iter().flatten())
            .all(|v| v.is_finite())
    }

    /// SHA-256 over the parameters' bit patterns.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in self.weights.iter().flatten().chain(&self.bias) {
            h.update(v.to_bits().to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }
}

fn check_features(corpus: &Corpus, dim: usize) -> Result<()> {
    match corpus
        .records()
        .iter()
        .find(|r| r.features.as_ref().map(Vec::len) != Some(dim))
    {
        None => Ok(()),
        Some(r) => match &r.features {
            None => Err(Error::InvalidRecord {
                id: r.id.clone(),
                reason: "missing features".into(),
            }),
            Some(f) => Err(Error::FeatureDim {
                id: r.id.clone(),
                expected: dim,
                found: f.len(),
            }),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            lr: 0.1,
            batch: 64,
            seed: 0,
        }
    }
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointTrace {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's mini-batches
    pub loss: f64,
    pub id_val_acc: f64,
    pub test_bc_acc: f64,
    pub test_ba_acc: f64,
    pub n_bc: usize,
    pub n_ba: usize,
    pub snapshot_digest: String,
}

impl CheckpointTrace {
    pub fn test_metrics(&self) -> GroupMetrics {
        GroupMetrics {
            bc_acc: self.test_bc_acc,
            ba_acc: self.test_ba_acc,
            avg: (self.test_bc_acc + self.test_ba_acc) / 2.0,
            n_bc: self.n_bc,
            n_ba: self.n_ba,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    /// Model after each epoch; `snapshots[i].epoch == i + 1`.
    pub snapshots: Vec<LinearModel>,
    pub trace: Vec<CheckpointTrace>,
}

impl TrainRun {
    pub fn last(&self) -> &CheckpointTrace {
        self.trace.last().expect("runs have at least one epoch")
    }
}

/// Trace entry for one snapshot.
pub fn evaluate_snapshot(
    model: &LinearModel,
    loss: f64,
    val: &Corpus,
    test: &Corpus,
    alignment: &HashMap<String, Alignment>,
) -> Result<CheckpointTrace> {
    let preds: HashMap<String, String> = model
        .predict_corpus(test)?
        .into_iter()
        .map(|p| (p.id, p.predicted))
        .collect();
    let m = group_accuracy(&preds, test, alignment)?;
    Ok(CheckpointTrace {
        epoch: model.epoch,
        loss,
        id_val_acc: model.accuracy(val)?,
        test_bc_acc: m.bc_acc,
        test_ba_acc: m.ba_acc,
        n_bc: m.n_bc,
        n_ba: m.n_ba,
        snapshot_digest: model.digest(),
    })
}

/// Mini-batch gradient descent on mean cross-entropy from zero weights.
///
/// Single-threaded so the run is bit-reproducible; each epoch's order is a
/// fresh shuffle drawn from the epoch's own stream.
pub fn train_linear(
    train: &Corpus,
    val: &Corpus,
    test: &Corpus,
    test_alignment: &HashMap<String, Alignment>,
    cfg: &TrainConfig,
) -> Result<TrainRun> {
    if cfg.epochs == 0 || cfg.batch == 0 || !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::invalid(
            "epochs and batch must be positive, lr positive and finite",
        ));
    }
    let dim = train.feature_dim().ok_or_else(|| Error::InvalidRecord {
        id: train.records()[0].id.clone(),
        reason: "missing features".into(),
    })?;
    for split in [val, test] {
        check_features(split, dim)?;
        if let Some(c) = split
            .class_set()
            .iter()
            .find(|c| !train.class_set().contains(c))
        {
            return Err(Error::UnknownClass(format!("{c} (not in training corpus)")));
        }
    }
    let classes = train.class_set().to_vec();
    let k = classes.len();
    let class_idx: HashMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let xs: Vec<&[f64]> = train
        .records()
        .iter()
        .map(|r| r.features.as_deref().unwrap_or_default())
        .collect();
    let ys: Vec<usize> = train
        .records()
        .iter()
        .map(|r| class_idx[r.class_label.as_str()])
        .collect();

    let mut model = LinearModel::zeros(classes, dim, train.digest(), cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut z = vec![0.0; k];
    let mut gw = vec![vec![0.0; dim]; k];
    let mut gb = vec![0.0; k];
    let mut run = TrainRun {
        snapshots: Vec::with_capacity(cfg.epochs),
        trace: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, domain::SHUFFLE, epoch as u64));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch) {
            gw.iter_mut().flatten().for_each(|g| *g = 0.0);
            gb.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                let x = xs[i];
                model.logits_into(x, &mut z);
                let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = z.iter().map(|v| (v - zmax).exp()).sum();
                batch_loss += zmax + sum.ln() - z[ys[i]];
                for c in 0..k {
                    let p = (z[c] - zmax).exp() / sum;
                    let d = p - f64::from(u8::from(c == ys[i]));
                    gb[c] += d;
                    for (g, xv) in gw[c].iter_mut().zip(x) {
                        *g += d * xv;
                    }
                }
            }
            let scale = cfg.lr / batch.len() as f64;
            for c in 0..k {
                model.bias[c] -= scale * gb[c];
                for (w, g) in model.weights[c].iter_mut().zip(&gw[c]) {
                    *w -= scale * g;
                }
            }
            loss_sum += batch_loss / batch.len() as f64;
            batches += 1;
        }
        let loss = loss_sum / batches as f64;
        if !loss.is_finite() || !model.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        model.epoch = epoch;
        run.trace
            .push(evaluate_snapshot(&model, loss, val, test, test_alignment)?);
        run.snapshots.push(model.clone());
    }
    Ok(run)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Best accuracy on the in-distribution validation split.
    IdVal,
    /// Best bias-conflict test accuracy.
    BestBcTest,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::IdVal => "id_val",
            Protocol::BestBcTest => "best_bc_test",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "id_val" => Ok(Protocol::IdVal),
            "best_bc" | "best_bc_test" => Ok(Protocol::BestBcTest),
            other => Err(Error::invalid(format!("unknown protocol {other:?}"))),
        }
    }
}

/// Epoch selected by `protocol`; ties go to the earliest epoch.
pub fn select_checkpoint(trace: &[CheckpointTrace], protocol: Protocol) -> Result<usize> {
    let key = |t: &CheckpointTrace| match protocol {
        Protocol::IdVal => t.id_val_acc,
        Protocol::BestBcTest => t.test_bc_acc,
    };
    let mut best: Option<&CheckpointTrace> = None;
    for t in trace {
        if best.is_none_or(|b| key(t) > key(b)) {
            best = Some(t);
        }
    }
    best.map(|t| t.epoch)
        .ok_or_else(|| Error::invalid("empty checkpoint trace"))
}

/// Metrics of the checkpoint `protocol` selects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedMetrics {
    pub protocol: Protocol,
    pub epoch: usize,
    pub id_val_acc: f64,
    #[serde(flatten)]
    pub test: GroupMetrics,
}

pub fn selected_metrics(trace: &[CheckpointTrace], protocol: Protocol) -> Result<SelectedMetrics> {
    let epoch = select_checkpoint(trace, protocol)?;
    let t = trace
        .iter()
        .find(|t| t.epoch == epoch)
        .expect("selected epoch is in the trace");
    Ok(SelectedMetrics {
        protocol,
        epoch,
        id_val_acc: t.id_val_acc,
        test: t.test_metrics(),
    })
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for it in items {
        serde_json::to_writer(&mut w, it).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_trace(path: impl AsRef<Path>, trace: &[CheckpointTrace]) -> Result<()> {
    write_jsonl(path.as_ref(), trace)
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<CheckpointTrace>> {
    let trace: Vec<CheckpointTrace> = read_jsonl(path.as_ref())?;
    if trace.windows(2).any(|w| w[1].epoch <= w[0].epoch) {
        return Err(Error::Schema(
            "trace epochs are not strictly increasing".into(),
        ));
    }
    Ok(trace)
}

pub fn write_models(path: impl AsRef<Path>, models: &[LinearModel]) -> Result<()> {
    write_jsonl(path.as_ref(), models)
}

pub fn read_models(path: impl AsRef<Path>) -> Result<Vec<LinearModel>> {
    let models: Vec<LinearModel> = read_jsonl(path.as_ref())?;
    if let Some(m) = models.iter().find(|m| !m.is_finite()) {
        return Err(Error::Schema(format!(
            "model at epoch {} has non-finite entries",
            m.epoch
        )));
    }
    Ok(models)
}

/// Recompute a trace from stored snapshots, e.g. under a different test
/// alignment. Losses are carried over from `losses` (by position).
pub fn retrace(
    snapshots: &[LinearModel],
    losses: &[f64],
    val: &Corpus,
    test: &Corpus,
    alignment: &HashMap<String, Alignment>,
) -> Result<Vec<CheckpointTrace>> {
    snapshots
        .iter()
        .enumerate()
        .map(|(i, m)| {
            evaluate_snapshot(
                m,
                losses.get(i).copied().unwrap_or(f64::NAN),
                val,
                test,
                alignment,
            )
        })
        .collect()
}

/// Map of class -> accuracy over one corpus, for reports.
pub fn per_class_accuracy(
    preds: &HashMap<String, String>,
    corpus: &Corpus,
) -> BTreeMap<String, f64> {
    let mut n: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in corpus.records() {
        let e = n.entry(r.class_label.clone()).or_default();
        e.0 += usize::from(preds.get(&r.id).map(String::as_str) == Some(r.class_label.as_str()));
        e.1 += 1;
    }
    n.into_iter()
        .map(|(c, (k, t))| (c, k as f64 / t as f64))
        .collect()
}
