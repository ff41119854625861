//! Attribute-annotated corpora and their canonical JSON-Lines form.
//!
//! One record per line:
//!
//! ```text
//! {"id":"s1","class":"young","tags":["hair","woman"],"provenance":"original"}
//! ```
//!
//! Keys are written in the fixed order `id, class, tags, features,
//! provenance, truth_alignment, meta`; optional keys are omitted when empty.
//! Unknown keys found on input are folded into `meta`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    BiasEdit,
    TargetEdit,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::BiasEdit => "bias_edit",
            Provenance::TargetEdit => "target_edit",
        }
    }
}

impl std::str::FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Provenance::Original),
            "bias_edit" => Ok(Provenance::BiasEdit),
            "target_edit" => Ok(Provenance::TargetEdit),
            other => Err(Error::Schema(format!("unknown provenance {other:?}"))),
        }
    }
}

/// Bias-aligned or bias-conflict group membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    Aligned,
    Conflict,
}

/// Normalize an attribute keyword: per-character simple case folding.
///
/// Characters whose lowercase mapping is not a single code point are kept
/// as-is, which is what simple (as opposed to full) folding does.
pub fn fold_tag(tag: &str) -> String {
    tag.chars().map(fold_char).collect()
}

fn fold_char(c: char) -> char {
    match c {
        'ς' => 'σ',
        'ſ' => 's',
        'µ' => 'μ',
        'ϐ' => 'β',
        'ϑ' => 'θ',
        'ϕ' => 'φ',
        'ϖ' => 'π',
        'ϰ' => 'κ',
        'ϱ' => 'ρ',
        'ϵ' => 'ε',
        'ẛ' => 'ṡ',
        '\u{1FBE}' => 'ι',
        _ => {
            let mut lower = c.to_lowercase();
            match (lower.next(), lower.next()) {
                (Some(l), None) => l,
                _ => c,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub class_label: String,
    pub tags: BTreeSet<String>,
    pub features: Option<Vec<f64>>,
    pub provenance: Provenance,
    pub truth_alignment: Option<Alignment>,
    pub meta: BTreeMap<String, String>,
}

impl SampleRecord {
    /// A fresh original record; tags are folded and deduplicated.
    pub fn new<I, S>(id: impl Into<String>, class_label: impl Into<String>, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        SampleRecord {
            id: id.into(),
            class_label: class_label.into(),
            tags: tags.into_iter().map(|t| fold_tag(t.as_ref())).collect(),
            features: None,
            provenance: Provenance::Original,
            truth_alignment: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_features(mut self, features: Vec<f64>) -> Self {
        self.features = Some(features);
        self
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.contains(tag)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Error::InvalidRecord {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(bad("empty id"));
        }
        if self.class_label.is_empty() {
            return Err(bad("empty class label"));
        }
        if self.tags.iter().any(String::is_empty) {
            return Err(bad("empty tag"));
        }
        if let Some(f) = &self.features {
            if f.iter().any(|x| !x.is_finite()) {
                return Err(bad("non-finite feature value"));
            }
        }
        Ok(())
    }

    /// Canonical single-line JSON (no trailing newline).
    pub fn to_json_line(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            id: &'a str,
            class: &'a str,
            tags: &'a BTreeSet<String>,
            #[serde(skip_serializing_if = "Option::is_none")]
            features: Option<&'a [f64]>,
            provenance: Provenance,
            #[serde(skip_serializing_if = "Option::is_none")]
            truth_alignment: Option<Alignment>,
            #[serde(skip_serializing_if = "BTreeMap::is_empty")]
            meta: &'a BTreeMap<String, String>,
        }
        serde_json::to_string(&Canonical {
            id: &self.id,
            class: &self.class_label,
            tags: &self.tags,
            features: self.features.as_deref(),
            provenance: self.provenance,
            truth_alignment: self.truth_alignment,
            meta: &self.meta,
        })
        .expect("record serialization cannot fail")
    }

    /// Parse one JSON object. Tags are folded and deduplicated.
    pub fn from_json_str(s: &str) -> std::result::Result<Self, String> {
        let raw: RawRecord = serde_json::from_str(s).map_err(|e| e.to_string())?;
        raw.into_record()
    }

    pub fn from_json_value(v: Value) -> std::result::Result<Self, String> {
        let raw: RawRecord = serde_json::from_value(v).map_err(|e| e.to_string())?;
        raw.into_record()
    }

    pub fn to_json_value(&self) -> Value {
        serde_json::from_str(&self.to_json_line()).expect("canonical line is valid JSON")
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    class: String,
    tags: Vec<String>,
    #[serde(default)]
    features: Option<Vec<f64>>,
    #[serde(default)]
    provenance: Option<Provenance>,
    #[serde(default)]
    truth_alignment: Option<Alignment>,
    #[serde(default)]
    meta: Option<BTreeMap<String, String>>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

impl RawRecord {
    fn into_record(self) -> std::result::Result<SampleRecord, String> {
        let mut tags = BTreeSet::new();
        for t in &self.tags {
            let f = fold_tag(t);
            if f.is_empty() {
                return Err(format!("record {:?}: empty tag", self.id));
            }
            tags.insert(f);
        }
        let mut meta = self.meta.unwrap_or_default();
        for (k, v) in self.extra {
            let v = match v {
                Value::String(s) => s,
                other => other.to_string(),
            };
            meta.entry(k).or_insert(v);
        }
        let rec = SampleRecord {
            id: self.id,
            class_label: self.class,
            tags,
            features: self.features,
            provenance: self.provenance.unwrap_or(Provenance::Original),
            truth_alignment: self.truth_alignment,
            meta,
        };
        rec.validate().map_err(|e| e.to_string())?;
        Ok(rec)
    }
}

/// An ordered, validated collection of records.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    records: Vec<SampleRecord>,
    class_set: Vec<String>,
    /// Generator seed, when the corpus was synthesized in-process. Not persisted.
    pub source_seed: Option<u64>,
}

impl Corpus {
    pub fn new(records: Vec<SampleRecord>) -> Result<Self> {
        Self::with_seed(records, None)
    }

    pub fn with_seed(records: Vec<SampleRecord>, source_seed: Option<u64>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut ids = HashSet::with_capacity(records.len());
        let mut dim = None;
        let mut class_set: Vec<String> = Vec::new();
        let mut seen_classes = HashSet::new();
        for r in &records {
            r.validate()?;
            if !ids.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            if let Some(f) = &r.features {
                match dim {
                    None => dim = Some(f.len()),
                    Some(d) if d != f.len() => {
                        return Err(Error::FeatureDim {
                            id: r.id.clone(),
                            expected: d,
                            found: f.len(),
                        })
                    }
                    _ => {}
                }
            }
            if seen_classes.insert(r.class_label.as_str()) {
                class_set.push(r.class_label.clone());
            }
        }
        if dim.is_some() {
            if let Some(r) = records.iter().find(|r| r.features.is_none()) {
                return Err(Error::FeatureDim {
                    id: r.id.clone(),
                    expected: dim.unwrap_or(0),
                    found: 0,
                });
            }
        }
        Ok(Corpus {
            records,
            class_set,
            source_seed,
        })
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<SampleRecord> {
        self.records
    }

    pub fn class_set(&self) -> &[String] {
        &self.class_set
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.records
            .first()
            .and_then(|r| r.features.as_ref().map(Vec::len))
    }

    pub fn get(&self, id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn to_jsonl_bytes(&self) -> Vec<u8> {
        records_to_jsonl(&self.records)
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        hex_digest(&self.to_jsonl_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn records_to_jsonl(records: &[SampleRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        out.extend_from_slice(r.to_json_line().as_bytes());
        out.push(b'\n');
    }
    out
}

/// Parse JSONL into records, checking per-record validity and id uniqueness
/// but not corpus-level invariants. Blank lines are skipped.
pub fn parse_records(reader: impl BufRead) -> Result<Vec<SampleRecord>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = SampleRecord::from_json_str(&line).map_err(|message| Error::Parse {
            line: i + 1,
            message,
        })?;
        if !ids.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_records(BufReader::new(file))
}

pub fn write_records(path: impl AsRef<Path>, records: &[SampleRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        w.write_all(r.to_json_line().as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    Corpus::new(read_records(path)?)
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    write_records(path, corpus.records())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSummary {
    pub total: usize,
    pub class_sizes: Vec<(String, usize)>,
    pub vocabulary: BTreeSet<String>,
    pub feature_dim: Option<usize>,
}

impl CorpusSummary {
    pub fn vocabulary_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn class_size(&self, class: &str) -> Option<usize> {
        self.class_sizes
            .iter()
            .find(|(c, _)| c == class)
            .map(|(_, n)| *n)
    }
}

pub fn corpus_summary(corpus: &Corpus) -> CorpusSummary {
    let mut class_sizes: Vec<(String, usize)> =
        corpus.class_set().iter().map(|c| (c.clone(), 0)).collect();
    let index: BTreeMap<&str, usize> = corpus
        .class_set()
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut vocabulary = BTreeSet::new();
    for r in corpus.records() {
        class_sizes[index[r.class_label.as_str()]].1 += 1;
        vocabulary.extend(r.tags.iter().cloned());
    }
    CorpusSummary {
        total: corpus.len(),
        class_sizes,
        vocabulary,
        feature_dim: corpus.feature_dim(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::k10;
    use std::io::Cursor;

    #[test]
    fn loads_three_lines_two_classes() {
        let text = r#"{"id":"a","class":"x","tags":["t"],"provenance":"original"}
{"id":"b","class":"y","tags":[],"provenance":"original"}
{"id":"c","class":"x","tags":["T","t"],"provenance":"original"}
"#;
        let c = Corpus::new(parse_records(Cursor::new(text)).unwrap()).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.class_set(), ["x", "y"]);
        assert_eq!(c.records()[2].tags.len(), 1);
    }

    #[test]
    fn duplicate_id_is_named() {
        let text = "{\"id\":\"s1\",\"class\":\"x\",\"tags\":[]}\n{\"id\":\"s1\",\"class\":\"y\",\"tags\":[]}\n";
        match parse_records(Cursor::new(text)) {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "s1"),
            other => panic!("expected duplicate id, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "{\"id\":\"s1\",\"class\":\"x\",\"tags\":[]}\n{not json\n";
        match parse_records(Cursor::new(text)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn mixed_feature_dims_rejected() {
        let recs = vec![
            SampleRecord::new("a", "x", ["t"]).with_features(vec![1.0, 2.0]),
            SampleRecord::new("b", "x", ["t"]).with_features(vec![1.0]),
        ];
        assert!(matches!(Corpus::new(recs), Err(Error::FeatureDim { .. })));
        let recs = vec![
            SampleRecord::new("a", "x", ["t"]).with_features(vec![1.0]),
            SampleRecord::new("b", "x", ["t"]),
        ];
        assert!(matches!(Corpus::new(recs), Err(Error::FeatureDim { .. })));
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(Corpus::new(vec![]), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn empty_tag_rejected() {
        let text = "{\"id\":\"s1\",\"class\":\"x\",\"tags\":[\"\"]}\n";
        assert!(matches!(
            parse_records(Cursor::new(text)),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn unknown_keys_go_to_meta() {
        let text =
            r#"{"id":"a","class":"x","tags":[],"caption":"a dog","score":3,"meta":{"src":"web"}}"#;
        let r = SampleRecord::from_json_str(text).unwrap();
        assert_eq!(r.meta["caption"], "a dog");
        assert_eq!(r.meta["score"], "3");
        assert_eq!(r.meta["src"], "web");
        assert_eq!(r.provenance, Provenance::Original);
    }

    #[test]
    fn canonical_key_order() {
        let mut r = SampleRecord::new("a", "x", ["b", "a"]).with_features(vec![0.5]);
        r.truth_alignment = Some(Alignment::Conflict);
        r.meta.insert("k".into(), "v".into());
        assert_eq!(
            r.to_json_line(),
            r#"{"id":"a","class":"x","tags":["a","b"],"features":[0.5],"provenance":"original","truth_alignment":"conflict","meta":{"k":"v"}}"#
        );
    }

    #[test]
    fn case_folding() {
        assert_eq!(fold_tag("Woman"), "woman");
        assert_eq!(fold_tag("ΣΟΦΟΣ"), "σοφοσ");
        assert_eq!(fold_tag("σοφος"), "σοφοσ");
        assert_eq!(fold_tag("ſnow"), "snow");
    }

    #[test]
    fn one_record_writes_one_line() {
        let c = Corpus::new(vec![SampleRecord::new("a", "x", ["t"])]).unwrap();
        let bytes = c.to_jsonl_bytes();
        assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 1);
    }

    #[test]
    fn k10_round_trips_byte_identically() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k10.jsonl");
        let c = k10();
        write_corpus(&c, &p).unwrap();
        let back = load_corpus(&p).unwrap();
        assert_eq!(back, c);
        assert_eq!(std::fs::read(&p).unwrap(), back.to_jsonl_bytes());
    }

    #[test]
    fn summaries() {
        let s = corpus_summary(&k10());
        assert_eq!(s.total, 10);
        assert_eq!(s.class_size("c0"), Some(5));
        assert_eq!(s.class_size("c1"), Some(5));
        assert_eq!(
            s.vocabulary.iter().map(String::as_str).collect::<Vec<_>>(),
            ["a", "b", "r", "u"]
        );

        let one = Corpus::new(
            (0..4)
                .map(|i| SampleRecord::new(format!("s{i}"), "only", ["t"]))
                .collect(),
        )
        .unwrap();
        let s = corpus_summary(&one);
        assert_eq!((s.total, s.class_size("only")), (4, Some(4)));

        let disjoint = Corpus::new(vec![
            SampleRecord::new("a", "x", ["p", "q"]),
            SampleRecord::new("b", "x", ["r"]),
            SampleRecord::new("c", "y", ["s", "t"]),
        ])
        .unwrap();
        assert_eq!(corpus_summary(&disjoint).vocabulary_size(), 5);
    }
}
