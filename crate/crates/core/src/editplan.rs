//! Edit instructions derived from a bias report.
//!
//! Every original record yields one bias-edit (swap its class's bias
//! attribute for another class's bias, keep the class) and one target-edit
//! (move it to another class, keep the bias). Randomness is drawn from
//! per-record streams keyed by record index.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Provenance};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{self, domain};
use crate::stab::BiasReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    BiasEdit,
    TargetEdit,
}

impl EditKind {
    pub fn provenance(self) -> Provenance {
        match self {
            EditKind::BiasEdit => Provenance::BiasEdit,
            EditKind::TargetEdit => Provenance::TargetEdit,
        }
    }

    /// Suffix appended to the source id to form the edited record's id.
    pub fn id_suffix(self) -> &'static str {
        match self {
            EditKind::BiasEdit => "::be",
            EditKind::TargetEdit => "::te",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditInstruction {
    pub source_id: String,
    pub kind: EditKind,
    pub source_class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_bias: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replacement_bias: Option<String>,
    pub instruction_text: String,
}

impl EditInstruction {
    pub fn output_id(&self) -> String {
        format!("{}{}", self.source_id, self.kind.id_suffix())
    }

    /// Class of the record produced by this edit.
    pub fn output_class(&self) -> &str {
        match self.kind {
            EditKind::BiasEdit => &self.source_class,
            EditKind::TargetEdit => self.target_class.as_deref().unwrap_or(&self.source_class),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Error::Schema(format!("instruction for {:?}: {msg}", self.source_id));
        match self.kind {
            EditKind::TargetEdit => match &self.target_class {
                None => return Err(bad("target_edit without target_class")),
                Some(t) if *t == self.source_class => {
                    return Err(bad("target_class equals source_class"))
                }
                _ => {}
            },
            EditKind::BiasEdit => {
                if self.source_bias.is_none() {
                    return Err(bad("bias_edit without source_bias"));
                }
                if self.target_class.is_some() {
                    return Err(bad("bias_edit with target_class"));
                }
            }
        }
        Ok(())
    }
}

/// Instruction templates. Placeholders: `{class}`, `{target_class}`,
/// `{bias}`, `{replacement_bias}`, `{target_article}` ("a"/"an").
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Templates {
    pub bias_edit: String,
    pub target_edit: String,
    /// Used for target edits when the source class has no detected bias.
    pub target_edit_no_bias: String,
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            bias_edit: "Turn this {class} person's {bias} into {replacement_bias} while keeping other attributes unchanged.".into(),
            target_edit: "Turn this {bias} into {target_article} {target_class} {bias}.".into(),
            target_edit_no_bias: "Turn this {class} into {target_article} {target_class} while keeping other attributes unchanged.".into(),
        }
    }
}

impl Templates {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(format!("templates: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

fn article(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

fn render(
    template: &str,
    class: &str,
    target_class: Option<&str>,
    bias: Option<&str>,
    replacement: Option<&str>,
) -> String {
    let mut s = template.replace("{class}", class);
    if let Some(t) = target_class {
        s = s
            .replace("{target_article}", article(t))
            .replace("{target_class}", t);
    }
    if let Some(b) = bias {
        s = s.replace("{bias}", b);
    }
    if let Some(r) = replacement {
        s = s.replace("{replacement_bias}", r);
    }
    s
}

/// How target classes are drawn for target edits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetSampling {
    /// Uniform over the other classes.
    #[default]
    Uniform,
    /// The j-th record of a class goes to the (j mod |C|-1)-th other class.
    RoundRobin,
}

impl std::str::FromStr for TargetSampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(TargetSampling::Uniform),
            "round_robin" | "round-robin" => Ok(TargetSampling::RoundRobin),
            other => Err(Error::invalid(format!("unknown target sampling {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PlanConfig {
    pub seed: u64,
    pub target_sampling: TargetSampling,
    pub templates: Templates,
}

fn check_report_covers(corpus: &Corpus, report: &BiasReport) -> Result<()> {
    match corpus
        .class_set()
        .iter()
        .find(|c| report.class(c).is_none())
    {
        Some(c) => Err(Error::UnknownClass(format!(
            "{c} (missing from bias report)"
        ))),
        None => Ok(()),
    }
}

/// One bias-edit per original record whose class has a detected bias.
///
/// The replacement bias is the detected bias of another class, drawn
/// uniformly among other classes that have one. Records whose class is the
/// only one with a detection get no instruction.
pub fn plan_bias_edits(
    corpus: &Corpus,
    report: &BiasReport,
    seed: u64,
    templates: &Templates,
) -> Result<Vec<EditInstruction>> {
    check_report_covers(corpus, report)?;
    let detected: Vec<(&str, &str)> = corpus
        .class_set()
        .iter()
        .filter_map(|c| report.chosen(c).map(|b| (c.as_str(), b)))
        .collect();
    let planned = par::map_indexed(corpus.records(), |i, rec| {
        if rec.provenance != Provenance::Original {
            return None;
        }
        let bias = report.chosen(&rec.class_label)?;
        let others: Vec<&str> = detected
            .iter()
            .filter(|(c, _)| *c != rec.class_label)
            .map(|(_, b)| *b)
            .collect();
        let replacement = match others.len() {
            0 => return None,
            1 => others[0],
            n => others[rng::stream(seed, domain::BIAS_REPLACEMENT, i as u64).gen_range(0..n)],
        };
        Some(EditInstruction {
            source_id: rec.id.clone(),
            kind: EditKind::BiasEdit,
            source_class: rec.class_label.clone(),
            target_class: None,
            source_bias: Some(bias.to_string()),
            replacement_bias: Some(replacement.to_string()),
            instruction_text: render(
                &templates.bias_edit,
                &rec.class_label,
                None,
                Some(bias),
                Some(replacement),
            ),
        })
    });
    Ok(planned.into_iter().flatten().collect())
}

/// One target-edit per original record, moving it to another class while
/// keeping its bias attribute.
pub fn plan_target_edits(
    corpus: &Corpus,
    report: &BiasReport,
    seed: u64,
    sampling: TargetSampling,
    templates: &Templates,
) -> Result<Vec<EditInstruction>> {
    let classes = corpus.class_set();
    if classes.len() < 2 {
        return Err(Error::invalid("target edits need at least two classes"));
    }
    check_report_covers(corpus, report)?;
    // position of each record within its class, for round-robin
    let mut seen = vec![0usize; classes.len()];
    let class_pos: Vec<(usize, usize)> = corpus
        .records()
        .iter()
        .map(|r| {
            let ci = classes
                .iter()
                .position(|c| *c == r.class_label)
                .unwrap_or(0);
            let j = seen[ci];
            seen[ci] += 1;
            (ci, j)
        })
        .collect();
    let k = classes.len();
    let planned = par::map_indexed(corpus.records(), |i, rec| {
        if rec.provenance != Provenance::Original {
            return None;
        }
        let (ci, j) = class_pos[i];
        let slot = match sampling {
            TargetSampling::Uniform => {
                rng::stream(seed, domain::TARGET_CLASS, i as u64).gen_range(0..k - 1)
            }
            TargetSampling::RoundRobin => j % (k - 1),
        };
        let target = &classes[if slot >= ci { slot + 1 } else { slot }];
        let bias = report.chosen(&rec.class_label);
        let template = if bias.is_some() {
            &templates.target_edit
        } else {
            &templates.target_edit_no_bias
        };
        Some(EditInstruction {
            source_id: rec.id.clone(),
            kind: EditKind::TargetEdit,
            source_class: rec.class_label.clone(),
            target_class: Some(target.clone()),
            source_bias: bias.map(str::to_string),
            replacement_bias: None,
            instruction_text: render(template, &rec.class_label, Some(target), bias, None),
        })
    });
    Ok(planned.into_iter().flatten().collect())
}

/// Bias-edits followed by target-edits, each in corpus order.
pub fn plan_edits(
    corpus: &Corpus,
    report: &BiasReport,
    cfg: &PlanConfig,
) -> Result<Vec<EditInstruction>> {
    let mut plan = plan_bias_edits(corpus, report, cfg.seed, &cfg.templates)?;
    plan.extend(plan_target_edits(
        corpus,
        report,
        cfg.seed,
        cfg.target_sampling,
        &cfg.templates,
    )?);
    Ok(plan)
}

pub fn plan_to_jsonl(plan: &[EditInstruction]) -> Vec<u8> {
    let mut out = Vec::new();
    for ins in plan {
        serde_json::to_writer(&mut out, ins).expect("instruction serialization cannot fail");
        out.push(b'\n');
    }
    out
}

pub fn write_plan(plan: &[EditInstruction], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&plan_to_jsonl(plan))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn parse_plan(reader: impl BufRead) -> Result<Vec<EditInstruction>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let err = |message: String| Error::Parse {
            line: i + 1,
            message,
        };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let ins: EditInstruction = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        ins.validate().map_err(|e| err(e.to_string()))?;
        out.push(ins);
    }
    Ok(out)
}

pub fn load_plan(path: impl AsRef<Path>) -> Result<Vec<EditInstruction>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_plan(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SampleRecord;
    use crate::stab::{ClassBias, DetectMode};

    fn report(biases: &[(&str, Option<&str>)]) -> BiasReport {
        BiasReport {
            mode: DetectMode::Both,
            k: 1,
            multi_k: None,
            min_support: 1,
            exclusions: vec![],
            classes: biases
                .iter()
                .map(|(c, b)| ClassBias {
                    class: c.to_string(),
                    chosen: b.iter().map(|s| s.to_string()).collect(),
                    ranked: vec![],
                })
                .collect(),
        }
    }

    fn two_class() -> Corpus {
        Corpus::new(
            (0..6)
                .map(|i| SampleRecord::new(format!("s{i}"), if i < 3 { "c0" } else { "c1" }, ["x"]))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn bias_edit_text_and_replacement() {
        let r = report(&[("c0", Some("woman")), ("c1", Some("man"))]);
        let plan = plan_bias_edits(&two_class(), &r, 1, &Templates::default()).unwrap();
        assert_eq!(plan.len(), 6);
        let first = &plan[0];
        assert_eq!(first.replacement_bias.as_deref(), Some("man"));
        assert_eq!(
            first.instruction_text,
            "Turn this c0 person's woman into man while keeping other attributes unchanged."
        );
        assert!(plan[3..]
            .iter()
            .all(|p| p.replacement_bias.as_deref() == Some("woman")));
    }

    #[test]
    fn undetected_class_gets_no_bias_edits() {
        let r = report(&[("c0", Some("woman")), ("c1", None)]);
        let plan = plan_bias_edits(&two_class(), &r, 1, &Templates::default()).unwrap();
        assert!(
            plan.is_empty(),
            "c0 has no other class to borrow a bias from"
        );
        let r3 = report(&[("c0", Some("w")), ("c1", None), ("c2", Some("m"))]);
        let mut recs = two_class().into_records();
        recs.push(SampleRecord::new("z", "c2", ["x"]));
        let c = Corpus::new(recs).unwrap();
        let plan = plan_bias_edits(&c, &r3, 1, &Templates::default()).unwrap();
        assert!(plan.iter().all(|p| p.source_class != "c1"));
        assert_eq!(plan.len(), 4);
    }

    #[test]
    fn missing_class_in_report() {
        let r = report(&[("c0", Some("woman"))]);
        assert!(matches!(
            plan_bias_edits(&two_class(), &r, 1, &Templates::default()),
            Err(Error::UnknownClass(_))
        ));
    }

    #[test]
    fn two_class_targets_are_forced() {
        let r = report(&[("c0", Some("woman")), ("c1", Some("man"))]);
        let plan = plan_target_edits(
            &two_class(),
            &r,
            9,
            TargetSampling::Uniform,
            &Templates::default(),
        )
        .unwrap();
        assert_eq!(plan.len(), 6);
        for p in &plan {
            let want = if p.source_class == "c0" { "c1" } else { "c0" };
            assert_eq!(p.target_class.as_deref(), Some(want));
        }
    }

    #[test]
    fn target_text_mentions_target_and_kept_bias() {
        let c = Corpus::new(vec![
            SampleRecord::new("a", "young", ["woman"]),
            SampleRecord::new("b", "old", ["man"]),
        ])
        .unwrap();
        let r = report(&[("young", Some("woman")), ("old", Some("man"))]);
        let plan =
            plan_target_edits(&c, &r, 0, TargetSampling::Uniform, &Templates::default()).unwrap();
        assert_eq!(
            plan[0].instruction_text,
            "Turn this woman into an old woman."
        );
        assert_eq!(plan[0].source_bias.as_deref(), Some("woman"));
        assert_eq!(plan[1].instruction_text, "Turn this man into a young man.");
    }

    #[test]
    fn single_class_is_an_error() {
        let c = Corpus::new(vec![SampleRecord::new("a", "x", ["t"])]).unwrap();
        let r = report(&[("x", Some("t"))]);
        assert!(
            plan_target_edits(&c, &r, 0, TargetSampling::Uniform, &Templates::default()).is_err()
        );
    }

    fn one_class_of_four(n: usize) -> (Corpus, BiasReport) {
        let mut recs: Vec<_> = (0..n)
            .map(|i| SampleRecord::new(format!("r{i}"), "k0", ["t"]))
            .collect();
        for c in ["k1", "k2", "k3"] {
            recs.push(SampleRecord::new(format!("{c}-0"), c, ["t"]));
        }
        let r = report(&[
            ("k0", Some("b0")),
            ("k1", Some("b1")),
            ("k2", Some("b2")),
            ("k3", Some("b3")),
        ]);
        (Corpus::new(recs).unwrap(), r)
    }

    #[test]
    fn uniform_targets_are_balanced_and_reproducible() {
        let (c, r) = one_class_of_four(10_000);
        let plan =
            plan_target_edits(&c, &r, 42, TargetSampling::Uniform, &Templates::default()).unwrap();
        let again =
            plan_target_edits(&c, &r, 42, TargetSampling::Uniform, &Templates::default()).unwrap();
        assert_eq!(plan, again);
        let mut counts = std::collections::BTreeMap::new();
        for p in plan.iter().filter(|p| p.source_class == "k0") {
            *counts
                .entry(p.target_class.clone().unwrap())
                .or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 3);
        // binomial(10000, 1/3): sigma ~ 47
        for (_, n) in counts {
            assert!((n as f64 - 10_000.0 / 3.0).abs() < 4.0 * 47.2, "{n}");
        }
        assert!(plan
            .iter()
            .all(|p| p.target_class.as_deref() != Some(p.source_class.as_str())));
    }

    #[test]
    fn round_robin_equalizes() {
        let (c, r) = one_class_of_four(9);
        let plan = plan_target_edits(&c, &r, 0, TargetSampling::RoundRobin, &Templates::default())
            .unwrap();
        let to: Vec<_> = plan
            .iter()
            .filter(|p| p.source_class == "k0")
            .map(|p| p.target_class.clone().unwrap())
            .collect();
        assert_eq!(to.iter().filter(|t| *t == "k1").count(), 3);
        assert_eq!(to.iter().filter(|t| *t == "k3").count(), 3);
    }

    #[test]
    fn many_classes_bias_replacement_is_never_own() {
        let (c, r) = one_class_of_four(300);
        let plan = plan_bias_edits(&c, &r, 5, &Templates::default()).unwrap();
        assert!(plan.iter().all(|p| p.replacement_bias != p.source_bias));
        let used: std::collections::BTreeSet<_> = plan
            .iter()
            .filter(|p| p.source_class == "k0")
            .filter_map(|p| p.replacement_bias.clone())
            .collect();
        assert_eq!(used.into_iter().collect::<Vec<_>>(), ["b1", "b2", "b3"]);
    }

    #[test]
    fn plan_jsonl_round_trip() {
        let r = report(&[("c0", Some("woman")), ("c1", Some("man"))]);
        let plan = plan_edits(&two_class(), &r, &PlanConfig::default()).unwrap();
        assert_eq!(plan.len(), 12);
        let bytes = plan_to_jsonl(&plan);
        assert_eq!(parse_plan(std::io::Cursor::new(&bytes)).unwrap(), plan);
        assert!(parse_plan(std::io::Cursor::new(b"")).unwrap().is_empty());
        assert!(plan_to_jsonl(&[]).is_empty());
        let line = String::from_utf8(bytes).unwrap();
        assert!(line.starts_with(
            "{\"source_id\":\"s0\",\"kind\":\"bias_edit\",\"source_class\":\"c0\",\"source_bias\""
        ));
    }

    #[test]
    fn plan_schema_errors() {
        let bad_kind =
            r#"{"source_id":"a","kind":"recolor","source_class":"x","instruction_text":"t"}"#;
        assert!(matches!(
            parse_plan(std::io::Cursor::new(bad_kind)),
            Err(Error::Parse { line: 1, .. })
        ));
        let self_target = r#"{"source_id":"a","kind":"target_edit","source_class":"x","target_class":"x","instruction_text":"t"}"#;
        assert!(parse_plan(std::io::Cursor::new(self_target)).is_err());
        let no_bias =
            r#"{"source_id":"a","kind":"bias_edit","source_class":"x","instruction_text":"t"}"#;
        assert!(parse_plan(std::io::Cursor::new(no_bias)).is_err());
    }

    #[test]
    fn templates_from_toml() {
        let t =
            Templates::from_toml("bias_edit = \"swap {bias} for {replacement_bias}\"\n").unwrap();
        assert_eq!(t.bias_edit, "swap {bias} for {replacement_bias}");
        assert_eq!(t.target_edit, Templates::default().target_edit);
        assert!(Templates::from_toml("nope = 1").is_err());
    }

    #[test]
    fn skips_non_original_records() {
        let mut recs = two_class().into_records();
        recs[0].provenance = Provenance::BiasEdit;
        let c = Corpus::new(recs).unwrap();
        let r = report(&[("c0", Some("woman")), ("c1", Some("man"))]);
        assert_eq!(
            plan_bias_edits(&c, &r, 0, &Templates::default())
                .unwrap()
                .len(),
            5
        );
    }
}
