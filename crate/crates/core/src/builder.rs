//! Assembly of the bias-reduced dataset and its experimental variants.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Provenance, SampleRecord};
use crate::editor::EditorBackend;
use crate::editplan::{EditInstruction, EditKind};
use crate::error::{Error, Result};
use crate::rng::{self, domain};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditFailure {
    pub source_id: String,
    pub kind: EditKind,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct EditResults {
    /// Successful edits, in plan order.
    pub edited: Vec<SampleRecord>,
    pub failures: Vec<EditFailure>,
}

/// Run every instruction of `plan` through `backend`.
///
/// Failed edits are collected rather than aborting.
pub fn apply_plan(
    corpus: &Corpus,
    plan: &[EditInstruction],
    backend: &dyn EditorBackend,
) -> Result<EditResults> {
    let by_id: HashMap<&str, &SampleRecord> = corpus
        .records()
        .iter()
        .map(|r| (r.id.as_str(), r))
        .collect();
    let items = plan
        .iter()
        .map(|ins| {
            by_id
                .get(ins.source_id.as_str())
                .map(|rec| (ins, *rec))
                .ok_or_else(|| Error::UnknownId(ins.source_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = EditResults::default();
    for ((ins, _), res) in items.iter().zip(backend.apply_batch(&items)) {
        match res {
            Ok(rec) => out.edited.push(rec),
            Err(e) => out.failures.push(EditFailure {
                source_id: ins.source_id.clone(),
                kind: ins.kind,
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}

/// Originals (input order), then bias-edits, then target-edits.
pub fn assemble(corpus: &Corpus, edited: &[SampleRecord]) -> Result<Corpus> {
    let mut records = corpus.records().to_vec();
    for prov in [Provenance::BiasEdit, Provenance::TargetEdit] {
        records.extend(edited.iter().filter(|r| r.provenance == prov).cloned());
    }
    if let Some(r) = edited.iter().find(|r| r.provenance == Provenance::Original) {
        return Err(Error::InvalidRecord {
            id: r.id.clone(),
            reason: "edited record has provenance original".into(),
        });
    }
    Corpus::new(records)
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub dataset: Corpus,
    pub failures: Vec<EditFailure>,
}

/// D_b plus every successfully edited record.
pub fn build_debiased(
    corpus: &Corpus,
    plan: &[EditInstruction],
    backend: &dyn EditorBackend,
) -> Result<BuildOutput> {
    let res = apply_plan(corpus, plan, backend)?;
    Ok(BuildOutput {
        dataset: assemble(corpus, &res.edited)?,
        failures: res.failures,
    })
}

const SAMPLE_ATTEMPTS: u64 = 100;

/// Uniform sample of `n_target` records without replacement, keeping every
/// class represented. Output keeps the input's relative order.
pub fn sample_matched(d_hat: &Corpus, n_target: usize, seed: u64) -> Result<Corpus> {
    let classes = d_hat.class_set();
    if n_target < classes.len() {
        return Err(Error::invalid(format!(
            "cannot keep {} classes in {n_target} records",
            classes.len()
        )));
    }
    if n_target > d_hat.len() {
        return Err(Error::invalid(format!(
            "requested {n_target} records from {}",
            d_hat.len()
        )));
    }
    let recs = d_hat.records();
    let covers = |idx: &[usize]| {
        let seen: BTreeSet<&str> = idx.iter().map(|&i| recs[i].class_label.as_str()).collect();
        seen.len() == classes.len()
    };
    let mut chosen = None;
    for attempt in 0..SAMPLE_ATTEMPTS {
        let mut rng = rng::stream(seed, domain::SAMPLE, attempt);
        let idx = index::sample(&mut rng, recs.len(), n_target).into_vec();
        if covers(&idx) {
            chosen = Some(idx);
            break;
        }
    }
    let mut idx = match chosen {
        Some(idx) => idx,
        None => stratified(d_hat, n_target, seed),
    };
    idx.sort_unstable();
    Corpus::new(idx.into_iter().map(|i| recs[i].clone()).collect())
}

/// One random record per class, the rest uniform over what remains.
fn stratified(d_hat: &Corpus, n_target: usize, seed: u64) -> Vec<usize> {
    let recs = d_hat.records();
    let mut rng = rng::stream(seed, domain::SAMPLE, SAMPLE_ATTEMPTS);
    let mut picked = Vec::with_capacity(n_target);
    for class in d_hat.class_set() {
        let members: Vec<usize> = (0..recs.len())
            .filter(|&i| recs[i].class_label == *class)
            .collect();
        let j = index::sample(&mut rng, members.len(), 1).index(0);
        picked.push(members[j]);
    }
    let taken: BTreeSet<usize> = picked.iter().copied().collect();
    let rest: Vec<usize> = (0..recs.len()).filter(|i| !taken.contains(i)).collect();
    let extra = index::sample(&mut rng, rest.len(), n_target - picked.len());
    picked.extend(extra.iter().map(|j| rest[j]));
    picked
}

pub fn subset_by_provenance(d_hat: &Corpus, keep: &BTreeSet<Provenance>) -> Result<Corpus> {
    if !keep.contains(&Provenance::Original) {
        return Err(Error::invalid(
            "provenance subset must keep original records",
        ));
    }
    let records: Vec<SampleRecord> = d_hat
        .records()
        .iter()
        .filter(|r| keep.contains(&r.provenance))
        .cloned()
        .collect();
    let out = Corpus::new(records)?;
    if let Some(c) = d_hat
        .class_set()
        .iter()
        .find(|c| !out.class_set().contains(c))
    {
        return Err(Error::EmptyClass(c.clone()));
    }
    Ok(out)
}

/// Dataset variants used in the ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// D_b unchanged
    Original,
    /// D_b + bias-edits + target-edits
    Full,
    /// Full, subsampled to |D_b|
    Sampled,
    /// D_b + bias-edits
    BeOnly,
    /// D_b + target-edits
    TeOnly,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::Full => "full",
            Variant::Sampled => "sampled",
            Variant::BeOnly => "be-only",
            Variant::TeOnly => "te-only",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Variant::Original),
            "full" => Ok(Variant::Full),
            "sampled" => Ok(Variant::Sampled),
            "be-only" => Ok(Variant::BeOnly),
            "te-only" => Ok(Variant::TeOnly),
            other => Err(Error::invalid(format!("unknown variant {other:?}"))),
        }
    }
}

/// Build one variant from D_b and its edited records.
pub fn build_variant(
    original: &Corpus,
    edited: &[SampleRecord],
    variant: Variant,
    seed: u64,
) -> Result<Corpus> {
    let full = assemble(original, edited)?;
    let keep = |p: &[Provenance]| p.iter().copied().collect::<BTreeSet<_>>();
    match variant {
        Variant::Original => Ok(original.clone()),
        Variant::Full => Ok(full),
        Variant::Sampled => sample_matched(&full, original.len(), seed),
        Variant::BeOnly => {
            subset_by_provenance(&full, &keep(&[Provenance::Original, Provenance::BiasEdit]))
        }
        Variant::TeOnly => subset_by_provenance(
            &full,
            &keep(&[Provenance::Original, Provenance::TargetEdit]),
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildManifest {
    pub variant: String,
    pub seed: u64,
    pub backend: String,
    pub counts: BTreeMap<String, usize>,
    pub total: usize,
    pub failures: usize,
}

impl BuildManifest {
    pub fn new(
        dataset: &Corpus,
        variant: Variant,
        seed: u64,
        backend: &str,
        failures: usize,
    ) -> Self {
        BuildManifest {
            variant: variant.as_str().into(),
            seed,
            backend: backend.into(),
            counts: provenance_counts(dataset)
                .into_iter()
                .map(|(p, n)| (p.as_str().to_string(), n))
                .collect(),
            total: dataset.len(),
            failures,
        }
    }
}

pub fn provenance_counts(c: &Corpus) -> BTreeMap<Provenance, usize> {
    let mut m = BTreeMap::new();
    for p in [
        Provenance::Original,
        Provenance::BiasEdit,
        Provenance::TargetEdit,
    ] {
        m.insert(p, 0);
    }
    for r in c.records() {
        *m.entry(r.provenance).or_default() += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Alignment;
    use crate::editor::MockTagEditor;
    use crate::editplan::{plan_edits, PlanConfig};
    use crate::stab::{detect, DetectMode, Exclusions};
    use crate::stats::build_table;

    fn biased(n: usize) -> Corpus {
        Corpus::new(
            (0..n)
                .map(|i| {
                    let (c, b) = if i % 2 == 0 {
                        ("c0", "b0")
                    } else {
                        ("c1", "b1")
                    };
                    SampleRecord::new(format!("s{i:03}"), c, [b, "x"])
                })
                .collect(),
        )
        .unwrap()
    }

    fn pipeline(n: usize) -> (Corpus, BuildOutput) {
        let c = biased(n);
        let report = detect(&build_table(&c), DetectMode::Both, &Exclusions::new(), 3).unwrap();
        let plan = plan_edits(&c, &report, &PlanConfig::default()).unwrap();
        let ed = MockTagEditor::new(report.bias_map());
        let out = build_debiased(&c, &plan, &ed).unwrap();
        (c, out)
    }

    #[test]
    fn full_plan_triples_the_dataset() {
        let (c, out) = pipeline(100);
        assert_eq!(out.dataset.len(), 300);
        assert!(out.failures.is_empty());
        let counts = provenance_counts(&out.dataset);
        assert_eq!(
            counts.values().copied().collect::<Vec<_>>(),
            [100, 100, 100]
        );
        assert_eq!(&out.dataset.records()[..100], c.records());
        assert!(out.dataset.records()[100..]
            .iter()
            .all(|r| r.truth_alignment == Some(Alignment::Conflict)));
        assert_eq!(out.dataset.records()[100].provenance, Provenance::BiasEdit);
        assert_eq!(
            out.dataset.records()[200].provenance,
            Provenance::TargetEdit
        );
    }

    #[test]
    fn empty_plan_is_identity() {
        let c = biased(10);
        let out = build_debiased(&c, &[], &MockTagEditor::default()).unwrap();
        assert_eq!(out.dataset, c);
    }

    #[test]
    fn unknown_ids_are_rejected() {
        let c = biased(4);
        let six = biased(6);
        let report = detect(&build_table(&six), DetectMode::Both, &Exclusions::new(), 1).unwrap();
        let plan = plan_edits(&six, &report, &PlanConfig::default()).unwrap();
        assert!(matches!(
            build_debiased(&c, &plan, &MockTagEditor::default()),
            Err(Error::UnknownId(_))
        ));
    }

    #[test]
    fn undetectable_class_contributes_target_edits_only() {
        let mut recs = biased(10).into_records();
        for r in recs.iter_mut().filter(|r| r.class_label == "c1") {
            r.tags.remove("b1");
        }
        recs.push(SampleRecord::new("z", "c1", ["b0"]));
        let c = Corpus::new(recs).unwrap();
        let report = detect(&build_table(&c), DetectMode::Both, &Exclusions::new(), 3).unwrap();
        assert_eq!(report.chosen("c1"), None);
        let plan = plan_edits(&c, &report, &PlanConfig::default()).unwrap();
        let out = build_debiased(&c, &plan, &MockTagEditor::new(report.bias_map())).unwrap();
        let counts = provenance_counts(&out.dataset);
        // c0 has no other detected bias to swap in, so no bias edits at all
        assert_eq!(counts[&Provenance::BiasEdit], 0);
        assert_eq!(counts[&Provenance::TargetEdit], 11);
    }

    #[test]
    fn sampled_variant() {
        let (c, out) = pipeline(100);
        let s = sample_matched(&out.dataset, 100, 7).unwrap();
        assert_eq!(s.len(), 100);
        assert_eq!(s, sample_matched(&out.dataset, 100, 7).unwrap());
        let provs: BTreeSet<_> = s.records().iter().map(|r| r.provenance).collect();
        assert!(provs.len() > 1);
        let all = sample_matched(&out.dataset, 300, 1).unwrap();
        assert_eq!(all, out.dataset);
        assert!(sample_matched(&out.dataset, 1, 0).is_err());
        assert!(sample_matched(&out.dataset, 301, 0).is_err());
        assert_eq!(s.class_set().len(), c.class_set().len());
    }

    #[test]
    fn stratified_fallback_keeps_rare_class() {
        let mut recs: Vec<_> = (0..500)
            .map(|i| SampleRecord::new(format!("a{i}"), "big", ["x"]))
            .collect();
        recs.push(SampleRecord::new("tiny", "small", ["y"]));
        let c = Corpus::new(recs).unwrap();
        let s = sample_matched(&c, 2, 3).unwrap();
        assert_eq!(s.class_set().len(), 2);
    }

    #[test]
    fn provenance_subsets() {
        let (c, out) = pipeline(100);
        let keep = |p: &[Provenance]| p.iter().copied().collect::<BTreeSet<_>>();
        assert_eq!(
            subset_by_provenance(&out.dataset, &keep(&[Provenance::Original])).unwrap(),
            c
        );
        let be = subset_by_provenance(
            &out.dataset,
            &keep(&[Provenance::Original, Provenance::BiasEdit]),
        )
        .unwrap();
        assert_eq!(be.len(), 200);
        assert!(subset_by_provenance(&out.dataset, &keep(&[Provenance::BiasEdit])).is_err());
    }

    #[test]
    fn variants() {
        let (c, out) = pipeline(40);
        let edited: Vec<_> = out.dataset.records()[40..].to_vec();
        assert_eq!(
            build_variant(&c, &edited, Variant::Full, 0).unwrap().len(),
            120
        );
        assert_eq!(
            build_variant(&c, &edited, Variant::Sampled, 0)
                .unwrap()
                .len(),
            40
        );
        assert_eq!(
            build_variant(&c, &edited, Variant::BeOnly, 0)
                .unwrap()
                .len(),
            80
        );
        assert_eq!(
            build_variant(&c, &edited, Variant::TeOnly, 0)
                .unwrap()
                .len(),
            80
        );
        assert_eq!(build_variant(&c, &edited, Variant::Original, 0).unwrap(), c);
        assert!("bogus".parse::<Variant>().is_err());
        let m = BuildManifest::new(&out.dataset, Variant::Full, 0, "mock-tag", 0);
        assert_eq!(m.counts["bias_edit"], 40);
    }
}
