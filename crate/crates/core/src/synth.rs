//! Synthetic corpora with planted biases.
//!
//! Each class has a target keyword (always present) and one or more bias
//! keywords. A train/val record carries its own class's bias in each slot
//! with probability `1 - rho`, otherwise the bias of a uniformly chosen other
//! class. Feature channels mirror the tags: `[target | bias slots | noise]`,
//! each channel the class's canonical code plus Gaussian noise. The bias
//! margin is larger than the target margin, so a classifier trained on a
//! biased split prefers the bias channels.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{fold_tag, Alignment, Corpus, SampleRecord};
use crate::editor::{ChannelLayout, FeatureMap};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{self, domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    /// Defaults to the folded class name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_keyword: Option<String>,
    pub bias_keyword: String,
    /// Further bias keywords, used by slots 1.. in multi-bias corpora.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_bias_keywords: Vec<String>,
}

impl ClassSpec {
    pub fn target(&self) -> String {
        fold_tag(self.target_keyword.as_deref().unwrap_or(&self.name))
    }

    /// Bias keyword of `slot` (0 is the primary bias).
    pub fn bias(&self, slot: usize) -> Option<String> {
        match slot {
            0 => Some(fold_tag(&self.bias_keyword)),
            s => self.extra_bias_keywords.get(s - 1).map(|k| fold_tag(k)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RareAttr {
    pub class: String,
    pub attribute: String,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDims {
    pub n_target: usize,
    pub n_bias: usize,
    pub n_noise: usize,
}

impl Default for FeatureDims {
    fn default() -> Self {
        FeatureDims {
            n_target: 1,
            n_bias: 1,
            n_noise: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Margins {
    pub mu_target: f64,
    pub mu_bias: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Margins {
            mu_target: 1.5,
            mu_bias: 3.0,
        }
    }
}

fn default_val_fraction() -> f64 {
    0.2
}

fn default_slots() -> usize {
    1
}

fn default_sigma() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: Vec<ClassSpec>,
    pub samples_per_class: usize,
    pub rho: f64,
    #[serde(default)]
    pub noise_vocab_size: usize,
    #[serde(default)]
    pub noise_tag_prob: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rare_attrs: Vec<RareAttr>,
    #[serde(default)]
    pub feature_dims: FeatureDims,
    #[serde(default)]
    pub margins: Margins,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    /// Planted biases per class.
    #[serde(default = "default_slots")]
    pub bias_slots: usize,
    /// Val records per class, as a fraction of `samples_per_class` (at least 1).
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Test records per class; defaults to `samples_per_class / 2` (at least 2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_per_class: Option<usize>,
}

impl SynthConfig {
    /// `n` classes `c0..`, bias keywords `b0..` with three extra keywords
    /// each (`b0_1`, ...), 20 noise tags.
    pub fn preset(n_classes: usize, samples_per_class: usize, rho: f64, seed: u64) -> Self {
        SynthConfig {
            classes: (0..n_classes)
                .map(|i| ClassSpec {
                    name: format!("c{i}"),
                    target_keyword: None,
                    bias_keyword: format!("b{i}"),
                    extra_bias_keywords: (1..4).map(|j| format!("b{i}_{j}")).collect(),
                })
                .collect(),
            samples_per_class,
            rho,
            noise_vocab_size: 20,
            noise_tag_prob: 0.3,
            rare_attrs: Vec::new(),
            feature_dims: if n_classes == 2 {
                FeatureDims::default()
            } else {
                FeatureDims {
                    n_target: n_classes,
                    n_bias: n_classes,
                    n_noise: 2,
                }
            },
            margins: Margins::default(),
            noise_sigma: 1.0,
            seed,
            bias_slots: 1,
            val_fraction: default_val_fraction(),
            test_per_class: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SynthConfig =
            toml::from_str(text).map_err(|e| Error::Schema(format!("synth config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("synth config serializes")
    }

    pub fn test_size(&self) -> usize {
        self.test_per_class
            .unwrap_or((self.samples_per_class / 2).max(2))
    }

    pub fn val_size(&self) -> usize {
        ((self.val_fraction * self.samples_per_class as f64).round() as usize).max(1)
    }

    pub fn layout(&self) -> ChannelLayout {
        ChannelLayout {
            n_target: self.feature_dims.n_target,
            n_bias: self.feature_dims.n_bias,
            bias_slots: self.bias_slots,
            n_noise: self.feature_dims.n_noise,
        }
    }

    pub fn noise_tags(&self) -> Vec<String> {
        (0..self.noise_vocab_size)
            .map(|i| format!("noise{i:02}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Schema(format!("synth config: {m}")));
        let k = self.classes.len();
        if k < 2 {
            return bad("need at least two classes".into());
        }
        if self.samples_per_class < 1 {
            return bad("samples_per_class must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho {} outside [0, 1]", self.rho));
        }
        if !(0.0..=1.0).contains(&self.noise_tag_prob) {
            return bad(format!(
                "noise_tag_prob {} outside [0, 1]",
                self.noise_tag_prob
            ));
        }
        if !(0.0..=1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction {} outside [0, 1]", self.val_fraction));
        }
        let Margins { mu_target, mu_bias } = self.margins;
        if !(mu_target > 0.0 && mu_bias > mu_target && mu_bias.is_finite()) {
            return bad(format!(
                "need mu_bias > mu_target > 0, got {mu_bias} and {mu_target}"
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise_sigma {} must be finite and non-negative",
                self.noise_sigma
            ));
        }
        if self.bias_slots < 1 {
            return bad("bias_slots must be at least 1".into());
        }
        if self.test_size() < 2 {
            return bad("test split needs at least 2 records per class".into());
        }
        let mut names = BTreeSet::new();
        let mut vocab = BTreeSet::new();
        for c in &self.classes {
            if c.name.is_empty() || !names.insert(c.name.as_str()) {
                return bad(format!("empty or duplicate class name {:?}", c.name));
            }
            if c.extra_bias_keywords.len() + 1 < self.bias_slots {
                return bad(format!(
                    "class {:?} has {} bias keywords, {} slots requested",
                    c.name,
                    c.extra_bias_keywords.len() + 1,
                    self.bias_slots
                ));
            }
            let kws =
                std::iter::once(c.target()).chain((0..self.bias_slots).filter_map(|s| c.bias(s)));
            for kw in kws {
                if kw.is_empty() || !vocab.insert(kw.clone()) {
                    return bad(format!("empty or reused keyword {kw:?}"));
                }
            }
        }
        for t in self.noise_tags() {
            if vocab.contains(&t) {
                return bad(format!("keyword {t:?} collides with the noise vocabulary"));
            }
        }
        for r in &self.rare_attrs {
            if !names.contains(r.class.as_str()) {
                return Err(Error::UnknownClass(r.class.clone()));
            }
            let a = fold_tag(&r.attribute);
            if a.is_empty() || vocab.contains(&a) || self.noise_tags().contains(&a) {
                return bad(format!(
                    "rare attribute {:?} is empty or collides with another tag",
                    r.attribute
                ));
            }
            if r.count > self.samples_per_class {
                return bad(format!(
                    "rare attribute {:?} count exceeds samples_per_class",
                    r.attribute
                ));
            }
        }
        let FeatureDims {
            n_target, n_bias, ..
        } = self.feature_dims;
        if k > 2 && ((n_target > 0 && n_target < k) || (n_bias > 0 && n_bias < k)) {
            return bad(format!(
                "{k} classes need at least {k} target and bias channels (or 0)"
            ));
        }
        Ok(())
    }
}

/// `base` with `k` planted biases per class.
pub fn multi_bias_config(base: &SynthConfig, k: usize) -> Result<SynthConfig> {
    if k < 2 {
        return Err(Error::invalid(format!("multi-bias needs k >= 2, got {k}")));
    }
    let mut cfg = base.clone();
    cfg.bias_slots = k;
    cfg.validate()?;
    Ok(cfg)
}

/// Canonical code of class `ci` over `n` channels: `+mu`/`-mu` for two
/// classes, one-hot `mu` otherwise.
pub fn canonical_code(ci: usize, n_classes: usize, n: usize, mu: f64) -> Vec<f64> {
    if n_classes == 2 {
        vec![if ci == 0 { mu } else { -mu }; n]
    } else {
        (0..n).map(|j| if j == ci { mu } else { 0.0 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedClass {
    pub class: String,
    pub target_keyword: String,
    pub biases: Vec<String>,
}

/// Ground truth written next to a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub seed: u64,
    pub rho: f64,
    pub bias_slots: usize,
    pub classes: Vec<PlantedClass>,
    /// Absent when the corpus has no feature channels.
    pub feature_map: Option<FeatureMap>,
    pub noise_sigma: f64,
    /// split -> class -> records whose primary bias slot is in conflict
    pub conflicts: BTreeMap<String, BTreeMap<String, usize>>,
    /// split -> record count
    pub sizes: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

impl SynthTruth {
    pub fn planted(&self, class: &str) -> Option<&[String]> {
        self.classes
            .iter()
            .find(|c| c.class == class)
            .map(|c| c.biases.as_slice())
    }

    /// class -> primary planted bias
    pub fn bias_map(&self) -> BTreeMap<String, String> {
        self.classes
            .iter()
            .map(|c| (c.class.clone(), c.biases[0].clone()))
            .collect()
    }

    pub fn target_keywords(&self) -> BTreeMap<String, String> {
        self.classes
            .iter()
            .map(|c| (c.class.clone(), c.target_keyword.clone()))
            .collect()
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("truth serializes");
        v.push(b'\n');
        v
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::Schema(format!("truth: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub train: Corpus,
    pub val: Corpus,
    pub test: Corpus,
    pub truth: SynthTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn domain(self) -> u64 {
        domain::SYNTH + self as u64
    }
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    noise_tags: Vec<String>,
    normal: Option<Normal<f64>>,
    layout: ChannelLayout,
}

impl Generator<'_> {
    fn other_class(&self, rng: &mut ChaCha8Rng, ci: usize) -> usize {
        let j = rng.gen_range(0..self.cfg.classes.len() - 1);
        if j >= ci {
            j + 1
        } else {
            j
        }
    }

    fn push_channels(
        &self,
        out: &mut Vec<f64>,
        rng: &mut ChaCha8Rng,
        ci: usize,
        n: usize,
        mu: f64,
    ) {
        let code = canonical_code(ci, self.cfg.classes.len(), n, mu);
        for v in code {
            out.push(v + self.noise(rng));
        }
    }

    fn noise(&self, rng: &mut ChaCha8Rng) -> f64 {
        self.normal.map_or(0.0, |n| n.sample(rng))
    }

    /// One record. `force_conflict` pins slot 0 (test split); otherwise every
    /// slot is drawn independently.
    fn record(
        &self,
        split: Split,
        ci: usize,
        i: usize,
        force_conflict: Option<bool>,
    ) -> SampleRecord {
        let cfg = self.cfg;
        let class = &cfg.classes[ci];
        let mut rng = rng::stream(cfg.seed, split.domain(), ((ci as u64) << 32) | i as u64);
        let carriers: Vec<usize> = (0..cfg.bias_slots)
            .map(|slot| {
                let conflict = match (slot, force_conflict) {
                    (0, Some(f)) => f,
                    (_, Some(_)) => false,
                    (_, None) => rng.gen::<f64>() < cfg.rho,
                };
                if conflict {
                    self.other_class(&mut rng, ci)
                } else {
                    ci
                }
            })
            .collect();
        let mut tags = vec![class.target()];
        for (slot, &c) in carriers.iter().enumerate() {
            tags.extend(cfg.classes[c].bias(slot));
        }
        for t in &self.noise_tags {
            if rng.gen::<f64>() < cfg.noise_tag_prob {
                tags.push(t.clone());
            }
        }
        let id = format!("{}-{}-{i:05}", split.name(), class.name);
        let mut rec = SampleRecord::new(id, class.name.clone(), tags);
        rec.truth_alignment = Some(if carriers[0] == ci {
            Alignment::Aligned
        } else {
            Alignment::Conflict
        });
        if self.layout.dim() > 0 {
            let mut f = Vec::with_capacity(self.layout.dim());
            let m = cfg.margins;
            self.push_channels(&mut f, &mut rng, ci, self.layout.n_target, m.mu_target);
            for &c in &carriers {
                self.push_channels(&mut f, &mut rng, c, self.layout.n_bias, m.mu_bias);
            }
            for _ in 0..self.layout.n_noise {
                f.push(self.noise(&mut rng));
            }
            rec.features = Some(f);
        }
        rec
    }

    fn split(&self, split: Split, per_class: usize) -> Vec<SampleRecord> {
        let n_classes = self.cfg.classes.len();
        par::map_range(n_classes * per_class, |k| {
            let (ci, i) = (k / per_class, k % per_class);
            // Test split: odd indices are conflicts, so half (rounded down) conflict.
            let force = (split == Split::Test).then_some(i % 2 == 1);
            self.record(split, ci, i, force)
        })
    }
}

fn conflict_counts(c: &[SampleRecord], classes: &[ClassSpec]) -> BTreeMap<String, usize> {
    let mut m: BTreeMap<String, usize> = classes.iter().map(|c| (c.name.clone(), 0)).collect();
    for r in c {
        if r.truth_alignment == Some(Alignment::Conflict) {
            *m.entry(r.class_label.clone()).or_default() += 1;
        }
    }
    m
}

/// Generate train, val and test corpora plus ground truth.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let layout = cfg.layout();
    let normal = if cfg.noise_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    let g = Generator {
        cfg,
        noise_tags: cfg.noise_tags(),
        normal,
        layout,
    };
    let mut train = g.split(Split::Train, cfg.samples_per_class);
    for (k, ra) in cfg.rare_attrs.iter().enumerate() {
        let ci = cfg
            .classes
            .iter()
            .position(|c| c.name == ra.class)
            .expect("validated");
        let mut rng = rng::stream(cfg.seed, domain::SYNTH, u64::MAX - k as u64);
        let attr = fold_tag(&ra.attribute);
        for j in rand::seq::index::sample(&mut rng, cfg.samples_per_class, ra.count) {
            train[ci * cfg.samples_per_class + j]
                .tags
                .insert(attr.clone());
        }
    }
    let val_n = cfg.val_size();
    let val = g.split(Split::Val, val_n);
    let test = g.split(Split::Test, cfg.test_size());

    let mut conflicts = BTreeMap::new();
    let mut sizes = BTreeMap::new();
    let mut warnings = Vec::new();
    for (name, recs) in [("train", &train), ("val", &val), ("test", &test)] {
        let cc = conflict_counts(recs, &cfg.classes);
        if name == "train" && cfg.rho > 0.0 {
            for (c, n) in &cc {
                if *n == 0 {
                    warnings.push(format!(
                        "class {c:?} has no conflict records in train (rho = {})",
                        cfg.rho
                    ));
                }
            }
        }
        conflicts.insert(name.to_string(), cc);
        sizes.insert(name.to_string(), recs.len());
    }
    let n_classes = cfg.classes.len();
    let feature_map = (layout.dim() > 0).then(|| FeatureMap {
        layout,
        target: cfg
            .classes
            .iter()
            .enumerate()
            .map(|(ci, c)| {
                (
                    c.name.clone(),
                    canonical_code(ci, n_classes, layout.n_target, cfg.margins.mu_target),
                )
            })
            .collect(),
        bias: cfg
            .classes
            .iter()
            .enumerate()
            .map(|(ci, c)| {
                (
                    c.name.clone(),
                    canonical_code(ci, n_classes, layout.n_bias, cfg.margins.mu_bias),
                )
            })
            .collect(),
    });
    let truth = SynthTruth {
        seed: cfg.seed,
        rho: cfg.rho,
        bias_slots: cfg.bias_slots,
        classes: cfg
            .classes
            .iter()
            .map(|c| PlantedClass {
                class: c.name.clone(),
                target_keyword: c.target(),
                biases: (0..cfg.bias_slots).filter_map(|s| c.bias(s)).collect(),
            })
            .collect(),
        feature_map,
        noise_sigma: cfg.noise_sigma,
        conflicts,
        sizes,
        warnings,
    };
    let seed = Some(cfg.seed);
    Ok(SynthOutput {
        train: Corpus::with_seed(train, seed)?,
        val: Corpus::with_seed(val, seed)?,
        test: Corpus::with_seed(test, seed)?,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stab::{detect, detect_multi, DetectMode, Exclusions};
    use crate::stats::build_table;

    fn small(rho: f64, seed: u64) -> SynthConfig {
        SynthConfig::preset(2, 200, rho, seed)
    }

    #[test]
    fn rho_zero_has_no_train_conflicts_and_balanced_test() {
        let out = generate(&small(0.0, 1)).unwrap();
        assert!(out.truth.conflicts["train"].values().all(|&n| n == 0));
        assert!(out.truth.conflicts["val"].values().all(|&n| n == 0));
        assert_eq!(out.truth.conflicts["test"]["c0"], 50);
        assert_eq!(out.test.len(), 200);
        assert_eq!(out.val.len(), 80);
    }

    #[test]
    fn truth_alignment_matches_bias_keyword() {
        let out = generate(&small(0.3, 2)).unwrap();
        for r in out.train.records().iter().chain(out.test.records()) {
            let own = if r.class_label == "c0" { "b0" } else { "b1" };
            let aligned = r.truth_alignment == Some(Alignment::Aligned);
            assert_eq!(r.has_tag(own), aligned, "{}", r.id);
            assert!(r.has_tag(&r.class_label));
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate(&small(0.05, 9)).unwrap();
        let b = generate(&small(0.05, 9)).unwrap();
        let c = generate(&small(0.05, 10)).unwrap();
        assert_eq!(a.train.to_jsonl_bytes(), b.train.to_jsonl_bytes());
        assert_eq!(a.truth, b.truth);
        assert_ne!(a.train.to_jsonl_bytes(), c.train.to_jsonl_bytes());
    }

    #[test]
    fn rare_attribute_injected_exactly() {
        let mut cfg = small(0.0, 3);
        cfg.rare_attrs.push(RareAttr {
            class: "c0".into(),
            attribute: "Snow".into(),
            count: 1,
        });
        let out = generate(&cfg).unwrap();
        let with: Vec<_> = out
            .train
            .records()
            .iter()
            .filter(|r| r.has_tag("snow"))
            .collect();
        assert_eq!(with.len(), 1);
        assert_eq!(with[0].class_label, "c0");
        assert!(!out
            .val
            .records()
            .iter()
            .chain(out.test.records())
            .any(|r| r.has_tag("snow")));
    }

    #[test]
    fn features_follow_canonical_codes() {
        let mut cfg = small(0.0, 4);
        cfg.noise_sigma = 0.0;
        let out = generate(&cfg).unwrap();
        let fm = out.truth.feature_map.as_ref().unwrap();
        for r in out.test.records() {
            let f = r.features.as_ref().unwrap();
            assert_eq!(
                &f[fm.layout.target_range()],
                fm.target[&r.class_label].as_slice()
            );
            let carrier = match (r.class_label.as_str(), r.truth_alignment) {
                ("c0", Some(Alignment::Aligned)) | ("c1", Some(Alignment::Conflict)) => "c0",
                _ => "c1",
            };
            assert_eq!(&f[fm.layout.bias_range(0)], fm.bias[carrier].as_slice());
        }
    }

    #[test]
    fn conflict_fraction_near_rho() {
        let mut cfg = SynthConfig::preset(2, 2000, 0.2, 5);
        cfg.feature_dims = FeatureDims {
            n_target: 0,
            n_bias: 0,
            n_noise: 0,
        };
        let out = generate(&cfg).unwrap();
        let n = 2000.0;
        let sd = (n * 0.2 * 0.8_f64).sqrt();
        for &k in out.truth.conflicts["train"].values() {
            assert!((k as f64 - 0.2 * n).abs() < 4.0 * sd, "{k}");
        }
        assert!(out.train.records()[0].features.is_none());
    }

    #[test]
    fn planted_bias_is_detected() {
        for seed in 0..5 {
            let out = generate(&small(0.05, seed)).unwrap();
            let report = detect(
                &build_table(&out.train),
                DetectMode::Both,
                &Exclusions::new(),
                3,
            )
            .unwrap();
            assert_eq!(report.chosen("c0"), Some("b0"));
            assert_eq!(report.chosen("c1"), Some("b1"));
        }
    }

    #[test]
    fn multi_bias_slots() {
        let cfg = multi_bias_config(&small(0.0, 6), 2).unwrap();
        let out = generate(&cfg).unwrap();
        assert!(out
            .train
            .records()
            .iter()
            .filter(|r| r.class_label == "c0")
            .all(|r| r.has_tag("b0") && r.has_tag("b0_1")));
        let report = detect_multi(&build_table(&out.train), &Exclusions::new(), 2).unwrap();
        let mut got = report.class("c0").unwrap().chosen.clone();
        got.sort();
        assert_eq!(got, ["b0", "b0_1"]);
        assert!(multi_bias_config(&small(0.0, 6), 5).is_err());
        assert!(multi_bias_config(&small(0.0, 6), 1).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = small(0.0, 0);
        cfg.margins = Margins {
            mu_target: 2.0,
            mu_bias: 1.0,
        };
        assert!(cfg.validate().is_err());
        let mut cfg = small(1.5, 0);
        assert!(cfg.validate().is_err());
        cfg.rho = 0.0;
        cfg.classes[1].bias_keyword = "b0".into();
        assert!(cfg.validate().is_err());
        let mut cfg = SynthConfig::preset(3, 10, 0.0, 0);
        cfg.feature_dims.n_target = 2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = small(0.05, 11);
        let back = SynthConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
        let minimal = r#"
            samples_per_class = 10
            rho = 0.1
            [[classes]]
            name = "young"
            bias_keyword = "woman"
            [[classes]]
            name = "old"
            bias_keyword = "man"
        "#;
        let cfg = SynthConfig::from_toml(minimal).unwrap();
        assert_eq!(cfg.val_size(), 2);
        assert_eq!(cfg.test_size(), 5);
        assert!(SynthConfig::from_toml("rho = 0.1\nbogus = 1").is_err());
    }
}
