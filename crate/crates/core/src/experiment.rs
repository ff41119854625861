//! In-process end-to-end runs: synthesize, detect, edit, build every
//! variant, train and score under both protocols.

use std::collections::BTreeMap;

use crate::builder::{apply_plan, build_variant, Variant};
use crate::corpus::Corpus;
use crate::editor::{MockFeatureEditor, MockTagEditor};
use crate::editplan::{plan_edits, PlanConfig};
use crate::error::{Error, Result};
use crate::eval::{
    alignment_map, selected_metrics, train_linear, Protocol, SelectedMetrics, TrainConfig,
};
use crate::stab::{detect, BiasReport, DetectMode, Exclusions};
use crate::stats::build_table;
use crate::synth::{generate, SynthConfig, SynthOutput};

pub const VARIANTS: [Variant; 5] = [
    Variant::Original,
    Variant::Full,
    Variant::Sampled,
    Variant::BeOnly,
    Variant::TeOnly,
];

#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub size: usize,
    pub id_val: SelectedMetrics,
    pub best_bc: SelectedMetrics,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub seed: u64,
    pub report: BiasReport,
    pub edit_failures: usize,
    /// keyed by [`Variant::as_str`]
    pub variants: BTreeMap<String, VariantOutcome>,
}

impl Outcome {
    pub fn get(&self, v: Variant) -> &VariantOutcome {
        &self.variants[v.as_str()]
    }
}

/// Edited records for `synth.train` using the mock feature editor.
pub fn edit_with_mock_features(
    synth: &SynthOutput,
    report: &BiasReport,
    seed: u64,
) -> Result<(Vec<crate::corpus::SampleRecord>, usize)> {
    let fm = synth
        .truth
        .feature_map
        .clone()
        .ok_or_else(|| Error::invalid("synthetic corpus has no feature channels"))?;
    let backend = MockFeatureEditor {
        tags: MockTagEditor::new(report.bias_map())
            .with_target_keywords(synth.truth.target_keywords()),
        feature_map: fm,
        noise_sigma: synth.truth.noise_sigma,
        seed,
    };
    let plan = plan_edits(
        &synth.train,
        report,
        &PlanConfig {
            seed,
            ..PlanConfig::default()
        },
    )?;
    let res = apply_plan(&synth.train, &plan, &backend)?;
    Ok((res.edited, res.failures.len()))
}

/// Full pipeline for one seed; `cfg.seed` is overridden by `seed`.
pub fn run(
    cfg: &SynthConfig,
    seed: u64,
    train_cfg: &TrainConfig,
    variants: &[Variant],
) -> Result<Outcome> {
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    let synth = generate(&cfg)?;
    let report = detect(
        &build_table(&synth.train),
        DetectMode::Both,
        &Exclusions::new(),
        3,
    )?;
    let (edited, edit_failures) = edit_with_mock_features(&synth, &report, seed)?;
    let alignment = alignment_map(&synth.test, Some(&report))?;
    let tc = TrainConfig { seed, ..*train_cfg };
    let mut out = BTreeMap::new();
    for &v in variants {
        let data: Corpus = build_variant(&synth.train, &edited, v, seed)?;
        let tr = train_linear(&data, &synth.val, &synth.test, &alignment, &tc)?;
        out.insert(
            v.as_str().to_string(),
            VariantOutcome {
                size: data.len(),
                id_val: selected_metrics(&tr.trace, Protocol::IdVal)?,
                best_bc: selected_metrics(&tr.trace, Protocol::BestBcTest)?,
            },
        );
    }
    Ok(Outcome {
        seed,
        report,
        edit_failures,
        variants: out,
    })
}
