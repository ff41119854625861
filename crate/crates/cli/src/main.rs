//! `debias`: the detection / editing / evaluation pipeline as subcommands.
//!
//! Exit codes: 0 success, 2 invalid input, 3 edit backend failure.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use debias_core::builder::{apply_plan, build_variant, provenance_counts, EditFailure, Variant};
use debias_core::corpus::{load_corpus, write_corpus, write_records, Alignment, Corpus};
use debias_core::editor::{
    serve_stdio, EditorBackend, ExternalBackend, MockFeatureEditor, MockTagEditor,
};
use debias_core::editplan::{load_plan, plan_edits, write_plan, EditKind, PlanConfig, Templates};
use debias_core::eval::{
    alignment_map, group_accuracy, read_models, read_predictions, read_trace, retrace,
    selected_metrics, train_linear, write_models, write_trace, CheckpointTrace, Protocol,
    SelectedMetrics, TrainConfig,
};
use debias_core::par;
use debias_core::stab::{
    detect_with, json_to_report, report_to_json, BiasReport, DetectMode, DetectOptions, Exclusions,
};
use debias_core::stats::table_from_reader;
use debias_core::synth::{generate, SynthConfig, SynthTruth};
use debias_core::Error as CoreError;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "debias",
    version,
    about = "Detect dataset bias attributes, build bias-reduced datasets, and measure the effect"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted biases
    Synth(SynthArgs),
    /// Detect one bias attribute per class
    Detect(DetectArgs),
    /// Derive bias-edit and target-edit instructions
    Plan(PlanArgs),
    /// Apply an edit plan through a backend
    Edit(EditArgs),
    /// Assemble a dataset variant from originals and edited records
    Build(BuildArgs),
    /// Train the reference linear classifier
    Train(TrainArgs),
    /// Score a run (or external predictions) on bias-aligned and bias-conflict groups
    Eval(EvalArgs),
    /// Render BC/BA/Avg for several runs as a markdown table
    Report(ReportArgs),
    /// Serve the mock editor over stdio (for exec: backends and tests)
    #[command(hide = true)]
    MockEditor(MockEditorArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "both")]
    mode: String,
    #[arg(long, default_value_t = 3)]
    top_k: usize,
    /// Keep this many attributes per class as the detected set
    #[arg(long)]
    multi_k: Option<usize>,
    /// Exclude class names from candidates (always on; accepted for clarity)
    #[arg(long)]
    exclude_class_names: bool,
    /// Extra exclusion, CLASS=ATTR (repeatable)
    #[arg(long, value_name = "CLASS=ATTR")]
    exclude: Vec<String>,
    #[arg(long, default_value_t = 1)]
    min_support: u64,
    /// Worker threads for counting
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sampling {
    Uniform,
    #[value(name = "round_robin", alias = "round-robin")]
    RoundRobin,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "uniform")]
    target_sampling: Sampling,
    /// TOML file overriding instruction templates
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EditArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// mock-tag | mock-feature | exec:<command>
    #[arg(long)]
    backend: String,
    /// Bias report; mock backends use it to label edited records
    #[arg(long)]
    report: Option<PathBuf>,
    /// Synthetic ground truth; required by mock-feature
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Seed for mock-feature channel noise
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    jobs: Option<usize>,
    /// Records per exec: invocation
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    /// Per-batch timeout for exec: backends
    #[arg(long)]
    timeout_secs: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Original,
    Full,
    Sampled,
    BeOnly,
    TeOnly,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Original => Variant::Original,
            VariantArg::Full => Variant::Full,
            VariantArg::Sampled => Variant::Sampled,
            VariantArg::BeOnly => Variant::BeOnly,
            VariantArg::TeOnly => Variant::TeOnly,
        }
    }
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    edited: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    variant: VariantArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Bias report defining test groups; defaults to records' truth_alignment
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    #[value(name = "id_val")]
    IdVal,
    #[value(name = "best_bc", alias = "best_bc_test")]
    BestBc,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::IdVal => Protocol::IdVal,
            ProtocolArg::BestBc => Protocol::BestBcTest,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory written by `train`
    #[arg(long, conflicts_with = "predictions")]
    run: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "id_val")]
    protocol: ProtocolArg,
    /// JSONL of {"id", "predicted"} from an external classifier
    #[arg(long, requires = "test")]
    predictions: Option<PathBuf>,
    /// Test corpus (defaults to the run's)
    #[arg(long)]
    test: Option<PathBuf>,
    /// Bias report defining test groups; defaults to records' truth_alignment
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MockEditorArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Edit feature channels too (needs --truth)
    #[arg(long)]
    features: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Errors that map to exit code 3.
#[derive(Debug)]
struct BackendFailure(String);

impl std::fmt::Display for BackendFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BackendFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<BackendFailure>().is_some() {
            return 3;
        }
        if let Some(CoreError::Backend(_)) = cause.downcast_ref::<CoreError>() {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Detect(a) => detect(a),
        Command::Plan(a) => plan(a),
        Command::Edit(a) => edit(a),
        Command::Build(a) => build(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
        Command::MockEditor(a) => mock_editor(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn file_digest(path: &Path) -> Result<String> {
    let mut f = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut h = Sha256::new();
    io::copy(&mut f, &mut h)?;
    Ok(format!("{:x}", h.finalize()))
}

/// Reproducibility record for one subcommand invocation.
struct Manifest {
    command: &'static str,
    inputs: Map<String, Value>,
    outputs: Map<String, Value>,
    params: Map<String, Value>,
}

impl Manifest {
    fn new(command: &'static str) -> Self {
        Manifest {
            command,
            inputs: Map::new(),
            outputs: Map::new(),
            params: Map::new(),
        }
    }

    fn input(&mut self, name: &str, path: &Path) -> Result<&mut Self> {
        let d = file_digest(path)?;
        self.inputs
            .insert(name.into(), json!({"path": path, "sha256": d}));
        Ok(self)
    }

    fn output(&mut self, name: &str, path: &Path) -> Result<&mut Self> {
        let d = file_digest(path)?;
        self.outputs
            .insert(name.into(), json!({"path": path, "sha256": d}));
        Ok(self)
    }

    fn param(&mut self, name: &str, v: impl Into<Value>) -> &mut Self {
        self.params.insert(name.into(), v.into());
        self
    }

    fn write(&self, path: &Path) -> Result<()> {
        let v = json!({
            "tool": "debias",
            "version": VERSION,
            "command": self.command,
            "parallel": par::is_parallel(),
            "params": self.params,
            "inputs": self.inputs,
            "outputs": self.outputs,
        });
        write_json(path, &v)
    }
}

/// `out.jsonl` -> `out.manifest.json`; directories get `dir/manifest.json`.
fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        return out.join("manifest.json");
    }
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_report(path: &Path) -> Result<BiasReport> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    json_to_report(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn load(path: &Path) -> Result<Corpus> {
    load_corpus(path).with_context(|| format!("loading {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let out = generate(&cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut m = Manifest::new("synth");
    m.input("config", &a.config)?.param("seed", cfg.seed);
    for (name, c) in [
        ("train", &out.train),
        ("val", &out.val),
        ("test", &out.test),
    ] {
        let p = a.out.join(format!("{name}.jsonl"));
        write_corpus(c, &p)?;
        m.output(name, &p)?;
    }
    let truth = a.out.join("truth.json");
    write_bytes(&truth, &out.truth.to_json())?;
    m.output("truth", &truth)?;
    for w in &out.truth.warnings {
        eprintln!("warning: {w}");
    }
    m.write(&a.out.join("manifest.json"))
}

fn detect(a: DetectArgs) -> Result<()> {
    let mode: DetectMode = a.mode.parse()?;
    let mut exclusions = Exclusions::new();
    for e in &a.exclude {
        let (c, attr) = e
            .split_once('=')
            .ok_or_else(|| anyhow!("--exclude expects CLASS=ATTR, got {e:?}"))?;
        exclusions.add(c, attr);
    }
    let opts = DetectOptions {
        mode,
        exclusions,
        k: a.top_k,
        multi_k: a.multi_k,
        min_support: a.min_support,
        ..DetectOptions::default()
    };
    let path = &a.corpus;
    let report = par::with_threads(a.jobs, || -> Result<BiasReport> {
        let f = File::open(path).with_context(|| format!("reading {}", path.display()))?;
        let table = table_from_reader(f).with_context(|| format!("counting {}", path.display()))?;
        Ok(detect_with(&table, &opts)?)
    })?;
    write_bytes(&a.out, &report_to_json(&report))?;
    let mut m = Manifest::new("detect");
    m.input("corpus", &a.corpus)?
        .param("mode", mode.as_str())
        .param("top_k", a.top_k)
        .param("multi_k", a.multi_k)
        .param("min_support", a.min_support)
        .param("exclude", a.exclude.clone())
        .output("report", &a.out)?;
    m.write(&manifest_path(&a.out))
}

fn plan(a: PlanArgs) -> Result<()> {
    let corpus = load(&a.corpus)?;
    let report = load_report(&a.report)?;
    let templates = match &a.templates {
        Some(p) => Templates::load(p)?,
        None => Templates::default(),
    };
    let cfg = PlanConfig {
        seed: a.seed,
        target_sampling: match a.target_sampling {
            Sampling::Uniform => debias_core::editplan::TargetSampling::Uniform,
            Sampling::RoundRobin => debias_core::editplan::TargetSampling::RoundRobin,
        },
        templates,
    };
    let plan = plan_edits(&corpus, &report, &cfg)?;
    write_plan(&plan, &a.out)?;
    let mut m = Manifest::new("plan");
    m.input("corpus", &a.corpus)?.input("report", &a.report)?;
    if let Some(t) = &a.templates {
        m.input("templates", t)?;
    }
    m.param("seed", a.seed)
        .param("instructions", plan.len())
        .output("plan", &a.out)?;
    m.write(&manifest_path(&a.out))
}

/// class -> bias, from a report or (failing that) the plan's bias edits.
fn class_bias(
    report: Option<&Path>,
    plan: &[debias_core::editplan::EditInstruction],
) -> Result<BTreeMap<String, String>> {
    if let Some(p) = report {
        return Ok(load_report(p)?.bias_map());
    }
    Ok(plan
        .iter()
        .filter(|i| i.kind == EditKind::BiasEdit)
        .filter_map(|i| i.source_bias.clone().map(|b| (i.source_class.clone(), b)))
        .collect())
}

fn mock_tag(bias: BTreeMap<String, String>, truth: Option<&SynthTruth>) -> MockTagEditor {
    let ed = MockTagEditor::new(bias);
    match truth {
        Some(t) => ed.with_target_keywords(t.target_keywords()),
        None => ed,
    }
}

fn mock_feature(tags: MockTagEditor, truth: &SynthTruth, seed: u64) -> Result<MockFeatureEditor> {
    let fm = truth.feature_map.clone().ok_or_else(|| {
        anyhow!("truth has no feature map; corpus was generated without feature channels")
    })?;
    Ok(MockFeatureEditor {
        tags,
        feature_map: fm,
        noise_sigma: truth.noise_sigma,
        seed,
    })
}

fn failures_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.failures.jsonl"))
}

fn edit(a: EditArgs) -> Result<()> {
    let corpus = load(&a.corpus)?;
    let plan = load_plan(&a.plan).with_context(|| format!("loading {}", a.plan.display()))?;
    let truth = a.truth.as_deref().map(SynthTruth::load).transpose()?;
    let backend: Box<dyn EditorBackend> = match a.backend.as_str() {
        "mock-tag" => Box::new(mock_tag(
            class_bias(a.report.as_deref(), &plan)?,
            truth.as_ref(),
        )),
        "mock-feature" => {
            let truth = truth
                .as_ref()
                .ok_or_else(|| anyhow!("mock-feature needs --truth"))?;
            let tags = mock_tag(class_bias(a.report.as_deref(), &plan)?, Some(truth));
            Box::new(mock_feature(tags, truth, a.seed)?)
        }
        other => match other.strip_prefix("exec:") {
            Some(cmd) if !cmd.trim().is_empty() => {
                let mut b = ExternalBackend::new(cmd).with_batch_size(a.batch_size);
                if let Some(j) = a.jobs {
                    b = b.with_jobs(j);
                }
                if let Some(t) = a.timeout_secs {
                    b = b.with_timeout(Duration::from_secs(t));
                }
                Box::new(b)
            }
            _ => bail!(
                "unknown backend {other:?} (expected mock-tag, mock-feature or exec:<command>)"
            ),
        },
    };
    let res = par::with_threads(a.jobs, || apply_plan(&corpus, &plan, backend.as_ref()))?;
    write_records(&a.out, &res.edited)?;
    let fpath = failures_path(&a.out);
    let mut fbytes = Vec::new();
    for f in &res.failures {
        serde_json::to_writer(&mut fbytes, f)?;
        fbytes.push(b'\n');
    }
    write_bytes(&fpath, &fbytes)?;
    let mut m = Manifest::new("edit");
    m.input("plan", &a.plan)?.input("corpus", &a.corpus)?;
    if let Some(p) = &a.report {
        m.input("report", p)?;
    }
    if let Some(p) = &a.truth {
        m.input("truth", p)?;
    }
    m.param("backend", backend.name())
        .param("seed", a.seed)
        .param("edited", res.edited.len())
        .param("failed", res.failures.len())
        .output("edited", &a.out)?
        .output("failures", &fpath)?;
    m.write(&manifest_path(&a.out))?;
    report_failures(&res.failures, plan.len())
}

fn report_failures(failures: &[EditFailure], planned: usize) -> Result<()> {
    if failures.is_empty() {
        return Ok(());
    }
    for f in failures.iter().take(5) {
        eprintln!("edit failed: {} ({:?}): {}", f.source_id, f.kind, f.reason);
    }
    eprintln!("{} of {planned} edits failed", failures.len());
    if failures.len() == planned {
        return Err(BackendFailure(format!("all {planned} edits failed")).into());
    }
    Ok(())
}

fn build(a: BuildArgs) -> Result<()> {
    let corpus = load(&a.corpus)?;
    let edited = debias_core::corpus::read_records(&a.edited)
        .with_context(|| format!("loading {}", a.edited.display()))?;
    let variant: Variant = a.variant.into();
    let out = build_variant(&corpus, &edited, variant, a.seed)?;
    write_corpus(&out, &a.out)?;
    let counts: BTreeMap<&str, usize> = provenance_counts(&out)
        .into_iter()
        .map(|(p, n)| (p.as_str(), n))
        .collect();
    let mut m = Manifest::new("build");
    m.input("corpus", &a.corpus)?
        .input("edited", &a.edited)?
        .param("variant", variant.as_str())
        .param("seed", a.seed)
        .param("counts", json!(counts))
        .param("total", out.len())
        .output("dataset", &a.out)?;
    m.write(&manifest_path(&a.out))
}

fn test_alignment(
    test: &Corpus,
    report: Option<&Path>,
) -> Result<(std::collections::HashMap<String, Alignment>, &'static str)> {
    match report {
        Some(p) => Ok((alignment_map(test, Some(&load_report(p)?))?, "report")),
        None => Ok((alignment_map(test, None)?, "truth")),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let train = load(&a.train)?;
    let val = load(&a.val)?;
    let test = load(&a.test)?;
    let (alignment, source) = test_alignment(&test, a.report.as_deref())?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch: a.batch,
        seed: a.seed,
    };
    let run = train_linear(&train, &val, &test, &alignment, &cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let trace = a.out.join("trace.jsonl");
    let models = a.out.join("models.jsonl");
    write_trace(&trace, &run.trace)?;
    write_models(&models, &run.snapshots)?;
    let mut m = Manifest::new("train");
    m.input("train", &a.train)?
        .input("val", &a.val)?
        .input("test", &a.test)?;
    if let Some(p) = &a.report {
        m.input("report", p)?;
    }
    m.param("config", serde_json::to_value(cfg)?)
        .param("alignment", source)
        .param("train_records", train.len())
        .output("trace", &trace)?
        .output("models", &models)?;
    m.write(&a.out.join("manifest.json"))
}

fn manifest_input(run: &Path, name: &str) -> Result<(PathBuf, String)> {
    let p = run.join("manifest.json");
    let v: Value =
        serde_json::from_slice(&fs::read(&p).with_context(|| format!("reading {}", p.display()))?)?;
    let e = &v["inputs"][name];
    match (e["path"].as_str(), e["sha256"].as_str()) {
        (Some(path), Some(d)) => Ok((PathBuf::from(path), d.to_string())),
        _ => bail!("{} has no {name} input", p.display()),
    }
}

fn metrics_json(m: &SelectedMetrics) -> Value {
    json!({
        "protocol": m.protocol.as_str(),
        "epoch": m.epoch,
        "id_val_acc": m.id_val_acc,
        "bc_acc": m.test.bc_acc,
        "ba_acc": m.test.ba_acc,
        "avg": m.test.avg,
        "n_bc": m.test.n_bc,
        "n_ba": m.test.n_ba,
    })
}

fn eval(a: EvalArgs) -> Result<()> {
    par::with_threads(a.jobs, || eval_inner(&a))
}

fn eval_inner(a: &EvalArgs) -> Result<()> {
    let mut m = Manifest::new("eval");
    let value = if let Some(preds_path) = &a.predictions {
        let test_path = a.test.as_ref().expect("clap enforces --test");
        let test = load(test_path)?;
        let (alignment, source) = test_alignment(&test, a.report.as_deref())?;
        let preds = read_predictions(preds_path)?;
        let g = group_accuracy(&preds, &test, &alignment)?;
        m.input("predictions", preds_path)?
            .input("test", test_path)?;
        m.param("alignment", source);
        json!({
            "bc_acc": g.bc_acc,
            "ba_acc": g.ba_acc,
            "avg": g.avg,
            "n_bc": g.n_bc,
            "n_ba": g.n_ba,
        })
    } else {
        let run = a
            .run
            .as_ref()
            .ok_or_else(|| anyhow!("eval needs --run or --predictions"))?;
        let protocol: Protocol = a.protocol.into();
        let (test_path, test_digest) = match &a.test {
            Some(p) => (p.clone(), file_digest(p)?),
            None => manifest_input(run, "test")?,
        };
        if file_digest(&test_path)? != test_digest {
            bail!("{} changed since the run was trained", test_path.display());
        }
        let (val_path, val_digest) = manifest_input(run, "val")?;
        if file_digest(&val_path)? != val_digest {
            bail!("{} changed since the run was trained", val_path.display());
        }
        let trace = read_trace(run.join("trace.jsonl"))?;
        let (trace, source) = if a.report.is_some() || a.test.is_some() {
            let test = load(&test_path)?;
            let val = load(&val_path)?;
            let (alignment, source) = test_alignment(&test, a.report.as_deref())?;
            let models = read_models(run.join("models.jsonl"))?;
            let losses: Vec<f64> = trace.iter().map(|t| t.loss).collect();
            (retrace(&models, &losses, &val, &test, &alignment)?, source)
        } else {
            (trace, "run")
        };
        let sel = selected_metrics(&trace, protocol)?;
        m.input("trace", &run.join("trace.jsonl"))?
            .input("test", &test_path)?;
        if let Some(p) = &a.report {
            m.input("report", p)?;
        }
        m.param("protocol", protocol.as_str())
            .param("alignment", source);
        metrics_json(&sel)
    };
    write_json(&a.out, &value)?;
    m.output("metrics", &a.out)?;
    m.write(&manifest_path(&a.out))
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn report(a: ReportArgs) -> Result<()> {
    let mut md = String::from(
        "| Run | id_val BC | id_val BA | id_val Avg | best_bc BC | best_bc BA | best_bc Avg |\n\
         |-----|-----------|-----------|------------|------------|------------|-------------|\n",
    );
    let mut m = Manifest::new("report");
    let mut names = BTreeSet::new();
    for run in &a.runs {
        let tpath = run.join("trace.jsonl");
        let trace: Vec<CheckpointTrace> =
            read_trace(&tpath).with_context(|| format!("reading {}", tpath.display()))?;
        let id = selected_metrics(&trace, Protocol::IdVal)?;
        let bc = selected_metrics(&trace, Protocol::BestBcTest)?;
        let mut name = run
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| run.display().to_string());
        if !names.insert(name.clone()) {
            name = run.display().to_string();
        }
        md.push_str(&format!(
            "| {name} | {} | {} | {} | {} | {} | {} |\n",
            pct(id.test.bc_acc),
            pct(id.test.ba_acc),
            pct(id.test.avg),
            pct(bc.test.bc_acc),
            pct(bc.test.ba_acc),
            pct(bc.test.avg),
        ));
        m.input(&run.display().to_string(), &tpath)?;
    }
    md.push_str(
        "\nAccuracies in %. Avg is the unweighted mean of BC and BA. \
         best_bc reports BA at the epoch with the best BC.\n",
    );
    write_bytes(&a.out, md.as_bytes())?;
    m.output("table", &a.out)?;
    m.write(&manifest_path(&a.out))
}

fn mock_editor(a: MockEditorArgs) -> Result<()> {
    let report = load_report(&a.report)?;
    let truth = a.truth.as_deref().map(SynthTruth::load).transpose()?;
    let tags = mock_tag(report.bias_map(), truth.as_ref());
    let stdin = io::stdin().lock();
    let stdout = BufWriter::new(io::stdout().lock());
    if a.features {
        let truth = truth
            .as_ref()
            .ok_or_else(|| anyhow!("--features needs --truth"))?;
        let ed = mock_feature(tags, truth, a.seed)?;
        serve_stdio(&ed, stdin, stdout)?;
    } else {
        serve_stdio(&tags, stdin, stdout)?;
    }
    Ok(())
}
