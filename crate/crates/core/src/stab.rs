//! Per-class bias-attribute detection.
//!
//! For each class `c` an attribute is *eligible* when it appears in `c`,
//! is not excluded, and (for the modes that use it) passes the strict
//! dependence test `n_c(a) N > N_c m(a)`. The detected bias is the eligible
//! attribute with the highest mutual information `MI(Z_c; W_a)`.
//!
//! Two ablation modes are provided: `dependence_only` ranks dependent
//! attributes by `P(Z_c=1|W_a=1)` and `mi_only` ranks every attribute by MI
//! without the dependence filter.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde_json::{json, Map, Value};

use crate::corpus::fold_tag;
use crate::error::{Error, Result};
use crate::par;
use crate::stats::{Cell, ContingencyTable, LogBase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DetectMode {
    DependenceOnly,
    MiOnly,
    Both,
}

impl DetectMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectMode::DependenceOnly => "dependence_only",
            DetectMode::MiOnly => "mi_only",
            DetectMode::Both => "both",
        }
    }

    fn filters_dependence(self) -> bool {
        !matches!(self, DetectMode::MiOnly)
    }
}

impl fmt::Display for DetectMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dependence_only" => Ok(DetectMode::DependenceOnly),
            "mi_only" => Ok(DetectMode::MiOnly),
            "both" => Ok(DetectMode::Both),
            other => Err(Error::Schema(format!("unknown detection mode {other:?}"))),
        }
    }
}

/// Per-class attribute exclusions.
///
/// The class label itself (folded) is always excluded; callers may add
/// synonyms, e.g. `young -> youthful`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Exclusions {
    extra: BTreeMap<String, BTreeSet<String>>,
}

impl Exclusions {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, class: impl Into<String>, attr: &str) -> &mut Self {
        self.extra
            .entry(class.into())
            .or_default()
            .insert(fold_tag(attr));
        self
    }

    pub fn with(mut self, class: impl Into<String>, attr: &str) -> Self {
        self.add(class, attr);
        self
    }

    /// Every (class, attribute) pair excluded for `classes`, class-label
    /// entries first.
    fn resolve(&self, classes: &[String]) -> Result<Vec<Exclusion>> {
        if let Some(c) = self.extra.keys().find(|c| !classes.contains(c)) {
            return Err(Error::UnknownClass(c.clone()));
        }
        let mut out = Vec::new();
        for c in classes {
            let mut attrs = BTreeSet::new();
            attrs.insert(fold_tag(c));
            if let Some(extra) = self.extra.get(c) {
                attrs.extend(extra.iter().cloned());
            }
            out.extend(attrs.into_iter().map(|attr| Exclusion {
                class: c.clone(),
                attr,
            }));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exclusion {
    pub class: String,
    pub attr: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasCandidate {
    pub attribute: String,
    pub count: u64,
    pub p_cond: f64,
    pub p_marg: f64,
    pub dependent: bool,
    pub mi_bits: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassBias {
    pub class: String,
    /// Detected bias attributes, best first. Empty when nothing is eligible.
    pub chosen: Vec<String>,
    pub ranked: Vec<BiasCandidate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport {
    pub mode: DetectMode,
    pub k: usize,
    /// `Some(k)` for multi-bias reports, where `chosen` lists the top `k`.
    pub multi_k: Option<usize>,
    pub min_support: u64,
    pub exclusions: Vec<Exclusion>,
    pub classes: Vec<ClassBias>,
}

impl BiasReport {
    pub fn class(&self, class: &str) -> Option<&ClassBias> {
        self.classes.iter().find(|c| c.class == class)
    }

    /// Top-1 detected bias for `class`.
    pub fn chosen(&self, class: &str) -> Option<&str> {
        self.class(class)
            .and_then(|c| c.chosen.first())
            .map(String::as_str)
    }

    /// Class -> top-1 bias, for classes with a detection. This is the set B.
    pub fn bias_map(&self) -> BTreeMap<String, String> {
        self.classes
            .iter()
            .filter_map(|c| c.chosen.first().map(|b| (c.class.clone(), b.clone())))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct DetectOptions {
    pub mode: DetectMode,
    pub exclusions: Exclusions,
    /// Length of each class's ranked list.
    pub k: usize,
    pub multi_k: Option<usize>,
    /// Attributes with `m(a) < min_support` are dropped before ranking.
    pub min_support: u64,
    /// Log base used for ranking; reported `mi_bits` are always bits.
    pub log_base: LogBase,
}

impl Default for DetectOptions {
    fn default() -> Self {
        DetectOptions {
            mode: DetectMode::Both,
            exclusions: Exclusions::new(),
            k: 3,
            multi_k: None,
            min_support: 1,
            log_base: LogBase::Bits,
        }
    }
}

pub fn detect(
    table: &ContingencyTable,
    mode: DetectMode,
    exclusions: &Exclusions,
    k: usize,
) -> Result<BiasReport> {
    detect_with(
        table,
        &DetectOptions {
            mode,
            exclusions: exclusions.clone(),
            k,
            ..DetectOptions::default()
        },
    )
}

/// Like [`detect`] in `both` mode, but keeps the top `k_bias` eligible
/// attributes per class as the detected set.
pub fn detect_multi(
    table: &ContingencyTable,
    exclusions: &Exclusions,
    k_bias: usize,
) -> Result<BiasReport> {
    if k_bias < 2 {
        return Err(Error::invalid("multi-bias detection needs k_bias >= 2"));
    }
    detect_with(
        table,
        &DetectOptions {
            mode: DetectMode::Both,
            exclusions: exclusions.clone(),
            k: k_bias,
            multi_k: Some(k_bias),
            ..DetectOptions::default()
        },
    )
}

struct Scored {
    cand: BiasCandidate,
    cell: Cell,
    score: f64,
}

pub fn detect_with(table: &ContingencyTable, opts: &DetectOptions) -> Result<BiasReport> {
    if opts.k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if matches!(opts.multi_k, Some(m) if m < 1) {
        return Err(Error::invalid("multi_k must be at least 1"));
    }
    if table.num_attributes() == 0 {
        return Err(Error::invalid("contingency table has no attributes"));
    }
    let exclusions = opts.exclusions.resolve(table.classes())?;
    let take = opts.k.max(opts.multi_k.unwrap_or(1));
    let n_chosen = opts.multi_k.unwrap_or(1);

    let per_class = par::map_indexed(table.classes(), |_, class| {
        rank_class(table, class, opts, &exclusions, take, n_chosen)
    });
    let classes = per_class.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(BiasReport {
        mode: opts.mode,
        k: opts.k,
        multi_k: opts.multi_k,
        min_support: opts.min_support,
        exclusions,
        classes,
    })
}

fn rank_class(
    table: &ContingencyTable,
    class: &str,
    opts: &DetectOptions,
    exclusions: &[Exclusion],
    take: usize,
    n_chosen: usize,
) -> Result<ClassBias> {
    let excluded: BTreeSet<&str> = exclusions
        .iter()
        .filter(|e| e.class == class)
        .map(|e| e.attr.as_str())
        .collect();
    let p_marg = table.marginal(class)?;
    let mut scored = Vec::new();
    for attr in table.attributes_of(class)? {
        if excluded.contains(attr) {
            continue;
        }
        let cell = table.cell(class, attr)?;
        if cell.m_a < opts.min_support {
            continue;
        }
        let dependent = cell.is_dependent();
        if opts.mode.filters_dependence() && !dependent {
            continue;
        }
        let p_cond = cell.n_ca as f64 / cell.m_a as f64;
        let score = match opts.mode {
            DetectMode::DependenceOnly => p_cond,
            _ => cell.mutual_information(opts.log_base),
        };
        let mi_bits = match opts.log_base {
            LogBase::Bits if opts.mode != DetectMode::DependenceOnly => score,
            _ => cell.mutual_information(LogBase::Bits),
        };
        scored.push(Scored {
            cand: BiasCandidate {
                attribute: attr.to_string(),
                count: cell.n_ca,
                p_cond,
                p_marg,
                dependent,
                mi_bits,
            },
            cell,
            score,
        });
    }
    let mode = opts.mode;
    scored.sort_by(|a, b| compare(mode, a, b));
    scored.truncate(take);
    let chosen = scored
        .iter()
        .take(n_chosen)
        .map(|s| s.cand.attribute.clone())
        .collect();
    Ok(ClassBias {
        class: class.to_string(),
        chosen,
        ranked: scored.into_iter().map(|s| s.cand).collect(),
    })
}

/// Score descending, then count descending, then attribute ascending.
fn compare(mode: DetectMode, a: &Scored, b: &Scored) -> Ordering {
    let by_score = match mode {
        // n_a/m_a vs n_b/m_b without rounding
        DetectMode::DependenceOnly => {
            let lhs = b.cell.n_ca as u128 * a.cell.m_a as u128;
            let rhs = a.cell.n_ca as u128 * b.cell.m_a as u128;
            lhs.cmp(&rhs)
        }
        _ => b.score.total_cmp(&a.score),
    };
    by_score
        .then(b.cand.count.cmp(&a.cand.count))
        .then_with(|| a.cand.attribute.cmp(&b.cand.attribute))
}

/// Canonical JSON for a report (pretty-printed, trailing newline).
pub fn report_to_json(report: &BiasReport) -> Vec<u8> {
    let mut classes = Map::new();
    for c in &report.classes {
        let chosen = match report.multi_k {
            Some(_) => json!(c.chosen),
            None => c.chosen.first().map_or(Value::Null, |s| json!(s)),
        };
        let ranked: Vec<Value> = c
            .ranked
            .iter()
            .map(|r| {
                json!({
                    "attr": r.attribute,
                    "count": r.count,
                    "p_cond": r.p_cond,
                    "p_marg": r.p_marg,
                    "dependent": r.dependent,
                    "mi_bits": r.mi_bits,
                })
            })
            .collect();
        classes.insert(
            c.class.clone(),
            json!({ "chosen": chosen, "ranked": ranked }),
        );
    }
    let exclusions: Vec<Value> = report
        .exclusions
        .iter()
        .map(|e| json!({ "class": e.class, "attr": e.attr }))
        .collect();
    let v = json!({
        "mode": report.mode.as_str(),
        "k": report.k,
        "multi_k": report.multi_k,
        "min_support": report.min_support,
        "exclusions": exclusions,
        "classes": classes,
    });
    let mut out = serde_json::to_vec_pretty(&v).expect("report serialization cannot fail");
    out.push(b'\n');
    out
}

fn schema(msg: impl Into<String>) -> Error {
    Error::Schema(msg.into())
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| schema(format!("missing {key:?}")))
}

fn as_str<'a>(v: &'a Value, what: &str) -> Result<&'a str> {
    v.as_str()
        .ok_or_else(|| schema(format!("{what} must be a string")))
}

fn as_u64(v: &Value, what: &str) -> Result<u64> {
    v.as_u64()
        .ok_or_else(|| schema(format!("{what} must be a non-negative integer")))
}

fn as_f64(v: &Value, what: &str) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| schema(format!("{what} must be a number")))
}

fn as_obj<'a>(v: &'a Value, what: &str) -> Result<&'a Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| schema(format!("{what} must be an object")))
}

fn as_arr<'a>(v: &'a Value, what: &str) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| schema(format!("{what} must be an array")))
}

pub fn json_to_report(bytes: &[u8]) -> Result<BiasReport> {
    let v: Value = serde_json::from_slice(bytes).map_err(|e| schema(e.to_string()))?;
    let top = as_obj(&v, "report")?;
    let mode: DetectMode = as_str(field(top, "mode")?, "mode")?.parse()?;
    let k = top.get("k").map_or(Ok(1), |v| as_u64(v, "k"))? as usize;
    let multi_k = match top.get("multi_k") {
        None | Some(Value::Null) => None,
        Some(v) => Some(as_u64(v, "multi_k")? as usize),
    };
    let min_support = top
        .get("min_support")
        .map_or(Ok(1), |v| as_u64(v, "min_support"))?;
    let exclusions = as_arr(field(top, "exclusions")?, "exclusions")?
        .iter()
        .map(|e| {
            let e = as_obj(e, "exclusion")?;
            Ok(Exclusion {
                class: as_str(field(e, "class")?, "exclusion class")?.to_string(),
                attr: as_str(field(e, "attr")?, "exclusion attr")?.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut classes = Vec::new();
    for (class, entry) in as_obj(field(top, "classes")?, "classes")? {
        let entry = as_obj(entry, "class entry")?;
        let chosen = match (field(entry, "chosen")?, multi_k) {
            (Value::Null, None) => vec![],
            (Value::String(s), None) => vec![s.clone()],
            (Value::Array(items), Some(_)) => items
                .iter()
                .map(|s| as_str(s, "chosen").map(str::to_string))
                .collect::<Result<_>>()?,
            _ => return Err(schema(format!("class {class:?}: malformed chosen"))),
        };
        let ranked = as_arr(field(entry, "ranked")?, "ranked")?
            .iter()
            .map(|r| {
                let r = as_obj(r, "candidate")?;
                let dependent = field(r, "dependent")?
                    .as_bool()
                    .ok_or_else(|| schema("dependent must be a boolean"))?;
                Ok(BiasCandidate {
                    attribute: as_str(field(r, "attr")?, "attr")?.to_string(),
                    count: as_u64(field(r, "count")?, "count")?,
                    p_cond: as_f64(field(r, "p_cond")?, "p_cond")?,
                    p_marg: as_f64(field(r, "p_marg")?, "p_marg")?,
                    dependent,
                    mi_bits: as_f64(field(r, "mi_bits")?, "mi_bits")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        classes.push(ClassBias {
            class: class.clone(),
            chosen,
            ranked,
        });
    }
    Ok(BiasReport {
        mode,
        k,
        multi_k,
        min_support,
        exclusions,
        classes,
    })
}
