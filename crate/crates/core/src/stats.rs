//! Occurrence counting over (class, attribute) pairs and the
//! information-theoretic quantities built on the binary indicators
//! `Z_c = [y == c]` and `W_a = [a in tags]`.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Read;

use rustc_hash::{FxHashMap, FxHashSet};
use serde::Deserialize;

use crate::corpus::{fold_tag, Corpus, SampleRecord};
use crate::error::{Error, Result};
use crate::par;

/// Per-class presence counts `n_c(a)`, class sizes `N_c` and total `N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    classes: Vec<String>,
    class_sizes: Vec<u64>,
    total: u64,
    /// attribute -> count per class, indexed like `classes`
    counts: BTreeMap<String, Vec<u64>>,
}

impl ContingencyTable {
    /// Build from raw parts, checking every table invariant.
    pub fn from_parts(
        classes: Vec<String>,
        class_sizes: Vec<u64>,
        counts: BTreeMap<String, Vec<u64>>,
    ) -> Result<Self> {
        if classes.len() != class_sizes.len() {
            return Err(Error::invalid("classes and class_sizes differ in length"));
        }
        if classes.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if let Some((c, _)) = classes.iter().zip(&class_sizes).find(|(_, &n)| n == 0) {
            return Err(Error::EmptyClass(c.clone()));
        }
        let uniq: HashSet<&String> = classes.iter().collect();
        if uniq.len() != classes.len() {
            return Err(Error::invalid("duplicate class"));
        }
        for (a, row) in &counts {
            if row.len() != classes.len() {
                return Err(Error::invalid(format!("attribute {a:?}: wrong row length")));
            }
            if row.iter().zip(&class_sizes).any(|(n, nc)| n > nc) {
                return Err(Error::invalid(format!(
                    "attribute {a:?}: count exceeds class size"
                )));
            }
            if row.iter().all(|&n| n == 0) {
                return Err(Error::invalid(format!("attribute {a:?}: never observed")));
            }
        }
        let total = class_sizes.iter().sum();
        Ok(ContingencyTable {
            classes,
            class_sizes,
            total,
            counts,
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn attributes(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    pub fn num_attributes(&self) -> usize {
        self.counts.len()
    }

    pub fn class_index(&self, class: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == class)
            .ok_or_else(|| Error::UnknownClass(class.to_string()))
    }

    pub fn class_size(&self, class: &str) -> Result<u64> {
        Ok(self.class_sizes[self.class_index(class)?])
    }

    fn row(&self, attr: &str) -> Result<&[u64]> {
        self.counts
            .get(attr)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownAttribute(attr.to_string()))
    }

    /// `n_c(a)`; zero for attributes never seen.
    pub fn count(&self, class: &str, attr: &str) -> Result<u64> {
        let ci = self.class_index(class)?;
        Ok(self.counts.get(attr).map_or(0, |row| row[ci]))
    }

    /// `m(a) = sum_c n_c(a)`.
    pub fn attr_total(&self, attr: &str) -> Result<u64> {
        Ok(self.row(attr)?.iter().sum())
    }

    /// Attributes with `n_c(a) >= 1`, in lexicographic order.
    pub fn attributes_of(&self, class: &str) -> Result<Vec<&str>> {
        let ci = self.class_index(class)?;
        Ok(self
            .counts
            .iter()
            .filter(|(_, row)| row[ci] > 0)
            .map(|(a, _)| a.as_str())
            .collect())
    }

    /// Integer view of one (class, attribute) pair.
    pub fn cell(&self, class: &str, attr: &str) -> Result<Cell> {
        let ci = self.class_index(class)?;
        let row = self.row(attr)?;
        Ok(Cell {
            n_ca: row[ci],
            n_c: self.class_sizes[ci],
            m_a: row.iter().sum(),
            n: self.total,
        })
    }

    /// `P(Z_c = 1 | W_a = 1) = n_c(a) / m(a)`.
    pub fn cond_prob(&self, class: &str, attr: &str) -> Result<f64> {
        let c = self.cell(class, attr)?;
        Ok(c.n_ca as f64 / c.m_a as f64)
    }

    /// `P(Z_c = 1) = N_c / N`.
    pub fn marginal(&self, class: &str) -> Result<f64> {
        let ci = self.class_index(class)?;
        Ok(self.class_sizes[ci] as f64 / self.total as f64)
    }

    /// Strict dependence `P(Z_c=1|W_a=1) > P(Z_c=1)`, decided on integers.
    pub fn is_dependent(&self, class: &str, attr: &str) -> Result<bool> {
        Ok(self.cell(class, attr)?.is_dependent())
    }

    pub fn joint(&self, class: &str, attr: &str) -> Result<IndicatorJoint> {
        Ok(self.cell(class, attr)?.joint())
    }

    /// `MI(Z_c; W_a)` in bits.
    pub fn mutual_information(&self, class: &str, attr: &str) -> Result<f64> {
        self.mutual_information_in(class, attr, LogBase::Bits)
    }

    pub fn mutual_information_in(&self, class: &str, attr: &str, base: LogBase) -> Result<f64> {
        Ok(self.cell(class, attr)?.mutual_information(base))
    }
}

/// The four integers that determine every per-pair statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    /// `n_c(a)`
    pub n_ca: u64,
    /// `N_c`
    pub n_c: u64,
    /// `m(a)`
    pub m_a: u64,
    /// `N`
    pub n: u64,
}

impl Cell {
    pub fn is_dependent(&self) -> bool {
        (self.n_ca as u128) * (self.n as u128) > (self.n_c as u128) * (self.m_a as u128)
    }

    pub fn joint(&self) -> IndicatorJoint {
        let n = self.n as f64;
        let p11 = self.n_ca as f64 / n;
        let p01 = (self.m_a - self.n_ca) as f64 / n;
        let p10 = (self.n_c - self.n_ca) as f64 / n;
        IndicatorJoint {
            p11,
            p10,
            p01,
            p00: 1.0 - p11 - p01 - p10,
        }
    }

    /// Joint-sum mutual information computed from the integer counts.
    ///
    /// Each nonzero cell contributes `n_zw/N * log(n_zw * N / (n_z * n_w))`.
    /// Terms are summed in sorted order so that any permutation of the cells
    /// (e.g. swapping `Z_c` for `1 - Z_c`) yields the same bits.
    pub fn mutual_information(&self, base: LogBase) -> f64 {
        let Cell { n_ca, n_c, m_a, n } = *self;
        let cells = [
            (n_ca, n_c, m_a),
            (n_c - n_ca, n_c, n - m_a),
            (m_a - n_ca, n - n_c, m_a),
            (n + n_ca - n_c - m_a, n - n_c, n - m_a),
        ];
        let mut terms = [0.0f64; 4];
        for (t, &(cell, row, col)) in terms.iter_mut().zip(&cells) {
            if cell == 0 {
                continue;
            }
            let num = (cell as u128 * n as u128) as f64;
            let den = (row as u128 * col as u128) as f64;
            *t = (cell as f64 / n as f64) * base.log(num / den);
        }
        terms.sort_by(f64::total_cmp);
        let mi = terms.iter().sum::<f64>();
        if mi > 0.0 {
            mi
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogBase {
    Bits,
    Nats,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Bits => x.log2(),
            LogBase::Nats => x.ln(),
        }
    }
}

/// Joint distribution of `(Z_c, W_a)` over `{1,0}^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndicatorJoint {
    pub p11: f64,
    pub p10: f64,
    pub p01: f64,
    pub p00: f64,
}

impl IndicatorJoint {
    pub fn p_class(&self) -> f64 {
        self.p11 + self.p10
    }

    pub fn p_attr(&self) -> f64 {
        self.p11 + self.p01
    }

    /// `H(Z_c) - H(Z_c | W_a)` in bits.
    pub fn entropy_reduction(&self) -> f64 {
        let pw1 = self.p_attr();
        let pw0 = 1.0 - pw1;
        let mut h_cond = 0.0;
        if pw1 > 0.0 {
            h_cond += pw1 * binary_entropy(self.p11 / pw1);
        }
        if pw0 > 0.0 {
            h_cond += pw0 * binary_entropy(self.p10 / pw0);
        }
        binary_entropy(self.p_class()) - h_cond
    }
}

/// Entropy in bits of a Bernoulli(p) variable, with `0 log 0 = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    let h = |x: f64| if x > 0.0 { -x * x.log2() } else { 0.0 };
    h(p) + h(1.0 - p)
}

pub fn build_table(corpus: &Corpus) -> ContingencyTable {
    if par::is_parallel() {
        build_table_par(corpus)
    } else {
        build_table_seq(corpus)
    }
}

pub fn build_table_seq(corpus: &Corpus) -> ContingencyTable {
    count_corpus(corpus, false)
}

/// Parallel build: chunked partial count maps merged by addition.
#[cfg(feature = "parallel")]
pub fn build_table_par(corpus: &Corpus) -> ContingencyTable {
    count_corpus(corpus, true)
}

#[cfg(not(feature = "parallel"))]
pub fn build_table_par(corpus: &Corpus) -> ContingencyTable {
    count_corpus(corpus, false)
}

type Partial<'a> = FxHashMap<&'a str, Vec<u64>>;

fn record_folder<'a, 'b>(
    index: &'b HashMap<String, usize>,
    k: usize,
) -> impl Fn(Partial<'a>, &'a SampleRecord) -> Partial<'a> + Sync + Send + 'b {
    move |mut acc, rec| {
        let ci = index[rec.class_label.as_str()];
        for t in &rec.tags {
            acc.entry(t.as_str()).or_insert_with(|| vec![0; k])[ci] += 1;
        }
        acc
    }
}

fn merge<'a>(mut a: Partial<'a>, b: Partial<'a>) -> Partial<'a> {
    if a.len() < b.len() {
        return merge(b, a);
    }
    for (k, row) in b {
        let dst = a.entry(k).or_insert_with(|| vec![0; row.len()]);
        for (d, s) in dst.iter_mut().zip(row) {
            *d += s;
        }
    }
    a
}

fn count_corpus(corpus: &Corpus, parallel: bool) -> ContingencyTable {
    let classes = corpus.class_set().to_vec();
    let k = classes.len();
    let index: HashMap<String, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.clone(), i))
        .collect();
    let mut class_sizes = vec![0u64; k];
    for r in corpus.records() {
        class_sizes[index[&r.class_label]] += 1;
    }
    let fold = record_folder(&index, k);
    let partial = if parallel {
        par::fold_chunks(corpus.records(), 4096, FxHashMap::default, fold, merge)
    } else {
        corpus.records().iter().fold(FxHashMap::default(), &fold)
    };
    let counts = partial
        .into_iter()
        .map(|(a, row)| (a.to_string(), row))
        .collect();
    let total = class_sizes.iter().sum();
    ContingencyTable {
        classes,
        class_sizes,
        total,
        counts,
    }
}

/// Zero-copy view of a line; fails on strings with escapes.
#[derive(Deserialize)]
struct BorrowedRecord<'a> {
    id: &'a str,
    class: &'a str,
    tags: Vec<&'a str>,
    #[serde(default)]
    features: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct OwnedRecord {
    id: String,
    class: String,
    tags: Vec<String>,
    #[serde(default)]
    features: Option<Vec<f64>>,
}

struct LightRow<'a> {
    id: Cow<'a, str>,
    class: Cow<'a, str>,
    tags: Vec<Cow<'a, str>>,
    dim: Option<usize>,
}

/// Bytes read per block; each block is split at its last newline.
const STREAM_BLOCK: usize = 8 << 20;

/// Count a JSONL corpus without materializing it.
///
/// Applies the same validation as [`crate::corpus::load_corpus`] for the
/// fields counting depends on (ids, class labels, tags, feature
/// dimensionality). Each block of lines is parsed in parallel; counts are
/// merged by integer addition, so the result does not depend on thread count.
pub fn table_from_reader(reader: impl Read) -> Result<ContingencyTable> {
    table_from_blocks(reader, STREAM_BLOCK)
}

fn table_from_blocks(mut reader: impl Read, block: usize) -> Result<ContingencyTable> {
    let mut acc = StreamCounts::default();
    let mut buf: Vec<u8> = Vec::with_capacity(block + 4096);
    let mut first_line = 1usize;
    let mut eof = false;
    while !eof {
        let start = buf.len();
        buf.resize(start + block, 0);
        let mut filled = start;
        while filled < buf.len() {
            match reader.read(&mut buf[filled..]) {
                Ok(0) => {
                    eof = true;
                    break;
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => {
                    return Err(Error::Parse {
                        line: first_line,
                        message: e.to_string(),
                    })
                }
            }
        }
        buf.truncate(filled);
        let cut = if eof {
            buf.len()
        } else {
            match buf.iter().rposition(|&b| b == b'\n') {
                Some(i) => i + 1,
                // A single line longer than the block: keep reading.
                None => continue,
            }
        };
        first_line = acc.block(&buf[..cut], first_line)?;
        buf.drain(..cut);
    }
    acc.finish()
}

#[derive(Default)]
struct StreamCounts {
    ids: FxHashSet<Box<str>>,
    classes: Vec<String>,
    class_index: HashMap<String, usize>,
    class_sizes: Vec<u64>,
    counts: FxHashMap<String, Vec<u64>>,
    dim: Option<Option<usize>>,
}

impl StreamCounts {
    /// Count one block of whole lines; returns the next line number.
    fn block(&mut self, block: &[u8], first_line: usize) -> Result<usize> {
        let mut lines: Vec<(usize, &[u8])> = Vec::new();
        let mut line_no = first_line;
        for line in block.split(|&b| b == b'\n') {
            if !line.iter().all(u8::is_ascii_whitespace) {
                lines.push((line_no, line));
            }
            line_no += 1;
        }
        // `split` yields an empty piece after a trailing newline.
        if block.last() == Some(&b'\n') {
            line_no -= 1;
        }
        let parsed = par::map_indexed(&lines, |_, (ln, line)| parse_light(*ln, line));
        let mut rows: Vec<(usize, Vec<Cow<'_, str>>)> = Vec::with_capacity(parsed.len());
        for p in parsed {
            let row = p?;
            match self.dim {
                None => self.dim = Some(row.dim),
                Some(prev) if prev != row.dim => {
                    return Err(Error::FeatureDim {
                        id: row.id.into_owned(),
                        expected: prev.unwrap_or(0),
                        found: row.dim.unwrap_or(0),
                    })
                }
                _ => {}
            }
            let ci = match self.class_index.get(row.class.as_ref()) {
                Some(&i) => i,
                None => {
                    let c = row.class.into_owned();
                    self.class_index.insert(c.clone(), self.classes.len());
                    self.classes.push(c);
                    self.class_sizes.push(0);
                    self.classes.len() - 1
                }
            };
            self.class_sizes[ci] += 1;
            if self.ids.contains(row.id.as_ref()) {
                return Err(Error::DuplicateId(row.id.into_owned()));
            }
            self.ids.insert(row.id.into());
            rows.push((ci, row.tags));
        }
        let k = self.classes.len();
        let partial = par::fold_chunks(&rows, 4096, FxHashMap::default, cow_row_folder(k), merge);
        for (a, row) in partial {
            let dst = match self.counts.get_mut(a) {
                Some(d) => d,
                None => self.counts.entry(a.to_string()).or_default(),
            };
            dst.resize(k, 0);
            for (d, s) in dst.iter_mut().zip(row) {
                *d += s;
            }
        }
        Ok(line_no)
    }

    fn finish(self) -> Result<ContingencyTable> {
        if self.classes.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let k = self.classes.len();
        let counts = self
            .counts
            .into_iter()
            .map(|(a, mut row)| {
                row.resize(k, 0);
                (a, row)
            })
            .collect();
        let total = self.class_sizes.iter().sum();
        Ok(ContingencyTable {
            classes: self.classes,
            class_sizes: self.class_sizes,
            total,
            counts,
        })
    }
}

fn cow_row_folder<'a, 'b: 'a>(
    k: usize,
) -> impl Fn(Partial<'a>, &'a (usize, Vec<Cow<'b, str>>)) -> Partial<'a> + Sync + Send {
    move |mut acc, (ci, tags)| {
        for t in tags {
            acc.entry(t.as_ref()).or_insert_with(|| vec![0; k])[*ci] += 1;
        }
        acc
    }
}

/// [`fold_tag`] without allocating for tags that are already folded ASCII.
fn fold_cow(tag: Cow<'_, str>) -> Cow<'_, str> {
    if tag.bytes().all(|b| b.is_ascii() && !b.is_ascii_uppercase()) {
        tag
    } else {
        Cow::Owned(fold_tag(&tag))
    }
}

fn parse_light(line_no: usize, line: &[u8]) -> Result<LightRow<'_>> {
    let err = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let rec = match serde_json::from_slice::<BorrowedRecord<'_>>(line) {
        Ok(r) => LightRow {
            id: Cow::Borrowed(r.id),
            class: Cow::Borrowed(r.class),
            tags: r.tags.into_iter().map(Cow::Borrowed).collect(),
            dim: r.features.as_ref().map(Vec::len),
        },
        Err(_) => {
            let r: OwnedRecord = serde_json::from_slice(line).map_err(|e| err(e.to_string()))?;
            LightRow {
                id: Cow::Owned(r.id),
                class: Cow::Owned(r.class),
                tags: r.tags.into_iter().map(Cow::Owned).collect(),
                dim: r.features.as_ref().map(Vec::len),
            }
        }
    };
    if rec.id.is_empty() {
        return Err(err("empty id".into()));
    }
    if rec.class.is_empty() {
        return Err(err(format!("record {:?}: empty class label", rec.id)));
    }
    let mut tags: Vec<Cow<'_, str>> = rec.tags.into_iter().map(fold_cow).collect();
    if tags.iter().any(|t| t.is_empty()) {
        return Err(err(format!("record {:?}: empty tag", rec.id)));
    }
    tags.sort_unstable();
    tags.dedup();
    Ok(LightRow { tags, ..rec })
}
