//! Small hand-checkable corpora shared by tests, benches and docs.

use crate::corpus::{Corpus, SampleRecord};

/// Ten records, two classes of five.
///
/// | attr | c0 | c1 |
/// |------|----|----|
/// | a    | 4  | 1  |
/// | u    | 5  | 5  |
/// | r    | 1  | 0  |
/// | b    | 0  | 2  |
pub fn k10() -> Corpus {
    let rows: [(&str, &str, &[&str]); 10] = [
        ("s0", "c0", &["a", "u", "r"]),
        ("s1", "c0", &["a", "u"]),
        ("s2", "c0", &["a", "u"]),
        ("s3", "c0", &["a", "u"]),
        ("s4", "c0", &["u"]),
        ("s5", "c1", &["a", "u"]),
        ("s6", "c1", &["b", "u"]),
        ("s7", "c1", &["b", "u"]),
        ("s8", "c1", &["u"]),
        ("s9", "c1", &["u"]),
    ];
    Corpus::new(
        rows.iter()
            .map(|(id, c, tags)| SampleRecord::new(*id, *c, tags.iter()))
            .collect(),
    )
    .expect("k10 fixture is valid")
}
