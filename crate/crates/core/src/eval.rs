//! Exact-match span evaluation: a predicted span counts only when its type
//! and both boundaries equal a gold span in the same sentence.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use crate::corpus::{BioTag, LabeledSentence};
use crate::error::{Error, Result};

/// Entity mention over inclusive token indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub entity_type: String,
    pub start: usize,
    pub end: usize,
}

/// Maximal `B-X I-X*` runs as spans, sorted by start.
pub fn spans_from_bio<S: AsRef<str>>(tags: &[S]) -> Result<Vec<Span>> {
    let mut spans: Vec<Span> = Vec::new();
    let mut open: Option<Span> = None;
    for (i, tag) in tags.iter().enumerate() {
        let tag = tag.as_ref();
        let invalid = || Error::InvalidBio {
            position: i,
            tag: tag.to_string(),
        };
        match BioTag::parse(tag).ok_or_else(invalid)? {
            BioTag::Outside => spans.extend(open.take()),
            BioTag::Begin(ty) => {
                spans.extend(open.take());
                open = Some(Span {
                    entity_type: ty.to_string(),
                    start: i,
                    end: i,
                });
            }
            BioTag::Inside(ty) => match &mut open {
                Some(span) if span.entity_type == ty => span.end = i,
                _ => return Err(invalid()),
            },
        }
    }
    spans.extend(open);
    Ok(spans)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub per_type: BTreeMap<String, Counts>,
    pub micro: Counts,
}

/// Micro-averaged and per-type exact-match scores.
pub fn micro_f1<S: AsRef<str>>(gold: &[LabeledSentence], pred: &[Vec<S>]) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::CountMismatch {
            expected: gold.len(),
            got: pred.len(),
        });
    }
    let mut report = EvalReport::default();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.tags.len() != p.len() {
            return Err(Error::LengthMismatch {
                sentence: i,
                gold: g.tags.len(),
                pred: p.len(),
            });
        }
        let gold_spans: HashSet<Span> = spans_from_bio(&g.tags)?.into_iter().collect();
        let pred_spans: HashSet<Span> = spans_from_bio(p)?.into_iter().collect();
        for s in &gold_spans {
            let row = report.per_type.entry(s.entity_type.clone()).or_default();
            if pred_spans.contains(s) {
                row.tp += 1;
            } else {
                row.fn_ += 1;
            }
        }
        for s in pred_spans.difference(&gold_spans) {
            report.per_type.entry(s.entity_type.clone()).or_default().fp += 1;
        }
    }
    for c in report.per_type.values() {
        report.micro.add(*c);
    }
    Ok(report)
}

/// Aligned table: one row per type sorted by name, micro row last,
/// precision/recall/F1 as percentages with two decimals.
pub fn render_report(report: &EvalReport) -> String {
    let width = report
        .per_type
        .keys()
        .map(|k| k.chars().count())
        .chain(["micro".len(), "Type".len()])
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>6}  {:>6}  {:>6}  {:>9}  {:>7}  {:>7}",
        "Type", "TP", "FP", "FN", "Precision", "Recall", "F1"
    );
    let mut row = |name: &str, c: &Counts| {
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>9.2}  {:>7.2}  {:>7.2}",
            name,
            c.tp,
            c.fp,
            c.fn_,
            100.0 * c.precision(),
            100.0 * c.recall(),
            100.0 * c.f1()
        );
    };
    for (name, c) in &report.per_type {
        row(name, c);
    }
    row("micro", &report.micro);
    out
}

/// One `key=value` record per row.
pub fn render_report_kv(report: &EvalReport) -> String {
    let mut out = String::new();
    let rows = report.per_type.iter().map(|(k, c)| (k.as_str(), c)).chain([("micro", &report.micro)]);
    for (name, c) in rows {
        let _ = writeln!(
            out,
            "type={name} tp={} fp={} fn={} p={:.6} r={:.6} f1={:.6}",
            c.tp,
            c.fp,
            c.fn_,
            c.precision(),
            c.recall(),
            c.f1()
        );
    }
    out
}
