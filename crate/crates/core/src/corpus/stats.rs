use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::eval::spans_from_bio;

use super::{bio_normalize, LabeledSentence};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub sentences: usize,
    pub tokens: usize,
    pub entity_types: usize,
    pub per_type: BTreeMap<String, usize>,
}

/// Sentence, token and entity-span counts. Tags are normalized first so the
/// span count is defined for any well-shaped input.
pub fn corpus_stats(dataset: &[LabeledSentence]) -> CorpusStats {
    let mut stats = CorpusStats::default();
    for s in dataset {
        stats.sentences += 1;
        stats.tokens += s.sentence.len();
        let tags = bio_normalize(&s.tags);
        for span in spans_from_bio(&tags).unwrap_or_default() {
            *stats.per_type.entry(span.entity_type).or_default() += 1;
        }
    }
    stats.entity_types = stats.per_type.len();
    stats
}

fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn table(title: &str, header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .map(|r| r[c].chars().count())
                .chain([header[c].chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = format!("{title}\n");
    let line = |cells: &[String]| {
        let mut l = String::new();
        for (c, cell) in cells.iter().enumerate() {
            if c == 0 {
                let _ = write!(l, "{:<w$}", cell, w = widths[0]);
            } else {
                let _ = write!(l, "  {:>w$}", cell, w = widths[c]);
            }
        }
        l.trim_end().to_string()
    };
    out.push_str(&line(header));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

/// Sentence, token and entity-type tables for one dataset across its
/// splits, followed by per-type span counts.
pub fn render_stats_tables(name: &str, splits: &[(&str, &CorpusStats)]) -> String {
    let mut header = vec!["Dataset Name".to_string()];
    header.extend(splits.iter().map(|(s, _)| s.to_string()));
    let row = |f: &dyn Fn(&CorpusStats) -> usize| {
        let mut r = vec![name.to_string()];
        r.extend(splits.iter().map(|(_, st)| thousands(f(st))));
        vec![r]
    };
    let all_types: BTreeSet<&String> = splits.iter().flat_map(|(_, s)| s.per_type.keys()).collect();

    let mut out = table("Number of sentences", &header, &row(&|s| s.sentences));
    out.push('\n');
    out.push_str(&table("Number of tokens", &header, &row(&|s| s.tokens)));
    out.push('\n');
    out.push_str(&table(
        "Number of entity types",
        &["Dataset Name".to_string(), "# of Entity Types".to_string()],
        &[vec![name.to_string(), all_types.len().to_string()]],
    ));
    if !all_types.is_empty() {
        out.push('\n');
        let mut h = vec!["Entity Type".to_string()];
        h.extend(splits.iter().map(|(s, _)| s.to_string()));
        let rows: Vec<Vec<String>> = all_types
            .iter()
            .map(|t| {
                let mut r = vec![t.to_string()];
                r.extend(splits.iter().map(|(_, s)| thousands(s.per_type.get(*t).copied().unwrap_or(0))));
                r
            })
            .collect();
        out.push_str(&table("Number of entities", &h, &rows));
    }
    out
}

/// Machine-readable companion of [`render_stats_tables`].
pub fn render_stats_kv(name: &str, splits: &[(&str, &CorpusStats)]) -> String {
    let mut out = String::new();
    for (split, s) in splits {
        let _ = writeln!(
            out,
            "dataset={name} split={split} sentences={} tokens={} entity_types={}",
            s.sentences, s.tokens, s.entity_types
        );
        for (t, n) in &s.per_type {
            let _ = writeln!(out, "dataset={name} split={split} type={t} entities={n}");
        }
    }
    out
}
