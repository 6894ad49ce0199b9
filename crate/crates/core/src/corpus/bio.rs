//! Two-column `token<TAB>tag` files and BIO repair.

use crate::error::{Error, Result};

use super::{LabeledSentence, Sentence};

/// Shape of a single BIO tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BioTag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

impl<'a> BioTag<'a> {
    pub fn parse(tag: &'a str) -> Option<Self> {
        if tag == "O" {
            return Some(BioTag::Outside);
        }
        let (head, ty) = tag.split_once('-')?;
        if ty.is_empty() {
            return None;
        }
        match head {
            "B" => Some(BioTag::Begin(ty)),
            "I" => Some(BioTag::Inside(ty)),
            _ => None,
        }
    }

    pub fn entity_type(&self) -> Option<&'a str> {
        match *self {
            BioTag::Outside => None,
            BioTag::Begin(t) | BioTag::Inside(t) => Some(t),
        }
    }
}

/// Result of parsing a BIO file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParsedBio {
    pub sentences: Vec<LabeledSentence>,
    /// Number of `I-X` tags rewritten to `B-X`.
    pub repaired: usize,
}

/// Rewrites every `I-X` that does not continue an `X` entity to `B-X`.
pub fn bio_normalize<S: AsRef<str>>(tags: &[S]) -> Vec<String> {
    bio_normalize_counted(tags).0
}

/// [`bio_normalize`] plus the number of rewritten tags. Tags of unknown
/// shape pass through and break any running entity.
pub fn bio_normalize_counted<S: AsRef<str>>(tags: &[S]) -> (Vec<String>, usize) {
    let mut out = Vec::with_capacity(tags.len());
    let mut repaired = 0;
    let mut open: Option<&str> = None;
    for tag in tags {
        let tag = tag.as_ref();
        match BioTag::parse(tag) {
            Some(BioTag::Inside(ty)) if open != Some(ty) => {
                out.push(format!("B-{ty}"));
                repaired += 1;
                open = Some(ty);
            }
            Some(t) => {
                out.push(tag.to_string());
                open = t.entity_type();
            }
            None => {
                out.push(tag.to_string());
                open = None;
            }
        }
    }
    (out, repaired)
}

/// Parses `token<TAB>tag` lines with blank-line sentence breaks and
/// normalizes the tags.
pub fn parse_bio_file(bytes: &[u8]) -> Result<ParsedBio> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Utf8 { offset: e.valid_up_to() })?;
    let mut parsed = ParsedBio::default();
    let mut words: Vec<&str> = Vec::new();
    let mut tags: Vec<&str> = Vec::new();

    let flush = |words: &mut Vec<&str>, tags: &mut Vec<&str>, parsed: &mut ParsedBio| {
        if words.is_empty() {
            return;
        }
        let (norm, repaired) = bio_normalize_counted(tags);
        parsed.repaired += repaired;
        parsed.sentences.push(LabeledSentence {
            sentence: Sentence::from_words(words),
            tags: norm,
        });
        words.clear();
        tags.clear();
    };

    for (idx, line) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            flush(&mut words, &mut tags, &mut parsed);
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(word), Some(tag), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Malformed {
                line: line_no,
                message: "expected `token<TAB>tag`".into(),
            });
        };
        if word.is_empty() || word.chars().any(char::is_whitespace) {
            return Err(Error::Malformed {
                line: line_no,
                message: format!("token {word:?} is empty or contains whitespace"),
            });
        }
        if BioTag::parse(tag).is_none() {
            return Err(Error::UnknownTag {
                line: line_no,
                tag: tag.to_string(),
            });
        }
        words.push(word);
        tags.push(tag);
    }
    flush(&mut words, &mut tags, &mut parsed);
    Ok(parsed)
}

/// Serializes sentences back to the two-column format.
pub fn write_bio(sentences: &[LabeledSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for (w, t) in s.sentence.words().zip(&s.tags) {
            out.push_str(w);
            out.push('\t');
            out.push_str(t);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
