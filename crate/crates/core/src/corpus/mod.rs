//! Text and BIO-labeled corpus handling.

mod bio;
mod stats;
mod tokenize;
pub(crate) mod vocab;

pub use bio::{bio_normalize, bio_normalize_counted, parse_bio_file, write_bio, BioTag, ParsedBio};
pub use stats::{corpus_stats, render_stats_kv, render_stats_tables, CorpusStats};
pub use tokenize::{tokenize, tokenize_bytes};
pub use vocab::{build_char_vocab, CharVocabulary, TagSet};

use crate::error::{Error, Result};

/// A whitespace-free token with inclusive code-point offsets into its
/// sentence's `raw` text.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Token {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub raw: String,
}

impl Sentence {
    /// Builds a sentence whose raw text is the words joined by single spaces.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        let mut raw = String::new();
        let mut tokens = Vec::with_capacity(words.len());
        let mut pos = 0;
        for (i, w) in words.iter().enumerate() {
            let w = w.as_ref();
            if i > 0 {
                raw.push(' ');
                pos += 1;
            }
            let n = w.chars().count();
            tokens.push(Token {
                text: w.to_string(),
                char_start: pos,
                char_end: pos + n.saturating_sub(1),
            });
            raw.push_str(w);
            pos += n;
        }
        Sentence { tokens, raw }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }

    /// Tokens joined by single spaces, the form character models consume.
    pub fn rendered(&self) -> String {
        self.words().collect::<Vec<_>>().join(" ")
    }

    /// Checks the token/offset invariants against `raw`.
    pub fn validate(&self) -> Result<()> {
        let chars: Vec<char> = self.raw.chars().collect();
        let mut next_free = 0;
        for (i, t) in self.tokens.iter().enumerate() {
            let bad = |msg: &str| Error::InvalidArgument(format!("token {i} ({:?}): {msg}", t.text));
            if t.text.is_empty() || t.text.chars().any(char::is_whitespace) {
                return Err(bad("empty or contains whitespace"));
            }
            if t.char_start > t.char_end || t.char_start < next_free || t.char_end >= chars.len() {
                return Err(bad("span out of order or out of range"));
            }
            let slice: String = chars[t.char_start..=t.char_end].iter().collect();
            if slice != t.text {
                return Err(bad("span does not slice raw text"));
            }
            next_free = t.char_end + 1;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSentence {
    pub sentence: Sentence,
    pub tags: Vec<String>,
}

impl LabeledSentence {
    pub fn new(sentence: Sentence, tags: Vec<String>) -> Result<Self> {
        if sentence.len() != tags.len() {
            return Err(Error::InvalidArgument(format!(
                "{} tokens but {} tags",
                sentence.len(),
                tags.len()
            )));
        }
        Ok(LabeledSentence { sentence, tags })
    }

    pub fn from_pairs<S: AsRef<str>, U: AsRef<str>>(pairs: &[(S, U)]) -> Self {
        let words: Vec<&str> = pairs.iter().map(|(w, _)| w.as_ref()).collect();
        LabeledSentence {
            sentence: Sentence::from_words(&words),
            tags: pairs.iter().map(|(_, t)| t.as_ref().to_string()).collect(),
        }
    }
}

/// Keywords used to select case-report documents when none are given.
pub const DEFAULT_KEYWORDS: [&str; 2] = ["case report", "clinical report"];

/// Keeps documents whose lowercased text contains at least one lowercased
/// keyword. An empty keyword list keeps nothing.
pub fn filter_case_reports<I, K>(documents: I, keywords: &[K]) -> impl Iterator<Item = (String, String)>
where
    I: IntoIterator<Item = (String, String)>,
    K: AsRef<str>,
{
    let keys: Vec<String> = keywords.iter().map(|k| k.as_ref().to_lowercase()).collect();
    documents.into_iter().filter(move |(_, text)| {
        let lower = text.to_lowercase();
        keys.iter().any(|k| lower.contains(k.as_str()))
    })
}

/// How a plain-text pretraining file is split into documents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DocumentMode {
    /// Every non-blank line is a document.
    Lines,
    /// The whole file is one document.
    File,
}

/// Splits file contents into `(id, text)` documents.
pub fn split_documents(file_id: &str, text: &str, mode: DocumentMode) -> Vec<(String, String)> {
    match mode {
        DocumentMode::File => {
            if text.trim().is_empty() {
                Vec::new()
            } else {
                vec![(file_id.to_string(), text.to_string())]
            }
        }
        DocumentMode::Lines => text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (format!("{file_id}:{}", i + 1), l.to_string()))
            .collect(),
    }
}
