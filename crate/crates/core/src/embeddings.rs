//! Static word vectors and ordered stacks of per-token embedders whose
//! outputs are concatenated.

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::char_lm::CharLmModel;
use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::word_lm::{LayerMixing, WordLmModel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OovPolicy {
    #[default]
    Zeros,
    Mean,
}

impl fmt::Display for OovPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OovPolicy::Zeros => "zeros",
            OovPolicy::Mean => "mean",
        })
    }
}

impl FromStr for OovPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeros" => Ok(OovPolicy::Zeros),
            "mean" => Ok(OovPolicy::Mean),
            other => Err(Error::InvalidArgument(format!("unknown OOV policy {other:?}"))),
        }
    }
}

/// How a token was resolved by [`StaticLexicon::lookup`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LookupMatch {
    Exact,
    Lowercase,
    Oov,
}

/// Word vectors from a `word v1 v2 ...` text file.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticLexicon {
    dim: usize,
    words: Vec<String>,
    vectors: Vec<f32>,
    index: HashMap<String, usize>,
    oov: OovPolicy,
    oov_vector: Vec<f32>,
    duplicates: usize,
}

impl StaticLexicon {
    fn empty() -> Self {
        StaticLexicon {
            dim: 0,
            words: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
            oov: OovPolicy::Zeros,
            oov_vector: Vec::new(),
            duplicates: 0,
        }
    }

    /// Builds a lexicon; a repeated word keeps its first position and its
    /// last vector.
    pub fn from_entries<S: Into<String>>(entries: impl IntoIterator<Item = (S, Vec<f32>)>) -> Result<Self> {
        let mut lex = Self::empty();
        for (i, (word, v)) in entries.into_iter().enumerate() {
            lex.insert(word.into(), v, i + 1)?;
        }
        lex.finish()
    }

    fn insert(&mut self, word: String, v: Vec<f32>, line: usize) -> Result<()> {
        if self.words.is_empty() && self.dim == 0 {
            if v.is_empty() {
                return Err(Error::Malformed {
                    line,
                    message: "entry has no vector components".into(),
                });
            }
            self.dim = v.len();
        }
        if v.len() != self.dim {
            return Err(Error::Malformed {
                line,
                message: format!("expected {} components, found {}", self.dim, v.len()),
            });
        }
        match self.index.get(&word) {
            Some(&i) => {
                self.vectors[i * self.dim..(i + 1) * self.dim].copy_from_slice(&v);
                self.duplicates += 1;
            }
            None => {
                self.index.insert(word.clone(), self.words.len());
                self.words.push(word);
                self.vectors.extend_from_slice(&v);
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<Self> {
        if self.words.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        self.set_oov_policy(self.oov);
        Ok(self)
    }

    /// Parses the text format; blank lines are ignored.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Utf8 { offset: e.valid_up_to() })?;
        let mut lex = Self::empty();
        for (idx, line) in text.split('\n').enumerate() {
            let line_no = idx + 1;
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(' ').filter(|f| !f.is_empty());
            let word = fields.next().unwrap_or_default();
            let v = fields
                .map(|f| {
                    f.parse::<f32>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::Malformed {
                            line: line_no,
                            message: format!("non-numeric field {f:?}"),
                        })
                })
                .collect::<Result<Vec<f32>>>()?;
            lex.insert(word.to_string(), v, line_no)?;
        }
        lex.finish()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read(path)?)
    }

    /// Text form with six significant digits per component.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, w) in self.words.iter().enumerate() {
            out.push_str(w);
            for v in self.vector(i) {
                let _ = write!(out, " {v:.5e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Number of entries overridden by a later line for the same word.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov
    }

    pub fn set_oov_policy(&mut self, policy: OovPolicy) {
        self.oov = policy;
        self.oov_vector = match policy {
            OovPolicy::Zeros => vec![0.0; self.dim],
            OovPolicy::Mean => {
                let mut sum = vec![0.0f64; self.dim];
                for row in self.vectors.chunks_exact(self.dim) {
                    for (s, v) in sum.iter_mut().zip(row) {
                        *s += f64::from(*v);
                    }
                }
                let n = self.words.len().max(1) as f64;
                sum.into_iter().map(|s| (s / n) as f32).collect()
            }
        };
    }

    pub fn with_oov_policy(mut self, policy: OovPolicy) -> Self {
        self.set_oov_policy(policy);
        self
    }

    fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn resolve(&self, token: &str) -> LookupMatch {
        if self.index.contains_key(token) {
            LookupMatch::Exact
        } else if self.index.contains_key(&token.to_lowercase()) {
            LookupMatch::Lowercase
        } else {
            LookupMatch::Oov
        }
    }

    /// Exact match, then lowercase match, then the OOV vector.
    pub fn lookup(&self, token: &str) -> &[f32] {
        match self
            .index
            .get(token)
            .or_else(|| self.index.get(&token.to_lowercase()))
        {
            Some(&i) => self.vector(i),
            None => &self.oov_vector,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemberKind {
    Static,
    CharLm,
    WordLm,
}

impl fmt::Display for MemberKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MemberKind::Static => "static",
            MemberKind::CharLm => "char_lm",
            MemberKind::WordLm => "word_lm",
        })
    }
}

impl FromStr for MemberKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(MemberKind::Static),
            "char_lm" => Ok(MemberKind::CharLm),
            "word_lm" => Ok(MemberKind::WordLm),
            other => Err(Error::InvalidArgument(format!("unknown embedder kind {other:?}"))),
        }
    }
}

/// One member of a stack description: `kind:path[:option]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemberSpec {
    pub kind: MemberKind,
    pub path: PathBuf,
    pub option: Option<String>,
}

impl fmt::Display for MemberSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.path.display())?;
        if let Some(o) = &self.option {
            write!(f, ":{o}")?;
        }
        Ok(())
    }
}

/// Parses `kind:path[:option]` members separated by `;`.
pub fn parse_stack_spec(spec: &str) -> Result<Vec<MemberSpec>> {
    let members: Vec<MemberSpec> = spec
        .split(';')
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .map(|m| {
            let mut parts = m.splitn(3, ':');
            let kind: MemberKind = parts.next().unwrap_or_default().parse()?;
            let path = parts
                .next()
                .filter(|p| !p.is_empty())
                .ok_or_else(|| Error::InvalidArgument(format!("stack member {m:?} lacks a path")))?;
            Ok(MemberSpec {
                kind,
                path: PathBuf::from(path),
                option: parts.next().map(str::to_string),
            })
        })
        .collect::<Result<_>>()?;
    if members.is_empty() {
        return Err(Error::InvalidArgument("empty embedder stack".into()));
    }
    Ok(members)
}

pub fn format_stack_spec(members: &[MemberSpec]) -> String {
    members.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

/// A single source of per-token vectors.
#[derive(Clone, Debug, PartialEq)]
pub enum Embedder {
    Static(StaticLexicon),
    CharLm(CharLmModel),
    WordLm { model: WordLmModel, mixing: LayerMixing },
}

impl Embedder {
    pub fn load(spec: &MemberSpec) -> Result<Self> {
        match spec.kind {
            MemberKind::Static => {
                let policy = spec.option.as_deref().map(str::parse).transpose()?.unwrap_or_default();
                Ok(Embedder::Static(StaticLexicon::load(&spec.path)?.with_oov_policy(policy)))
            }
            MemberKind::CharLm => {
                if let Some(o) = &spec.option {
                    return Err(Error::InvalidArgument(format!("char_lm member takes no option, got {o:?}")));
                }
                Ok(Embedder::CharLm(CharLmModel::load(&spec.path)?))
            }
            MemberKind::WordLm => {
                let mixing = spec.option.as_deref().map(str::parse).transpose()?.unwrap_or(LayerMixing::Mean);
                let model = WordLmModel::load(&spec.path)?;
                mixing.weights(model.config.layers)?;
                Ok(Embedder::WordLm { model, mixing })
            }
        }
    }

    pub fn kind(&self) -> MemberKind {
        match self {
            Embedder::Static(_) => MemberKind::Static,
            Embedder::CharLm(_) => MemberKind::CharLm,
            Embedder::WordLm { .. } => MemberKind::WordLm,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Embedder::Static(l) => l.dim(),
            Embedder::CharLm(m) => m.embedding_dim(),
            Embedder::WordLm { model, .. } => model.embedding_dim(),
        }
    }

    pub fn embed(&self, sentence: &Sentence) -> Result<Vec<Vec<f32>>> {
        match self {
            Embedder::Static(l) => Ok(sentence.words().map(|w| l.lookup(w).to_vec()).collect()),
            Embedder::CharLm(m) => m.embed_words(sentence),
            Embedder::WordLm { model, mixing } => model.embed_words(sentence, mixing),
        }
    }
}

/// Ordered embedders whose per-token outputs are concatenated.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedderStack {
    members: Vec<Embedder>,
    spec: String,
}

impl EmbedderStack {
    pub fn new(members: Vec<Embedder>, spec: impl Into<String>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidArgument("empty embedder stack".into()));
        }
        Ok(EmbedderStack {
            members,
            spec: spec.into(),
        })
    }

    /// Loads every member of a `kind:path[:option];...` description.
    pub fn from_spec(spec: &str) -> Result<Self> {
        let members = parse_stack_spec(spec)?;
        let loaded = members
            .iter()
            .enumerate()
            .map(|(index, m)| {
                Embedder::load(m).map_err(|e| Error::Member {
                    index,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(loaded, format_stack_spec(&members))
    }

    pub fn members(&self) -> &[Embedder] {
        &self.members
    }

    pub fn spec(&self) -> &str {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.members.iter().map(Embedder::dim).sum()
    }

    /// Coordinate range occupied by each member.
    pub fn blocks(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.members
            .iter()
            .map(|m| {
                let r = start..start + m.dim();
                start = r.end;
                r
            })
            .collect()
    }

    /// Per-token concatenation of member outputs in stack order.
    pub fn embed(&self, sentence: &Sentence) -> Result<Vec<Vec<f32>>> {
        if sentence.is_empty() {
            return Ok(Vec::new());
        }
        let dim = self.dim();
        let mut out = vec![Vec::with_capacity(dim); sentence.len()];
        for (index, member) in self.members.iter().enumerate() {
            let wrap = |e: Error| Error::Member {
                index,
                source: Box::new(e),
            };
            let vectors = member.embed(sentence).map_err(wrap)?;
            if vectors.len() != sentence.len() || vectors.iter().any(|v| v.len() != member.dim()) {
                return Err(wrap(Error::InvalidArgument(format!(
                    "{} member produced vectors of the wrong shape",
                    member.kind()
                ))));
            }
            for (row, v) in out.iter_mut().zip(vectors) {
                row.extend(v);
            }
        }
        Ok(out)
    }
}
