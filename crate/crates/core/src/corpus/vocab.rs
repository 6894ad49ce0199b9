use std::collections::{BTreeMap, BTreeSet, HashMap};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::{BioTag, LabeledSentence, Sentence};

/// Character-to-id mapping with reserved ids
/// [`UNKNOWN`](CharVocabulary::UNKNOWN) = 0,
/// [`BOUNDARY`](CharVocabulary::BOUNDARY) = 1 and
/// [`PAD`](CharVocabulary::PAD) = 2. Corpus characters start at 3.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharVocabulary {
    chars: Vec<char>,
    id_of: HashMap<char, usize>,
}

impl CharVocabulary {
    pub const UNKNOWN: usize = 0;
    pub const BOUNDARY: usize = 1;
    pub const PAD: usize = 2;
    pub const RESERVED: usize = 3;

    /// Vocabulary over `chars` in the given order.
    pub fn from_chars(chars: Vec<char>) -> Result<Self> {
        let mut id_of = HashMap::with_capacity(chars.len());
        for (i, &c) in chars.iter().enumerate() {
            if id_of.insert(c, i + Self::RESERVED).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate character {c:?} in vocabulary")));
            }
        }
        Ok(CharVocabulary { chars, id_of })
    }

    /// Total number of ids including the reserved ones.
    pub fn len(&self) -> usize {
        self.chars.len() + Self::RESERVED
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn id(&self, c: char) -> usize {
        self.id_of.get(&c).copied().unwrap_or(Self::UNKNOWN)
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        id.checked_sub(Self::RESERVED).and_then(|i| self.chars.get(i).copied())
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.chars().map(|c| self.id(c)).collect()
    }

    /// Hex code points, comma separated, for the container metadata block.
    pub fn to_metadata(&self) -> String {
        self.chars.iter().map(|c| format!("{:x}", *c as u32)).collect::<Vec<_>>().join(",")
    }

    pub fn from_metadata(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Self::from_chars(Vec::new());
        }
        let chars = s
            .split(',')
            .map(|h| {
                u32::from_str_radix(h, 16)
                    .ok()
                    .and_then(char::from_u32)
                    .ok_or_else(|| Error::Container(format!("bad code point {h:?} in char vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_chars(chars)
    }

    /// SHA-256 of the metadata form.
    pub fn digest(&self) -> String {
        hex_digest(self.to_metadata().as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Counts characters of each sentence's rendered form (tokens joined by
/// single spaces) and keeps those seen at least `min_count` times, ordered
/// by descending count then code point.
pub fn build_char_vocab<'a, I>(corpus: I, min_count: usize) -> Result<CharVocabulary>
where
    I: IntoIterator<Item = &'a Sentence>,
{
    if min_count == 0 {
        return Err(Error::InvalidArgument("min_count must be at least 1".into()));
    }
    let mut counts: HashMap<char, usize> = HashMap::new();
    let mut seen_any = false;
    for s in corpus {
        for c in s.rendered().chars() {
            *counts.entry(c).or_default() += 1;
            seen_any = true;
        }
    }
    if !seen_any {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(char, usize)> = counts.into_iter().filter(|&(_, n)| n >= min_count).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    CharVocabulary::from_chars(ranked.into_iter().map(|(c, _)| c).collect())
}

/// Closed tag inventory: `B-X`, `I-X` for each entity type in lexicographic
/// order, then `O`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagSet {
    entity_types: Vec<String>,
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

impl TagSet {
    pub fn new<S: AsRef<str>>(types: &[S]) -> Self {
        let types: BTreeSet<String> = types.iter().map(|t| t.as_ref().to_string()).collect();
        let entity_types: Vec<String> = types.into_iter().collect();
        let mut tags = Vec::with_capacity(2 * entity_types.len() + 1);
        for t in &entity_types {
            tags.push(format!("B-{t}"));
            tags.push(format!("I-{t}"));
        }
        tags.push("O".to_string());
        let index = tags.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        TagSet {
            entity_types,
            tags,
            index,
        }
    }

    /// Entity types occurring in `data`.
    pub fn from_data(data: &[LabeledSentence]) -> Self {
        let mut types = BTreeMap::new();
        for s in data {
            for t in &s.tags {
                if let Some(ty) = BioTag::parse(t).and_then(|b| b.entity_type()) {
                    types.insert(ty.to_string(), ());
                }
            }
        }
        Self::new(&types.into_keys().collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn id(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn tag(&self, id: usize) -> &str {
        &self.tags[id]
    }

    pub fn outside(&self) -> usize {
        self.tags.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(texts: &[&str]) -> Vec<Sentence> {
        texts.iter().map(|t| Sentence::from_words(&t.split(' ').collect::<Vec<_>>())).collect()
    }

    #[test]
    fn counts_and_min_count() {
        let c = corpus(&["aab"]);
        let v = build_char_vocab(&c, 1).unwrap();
        assert_eq!(v.chars(), &['a', 'b']);
        assert_eq!(v.len(), 5);
        assert_eq!(v.id('a'), 3);
        let v = build_char_vocab(&c, 2).unwrap();
        assert_eq!(v.chars(), &['a']);
        assert_eq!(v.id('b'), CharVocabulary::UNKNOWN);
    }

    #[test]
    fn min_count_zero_and_empty_corpus() {
        assert!(matches!(build_char_vocab(&corpus(&["a"]), 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_char_vocab(&[], 1), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn ties_break_by_code_point_and_space_counts() {
        let v = build_char_vocab(&corpus(&["ba ab"]), 1).unwrap();
        assert_eq!(v.chars(), &['a', 'b', ' ']);
    }

    #[test]
    fn metadata_round_trip() {
        let v = CharVocabulary::from_chars(vec!['a', '=', ',', 'é', '\u{1F600}']).unwrap();
        let back = CharVocabulary::from_metadata(&v.to_metadata()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.digest(), v.digest());
    }

    #[test]
    fn tagset_order() {
        let t = TagSet::new(&["Y", "X", "Y"]);
        assert_eq!(t.tags(), ["B-X", "I-X", "B-Y", "I-Y", "O"]);
        assert_eq!(t.len(), 2 * 2 + 1);
        assert_eq!(t.outside(), 4);
        assert_eq!(t.id("I-Y"), Some(3));
    }
}
