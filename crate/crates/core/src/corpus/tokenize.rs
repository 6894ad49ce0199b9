//! Rule-based sentence splitting and tokenization.
//!
//! Sentences end at `.`, `!` or `?` followed by whitespace (or the end of
//! input). Tokens are whitespace-separated chunks with leading and trailing
//! punctuation split off one character at a time; punctuation inside a
//! chunk (`120/80`, `2.5mg`, `X-ray`) stays attached.

use crate::error::{Error, Result};

use super::{Sentence, Token};

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '«' | '»' | '…' | '–' | '—')
}

/// Tokenizes raw bytes, rejecting invalid UTF-8 with the failing offset.
pub fn tokenize_bytes(bytes: &[u8]) -> Result<Vec<Sentence>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Utf8 { offset: e.valid_up_to() })?;
    Ok(tokenize(text))
}

pub fn tokenize(text: &str) -> Vec<Sentence> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..chars.len() {
        let ends = is_terminator(chars[i]) && chars.get(i + 1).is_none_or(|c| c.is_whitespace());
        if ends {
            push_sentence(&chars[start..=i], &mut out);
            start = i + 1;
        }
    }
    if start < chars.len() {
        push_sentence(&chars[start..], &mut out);
    }
    out
}

fn push_sentence(chars: &[char], out: &mut Vec<Sentence>) {
    let Some(first) = chars.iter().position(|c| !c.is_whitespace()) else {
        return;
    };
    let last = chars.iter().rposition(|c| !c.is_whitespace()).unwrap_or(first);
    let body = &chars[first..=last];
    let raw: String = body.iter().collect();

    let mut tokens = Vec::new();
    let mut i = 0;
    while i < body.len() {
        if body[i].is_whitespace() {
            i += 1;
            continue;
        }
        let chunk_start = i;
        while i < body.len() && !body[i].is_whitespace() {
            i += 1;
        }
        split_chunk(body, chunk_start, i, &mut tokens);
    }
    out.push(Sentence { tokens, raw });
}

/// Splits `body[start..end]` into leading punctuation, core, trailing
/// punctuation.
fn split_chunk(body: &[char], start: usize, end: usize, tokens: &mut Vec<Token>) {
    let single = |pos: usize| Token {
        text: body[pos].to_string(),
        char_start: pos,
        char_end: pos,
    };
    let mut lo = start;
    while lo < end && is_punct(body[lo]) {
        tokens.push(single(lo));
        lo += 1;
    }
    if lo == end {
        return;
    }
    let mut hi = end;
    while hi > lo && is_punct(body[hi - 1]) {
        hi -= 1;
    }
    tokens.push(Token {
        text: body[lo..hi].iter().collect(),
        char_start: lo,
        char_end: hi - 1,
    });
    for pos in hi..end {
        tokens.push(single(pos));
    }
}
