//! Word-level tokenizer for notes and textualized labs.
//!
//! Rules: lowercase; split on whitespace; runs of letters/digits starting
//! with a letter form one token; a digit run with an optional `.digits`
//! tail is one decimal token (`1.450` stays whole); any other character is
//! a token of its own. `Glucose AC:148` becomes `glucose ac : 148`.

use super::vocab::{Vocab, PAD_ID};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Byte range in the source text.
    pub span: (usize, usize),
}

pub fn split_tokens(text: &str) -> Vec<Token> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let end_of = |i: usize| chars.get(i).map_or(text.len(), |c| c.0);
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (start, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        if c.is_ascii_digit() {
            while j < chars.len() && chars[j].1.is_ascii_digit() {
                j += 1;
            }
            if j + 1 < chars.len() && chars[j].1 == '.' && chars[j + 1].1.is_ascii_digit() {
                j += 2;
                while j < chars.len() && chars[j].1.is_ascii_digit() {
                    j += 1;
                }
            }
        } else if c.is_alphanumeric() {
            while j < chars.len() && chars[j].1.is_alphanumeric() {
                j += 1;
            }
        }
        let end = end_of(j);
        out.push(Token {
            text: text[start..end].to_lowercase(),
            span: (start, end),
        });
        i = j;
    }
    out
}

/// Fixed-length id sequence with its padding mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub ids: Vec<usize>,
    /// `true` for real tokens, `false` for padding.
    pub mask: Vec<bool>,
    /// Source byte spans of the real tokens.
    pub spans: Vec<(usize, usize)>,
}

impl Encoded {
    pub fn n_tokens(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Tokenizes, maps to ids (OOV → UNK), truncates from the end and pads to `max_len`.
pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> Encoded {
    let toks = split_tokens(text);
    let keep = toks.len().min(max_len);
    let mut ids = Vec::with_capacity(max_len);
    let mut spans = Vec::with_capacity(keep);
    for t in &toks[..keep] {
        ids.push(vocab.id(&t.text));
        spans.push(t.span);
    }
    let mut mask = vec![true; keep];
    ids.resize(max_len, PAD_ID);
    mask.resize(max_len, false);
    Encoded { ids, mask, spans }
}
