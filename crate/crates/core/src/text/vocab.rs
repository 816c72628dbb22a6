use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::tokenize::split_tokens;
use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

const FILE_VERSION: u32 = 1;

/// Token ↔ id table. Ids are dense; `[PAD]` is 0 and `[UNK]` is 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Reserved tokens followed by `tokens` in the given order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut all = vec![PAD.to_string(), UNK.to_string()];
        all.extend(tokens);
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::Data(format!("invalid vocabulary token {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens: all, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of `token`, or `UNK_ID` when out of vocabulary.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn to_file_string(&self) -> String {
        let mut s = format!("clinfusion-vocab {FILE_VERSION}\n{}\n", self.tokens.len());
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_file_string(s: &str) -> Result<Self> {
        let mut lines = s.lines();
        let header = lines.next().unwrap_or_default();
        match header.strip_prefix("clinfusion-vocab ") {
            Some(v) if v.trim() == FILE_VERSION.to_string() => {}
            _ => return Err(Error::Data(format!("unsupported vocabulary header {header:?}"))),
        }
        let size: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| Error::Data("vocabulary size line missing".into()))?;
        let tokens: Vec<String> = lines.map(str::to_string).collect();
        if tokens.len() != size {
            return Err(Error::Data(format!(
                "vocabulary declares {size} tokens but lists {}",
                tokens.len()
            )));
        }
        if tokens.first().map(String::as_str) != Some(PAD) || tokens.get(1).map(String::as_str) != Some(UNK) {
            return Err(Error::Data("vocabulary must start with [PAD] and [UNK]".into()));
        }
        Self::from_tokens(tokens[2..].to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file_string(&fs::read_to_string(path)?)
    }

    /// Hex SHA-256 of the file representation.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_file_string().as_bytes()))
    }
}

/// Keeps the `max_size − 2` most frequent tokens seen at least `min_freq`
/// times; ties are broken lexicographically.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], min_freq: usize, max_size: usize) -> Result<Vocab> {
    if max_size < 2 {
        return Err(Error::Config(format!("max_size must be at least 2, got {max_size}")));
    }
    if corpus.is_empty() {
        return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in corpus {
        for t in split_tokens(text.as_ref()) {
            *counts.entry(t.text).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq.max(1) && t != PAD && t != UNK)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - 2);
    Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t).collect())
}
