use std::collections::HashMap;

use super::SentencePair;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Bijective token ↔ id map. Ids 0..4 are reserved for PAD, UNK, BOS, EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(Vec::new()).expect("reserved tokens are unique")
    }
}

impl Vocabulary {
    /// Builds a vocabulary from non-reserved tokens in id order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        Self::from_id_list(all)
    }

    /// Full id list including the reserved prefix, as stored on disk.
    pub fn from_id_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Format("vocabulary must start with the reserved tokens".into()));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("invalid vocabulary token at id {i}")));
            }
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { ids, tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, tok: &str) -> usize {
        self.ids.get(tok).copied().unwrap_or(UNK)
    }

    pub fn get(&self, tok: &str) -> Option<usize> {
        self.ids.get(tok).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(RESERVED[UNK], String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String], add_bos_eos: bool) -> Vec<usize> {
        let mut out = Vec::with_capacity(tokens.len() + 2);
        if add_bos_eos {
            out.push(BOS);
        }
        out.extend(tokens.iter().map(|t| self.id(t)));
        if add_bos_eos {
            out.push(EOS);
        }
        out
    }

    /// Maps ids back to tokens, dropping BOS/EOS/PAD.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| !matches!(i, PAD | BOS | EOS))
            .map(|&i| self.token(i).to_string())
            .collect()
    }

    /// One token per line; line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_id_list(text.lines().map(str::to_string).collect())
    }
}

/// Same as [`Vocabulary::encode`]; kept as a free function for pipeline code.
pub fn encode_ids(tokens: &[String], vocab: &Vocabulary, add_bos_eos: bool) -> Vec<usize> {
    vocab.encode(tokens, add_bos_eos)
}

/// Joint vocabulary over both sides: most frequent first, ties by token text.
pub fn build_vocab(pairs: &[SentencePair], min_freq: usize, max_size: usize) -> Vocabulary {
    let min_freq = min_freq.max(1);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for p in pairs {
        for t in p.source.iter().chain(&p.target) {
            *counts.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    let mut entries: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq && !RESERVED.contains(t))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let room = max_size.saturating_sub(RESERVED.len());
    let tokens = entries.into_iter().take(room).map(|(t, _)| t.to_string()).collect();
    Vocabulary::from_tokens(tokens).expect("corpus tokens are unique and non-empty")
}
