use std::collections::HashMap;

use super::SentencePair;
use crate::error::{Error, Result};

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '«' | '»' | '“' | '”' | '‘' | '’' | '„' | '‚' | '…' | '—' | '–' | '¡' | '¿' | '·' | '、'
                | '。' | '，' | '！' | '？' | '：' | '；' | '（' | '）'
        )
}

/// Whitespace split, then leading and trailing punctuation characters are
/// peeled off one by one into their own tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let mut start = 0;
        while start < chars.len() && is_punct(chars[start]) {
            start += 1;
        }
        if start == chars.len() {
            out.extend(chars.iter().map(|c| c.to_string()));
            continue;
        }
        let mut end = chars.len();
        while end > start && is_punct(chars[end - 1]) {
            end -= 1;
        }
        out.extend(chars[..start].iter().map(|c| c.to_string()));
        out.push(chars[start..end].iter().collect());
        out.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    out
}

/// Lowercases sentence-initial tokens whose lowercase form is attested in
/// non-initial position somewhere in the corpus.
#[derive(Clone, Debug, Default)]
pub struct Truecaser {
    counts: HashMap<String, usize>,
    min_count: usize,
}

impl Truecaser {
    pub fn train<'a, I>(sentences: I) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts = HashMap::new();
        for sent in sentences {
            for tok in sent.iter().skip(1) {
                *counts.entry(tok.clone()).or_insert(0) += 1;
            }
        }
        Self { counts, min_count: 1 }
    }

    pub fn with_min_count(mut self, n: usize) -> Self {
        self.min_count = n.max(1);
        self
    }

    pub fn count(&self, tok: &str) -> usize {
        self.counts.get(tok).copied().unwrap_or(0)
    }

    pub fn truecase(&self, tokens: &[String]) -> Vec<String> {
        let mut out = tokens.to_vec();
        if let Some(first) = out.first_mut() {
            let lower = first.to_lowercase();
            if lower != *first && self.count(&lower) >= self.min_count {
                *first = lower;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterConfig {
    pub min_len: usize,
    pub max_len: usize,
    pub max_ratio: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_len: 1,
            max_len: 64,
            max_ratio: 3.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct FilterSummary {
    pub input: usize,
    pub kept: usize,
    pub dropped_empty: usize,
    pub dropped_control: usize,
    pub dropped_length: usize,
    pub dropped_ratio: usize,
}

impl FilterSummary {
    pub fn dropped(&self) -> usize {
        self.dropped_empty + self.dropped_control + self.dropped_length + self.dropped_ratio
    }
}

fn has_control(tokens: &[String]) -> bool {
    tokens.iter().any(|t| t.chars().any(char::is_control))
}

pub fn clean_and_filter(
    pairs: impl IntoIterator<Item = SentencePair>,
    cfg: &FilterConfig,
) -> Result<(Vec<SentencePair>, FilterSummary)> {
    if cfg.min_len < 1 || cfg.min_len > cfg.max_len {
        return Err(Error::Config(format!(
            "length window [{}, {}] is invalid",
            cfg.min_len, cfg.max_len
        )));
    }
    let mut summary = FilterSummary::default();
    let mut kept = Vec::new();
    for p in pairs {
        summary.input += 1;
        let (ls, lt) = (p.source.len(), p.target.len());
        if ls == 0 || lt == 0 {
            summary.dropped_empty += 1;
        } else if has_control(&p.source) || has_control(&p.target) {
            summary.dropped_control += 1;
        } else if ls < cfg.min_len || lt < cfg.min_len || ls > cfg.max_len || lt > cfg.max_len {
            summary.dropped_length += 1;
        } else if ls.max(lt) as f64 / ls.min(lt) as f64 > cfg.max_ratio {
            summary.dropped_ratio += 1;
        } else {
            kept.push(p);
        }
    }
    summary.kept = kept.len();
    Ok((kept, summary))
}
