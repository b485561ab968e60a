use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::corpus::io::read_corpus;
use crate::error::Result;

/// Source → target store with exact and token-set Jaccard retrieval.
#[derive(Clone, Debug, Default)]
pub struct TranslationMemory {
    entries: Vec<(Vec<String>, Vec<String>)>,
    exact: HashMap<Vec<String>, usize>,
    index: HashMap<String, Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TmHit<'a> {
    pub entry: usize,
    pub source: &'a [String],
    pub target: &'a [String],
    pub similarity: f64,
}

pub fn jaccard(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn token_set(toks: &[String]) -> BTreeSet<&str> {
    toks.iter().map(String::as_str).collect()
}

impl TranslationMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I: IntoIterator<Item = (Vec<String>, Vec<String>)>>(pairs: I) -> Self {
        let mut tm = Self::new();
        for (s, t) in pairs {
            tm.add(s, t);
        }
        tm
    }

    /// Loads a line-aligned `.src`/`.tgt` pair of files.
    pub fn load(src: &Path, tgt: &Path) -> Result<Self> {
        Ok(Self::from_pairs(read_corpus(src, tgt)?.into_iter().map(|p| (p.source, p.target))))
    }

    pub fn add(&mut self, source: Vec<String>, target: Vec<String>) {
        let id = self.entries.len();
        self.exact.entry(source.clone()).or_insert(id);
        for tok in token_set(&source) {
            let ids = self.index.entry(tok.to_string()).or_default();
            if ids.last() != Some(&id) {
                ids.push(id);
            }
        }
        self.entries.push((source, target));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(Vec<String>, Vec<String>)] {
        &self.entries
    }

    fn hit(&self, entry: usize, similarity: f64) -> TmHit<'_> {
        let (s, t) = &self.entries[entry];
        TmHit {
            entry,
            source: s,
            target: t,
            similarity,
        }
    }

    /// Exact match first, else the best Jaccard similarity `>= threshold`
    /// with ties going to the earliest entry.
    pub fn lookup(&self, source: &[String], threshold: f64) -> Option<TmHit<'_>> {
        if let Some(&id) = self.exact.get(source) {
            return Some(self.hit(id, 1.0));
        }
        let q = token_set(source);
        let candidates: BTreeSet<usize> = if threshold > 0.0 {
            q.iter().filter_map(|t| self.index.get(*t)).flatten().copied().collect()
        } else {
            (0..self.entries.len()).collect()
        };
        let mut best: Option<(usize, f64)> = None;
        for id in candidates {
            let sim = jaccard(&q, &token_set(&self.entries[id].0));
            if sim >= threshold && best.is_none_or(|(_, b)| sim > b) {
                best = Some((id, sim));
            }
        }
        best.map(|(id, sim)| self.hit(id, sim))
    }
}
