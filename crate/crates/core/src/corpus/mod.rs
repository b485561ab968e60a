//! Parallel-corpus ingestion: tokenisation, truecasing, filtering,
//! vocabulary construction and heuristic lexical alignment.

mod align;
pub mod io;
mod text;
mod vocab;

pub use align::{dice_table, lexical_align, DiceTable, DICE_THRESHOLD};
pub use text::{clean_and_filter, tokenize, FilterConfig, FilterSummary, Truecaser};
pub use vocab::{build_vocab, encode_ids, Vocabulary, BOS, EOS, PAD, RESERVED, UNK};

use crate::lattice::TagLattice;

/// Optional per-token integer annotations (tagger output would go here).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Annotations {
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

/// Aligned source/target token sequences.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SentencePair {
    pub id: String,
    pub source: Vec<String>,
    pub target: Vec<String>,
    /// `(source index, target index)` links.
    pub alignment: Option<Vec<(usize, usize)>>,
    pub gold_tags: Option<TagLattice>,
    pub annotations: Option<Annotations>,
}

impl SentencePair {
    pub fn new(id: impl Into<String>, source: Vec<String>, target: Vec<String>) -> Self {
        Self {
            id: id.into(),
            source,
            target,
            ..Default::default()
        }
    }

    /// Annotation channel, zero-filled when absent.
    pub fn annotations(&self) -> Annotations {
        self.annotations.clone().unwrap_or_else(|| Annotations {
            source: vec![0; self.source.len()],
            target: vec![0; self.target.len()],
        })
    }

    pub fn alignment_is_valid(&self) -> bool {
        self.alignment.as_ref().is_none_or(|links| {
            links
                .iter()
                .all(|&(i, j)| i < self.source.len() && j < self.target.len())
        })
    }
}

pub(crate) fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}
