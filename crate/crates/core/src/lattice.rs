//! Error tags on the interleaved gap/token slot lattice.
//!
//! A target sentence of `m` tokens has `2m + 1` slots:
//! `gap₀, token₁, gap₁, …, token_m, gap_m`. Gap slots sit where an omitted
//! word would belong; token slots carry per-token judgements.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorTag {
    Ok,
    Omission,
    Replacement,
    Insertion,
    Order,
}

pub const NUM_TAGS: usize = 5;

impl ErrorTag {
    pub const ALL: [ErrorTag; NUM_TAGS] = [
        ErrorTag::Ok,
        ErrorTag::Omission,
        ErrorTag::Replacement,
        ErrorTag::Insertion,
        ErrorTag::Order,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorTag::Ok => "OK",
            ErrorTag::Omission => "OMISSION",
            ErrorTag::Replacement => "REPLACEMENT",
            ErrorTag::Insertion => "INSERTION",
            ErrorTag::Order => "ORDER",
        }
    }

    pub fn is_error(self) -> bool {
        self != ErrorTag::Ok
    }

    pub fn legal_on(self, kind: SlotKind) -> bool {
        match self {
            ErrorTag::Ok => true,
            ErrorTag::Omission => kind == SlotKind::Gap,
            _ => kind == SlotKind::Token,
        }
    }
}

impl std::fmt::Display for ErrorTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotKind {
    Gap,
    Token,
}

impl SlotKind {
    pub fn of(slot: usize) -> Self {
        if slot.is_multiple_of(2) {
            SlotKind::Gap
        } else {
            SlotKind::Token
        }
    }
}

/// Slot index of target token `j` (0-based).
pub fn token_slot(j: usize) -> usize {
    2 * j + 1
}

/// Slot index of gap `g` (gap `g` precedes token `g`).
pub fn gap_slot(g: usize) -> usize {
    2 * g
}

pub fn slot_count(target_len: usize) -> usize {
    2 * target_len + 1
}

/// Labels over a target's slot lattice.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TagLattice {
    labels: Vec<ErrorTag>,
}

impl TagLattice {
    pub fn new(labels: Vec<ErrorTag>) -> Result<Self> {
        if labels.len().is_multiple_of(2) {
            return Err(Error::Data(format!(
                "lattice needs an odd slot count, got {}",
                labels.len()
            )));
        }
        for (i, t) in labels.iter().enumerate() {
            if !t.legal_on(SlotKind::of(i)) {
                return Err(Error::Data(format!(
                    "tag {t} is illegal on {:?} slot {i}",
                    SlotKind::of(i)
                )));
            }
        }
        Ok(Self { labels })
    }

    pub fn all_ok(target_len: usize) -> Self {
        Self {
            labels: vec![ErrorTag::Ok; slot_count(target_len)],
        }
    }

    pub fn labels(&self) -> &[ErrorTag] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn target_len(&self) -> usize {
        self.labels.len() / 2
    }

    pub fn kinds(&self) -> impl Iterator<Item = SlotKind> + '_ {
        (0..self.labels.len()).map(SlotKind::of)
    }

    pub fn token_tag(&self, j: usize) -> ErrorTag {
        self.labels[token_slot(j)]
    }

    pub fn gap_tag(&self, g: usize) -> ErrorTag {
        self.labels[gap_slot(g)]
    }

    pub fn indices(&self) -> Vec<usize> {
        self.labels.iter().map(|t| t.index()).collect()
    }

    pub fn from_indices(idx: &[usize]) -> Result<Self> {
        let labels = idx
            .iter()
            .map(|&i| ErrorTag::from_index(i).ok_or_else(|| Error::Data(format!("bad tag index {i}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels)
    }

    pub fn error_count(&self) -> usize {
        self.labels.iter().filter(|t| t.is_error()).count()
    }
}

/// One line of a labels file (JSON lines). Gold files carry `reference` and
/// usually `alignment`; predicted files carry per-slot tag probabilities in
/// `scores`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    pub slots: Vec<ErrorTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<Vec<f64>>>,
}

impl LabelRecord {
    pub fn lattice(&self) -> Result<TagLattice> {
        TagLattice::new(self.slots.clone())
            .map_err(|e| Error::Data(format!("record {}: {e}", self.id)))
    }
}
