use std::collections::{BTreeSet, HashMap};

use super::SentencePair;

/// Minimum Dice coefficient for a link.
pub const DICE_THRESHOLD: f64 = 0.1;

/// Sentence-level co-occurrence statistics over a corpus.
#[derive(Clone, Debug, Default)]
pub struct DiceTable {
    src: HashMap<String, usize>,
    tgt: HashMap<String, usize>,
    joint: HashMap<(String, String), usize>,
}

impl DiceTable {
    pub fn dice(&self, s: &str, t: &str) -> f64 {
        let cs = self.src.get(s).copied().unwrap_or(0);
        let ct = self.tgt.get(t).copied().unwrap_or(0);
        if cs + ct == 0 {
            return 0.0;
        }
        let co = self
            .joint
            .get(&(s.to_string(), t.to_string()))
            .copied()
            .unwrap_or(0);
        2.0 * co as f64 / (cs + ct) as f64
    }
}

/// Counts, per token type, the number of pairs it occurs in.
pub fn dice_table(pairs: &[SentencePair]) -> DiceTable {
    let mut table = DiceTable::default();
    for p in pairs {
        let s: BTreeSet<&String> = p.source.iter().collect();
        let t: BTreeSet<&String> = p.target.iter().collect();
        for a in &s {
            *table.src.entry((*a).clone()).or_insert(0) += 1;
        }
        for b in &t {
            *table.tgt.entry((*b).clone()).or_insert(0) += 1;
        }
        for a in &s {
            for b in &t {
                *table.joint.entry(((*a).clone(), (*b).clone())).or_insert(0) += 1;
            }
        }
    }
    table
}

/// Links every target token to its highest-Dice source token (lowest source
/// index on ties) when that score reaches [`DICE_THRESHOLD`].
pub fn lexical_align(pairs: &[SentencePair]) -> Vec<SentencePair> {
    let table = dice_table(pairs);
    pairs
        .iter()
        .map(|p| {
            let mut links = Vec::new();
            for (j, t) in p.target.iter().enumerate() {
                let mut best: Option<(usize, f64)> = None;
                for (i, s) in p.source.iter().enumerate() {
                    let d = table.dice(s, t);
                    if d >= DICE_THRESHOLD && best.is_none_or(|(_, b)| d > b) {
                        best = Some((i, d));
                    }
                }
                if let Some((i, _)) = best {
                    links.push((i, j));
                }
            }
            SentencePair {
                alignment: Some(links),
                ..p.clone()
            }
        })
        .collect()
}
