use serde::{Deserialize, Serialize};

use super::tm::TranslationMemory;
use crate::error::{Error, Result};
use crate::lattice::{gap_slot, token_slot, ErrorTag, SlotKind, TagLattice};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditOp {
    Replace,
    Delete,
    Insert,
    /// Exchanges the token at `slot` with the next token.
    Swap,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub slot: usize,
    pub op: EditOp,
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub id: String,
    pub edits: Vec<Edit>,
    pub corrected: Vec<String>,
    pub truncated: bool,
}

/// Produces replacement or insertion tokens for a flagged slot.
pub trait SpanDecoder {
    /// Returns the tokens and whether decoding hit its length limit.
    fn decode_span(&mut self, slot: usize, tag: ErrorTag) -> Result<(Vec<String>, bool)>;
}

/// A decoder that never proposes anything.
pub struct NoDecoder;

impl SpanDecoder for NoDecoder {
    fn decode_span(&mut self, _slot: usize, _tag: ErrorTag) -> Result<(Vec<String>, bool)> {
        Ok((Vec::new(), false))
    }
}

/// Applies edits recorded against the slots of `target`.
pub fn replay_edits(target: &[String], edits: &[Edit]) -> Result<Vec<String>> {
    let m = target.len();
    let slots = 2 * m + 1;
    let mut used = vec![false; slots];
    let mut claim = |s: usize| -> Result<()> {
        if s >= slots {
            return Err(Error::Contract(format!("edit slot {s} outside {slots} slots")));
        }
        if std::mem::replace(&mut used[s], true) {
            return Err(Error::Contract(format!("conflicting edits on slot {s}")));
        }
        Ok(())
    };
    let mut toks: Vec<Vec<String>> = target.iter().map(|t| vec![t.clone()]).collect();
    let mut inserts: Vec<Vec<String>> = vec![Vec::new(); m + 1];
    let mut swaps = Vec::new();
    for e in edits {
        claim(e.slot)?;
        let kind = SlotKind::of(e.slot);
        let want = if e.op == EditOp::Insert { SlotKind::Gap } else { SlotKind::Token };
        if kind != want {
            return Err(Error::Contract(format!("{:?} edit on a {kind:?} slot {}", e.op, e.slot)));
        }
        let j = e.slot / 2;
        match e.op {
            EditOp::Insert => inserts[j] = e.tokens.clone(),
            EditOp::Delete => toks[j].clear(),
            EditOp::Replace => toks[j] = e.tokens.clone(),
            EditOp::Swap => {
                if j + 1 >= m {
                    return Err(Error::Contract(format!("swap at slot {} has no right neighbour", e.slot)));
                }
                claim(token_slot(j + 1))?;
                swaps.push(j);
            }
        }
    }
    for j in swaps {
        toks.swap(j, j + 1);
    }
    let mut out = Vec::new();
    for j in 0..=m {
        out.extend(inserts[j].iter().cloned());
        if j < m {
            out.extend(toks[j].iter().cloned());
        }
    }
    Ok(out)
}

/// Greedy left-to-right pairing of adjacent ORDER tokens.
pub fn order_pairs(lattice: &TagLattice) -> Vec<usize> {
    let m = lattice.target_len();
    let mut out = Vec::new();
    let mut j = 0;
    while j + 1 < m {
        if lattice.token_tag(j) == ErrorTag::Order && lattice.token_tag(j + 1) == ErrorTag::Order {
            out.push(j);
            j += 2;
        } else {
            j += 1;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
enum Piece {
    /// A gap; `Some(slot)` when flagged OMISSION.
    Gap(Option<usize>),
    Fixed(String),
    /// A REPLACEMENT token slot.
    Hole(usize),
}

/// Target after deletions and swaps, with holes at REPLACEMENT tokens and
/// OMISSION gaps. Gaps merged by a deletion keep the first flagged slot.
fn intermediate(target: &[String], lattice: &TagLattice) -> Vec<Piece> {
    let m = target.len();
    let mut toks: Vec<String> = target.to_vec();
    for j in order_pairs(lattice) {
        toks.swap(j, j + 1);
    }
    let gap = |g: usize| (lattice.gap_tag(g) == ErrorTag::Omission).then_some(gap_slot(g));
    let mut out = vec![Piece::Gap(gap(0))];
    for j in 0..m {
        match lattice.token_tag(j) {
            ErrorTag::Insertion => {
                if let Some(Piece::Gap(prev)) = out.last_mut() {
                    *prev = prev.or(gap(j + 1));
                }
                continue;
            }
            ErrorTag::Replacement => out.push(Piece::Hole(token_slot(j))),
            _ => out.push(Piece::Fixed(toks[j].clone())),
        }
        out.push(Piece::Gap(gap(j + 1)));
    }
    out
}

/// Minimum-cost alignment of `pieces` to `reference`; returns the cost and
/// the reference span consumed by each piece.
fn align_pieces(pieces: &[Piece], reference: &[String]) -> (usize, Vec<(usize, usize)>) {
    let (p_n, r_n) = (pieces.len(), reference.len());
    const INF: usize = usize::MAX / 2;
    let mut cost = vec![vec![INF; r_n + 1]; p_n + 1];
    let mut back = vec![vec![0usize; r_n + 1]; p_n + 1];
    cost[0][0] = 0;
    for p in 0..p_n {
        for j in 0..=r_n {
            let base = cost[p][j];
            if base >= INF {
                continue;
            }
            let mut relax = |take: usize, c: usize| {
                if j + take <= r_n && base + c < cost[p + 1][j + take] {
                    cost[p + 1][j + take] = base + c;
                    back[p + 1][j + take] = take;
                }
            };
            match &pieces[p] {
                Piece::Fixed(t) => {
                    if j < r_n {
                        relax(1, usize::from(reference[j] != *t));
                    }
                    relax(0, 1);
                }
                Piece::Hole(_) => {
                    relax(1, 0);
                    relax(0, 1);
                }
                Piece::Gap(Some(_)) => {
                    for take in 1..=r_n - j {
                        relax(take, 0);
                    }
                    relax(0, 1);
                }
                Piece::Gap(None) => {
                    for take in 0..=r_n - j {
                        relax(take, take);
                    }
                }
            }
        }
    }
    let mut spans = vec![(0, 0); p_n];
    let mut j = r_n;
    for p in (1..=p_n).rev() {
        let take = back[p][j];
        spans[p - 1] = (j - take, j);
        j -= take;
    }
    (cost[p_n][r_n], spans)
}

/// Per flagged slot, the reference tokens that fill it.
pub fn fills_from(target: &[String], lattice: &TagLattice, reference: &[String]) -> (usize, Vec<(usize, Vec<String>)>) {
    let pieces = intermediate(target, lattice);
    let (cost, spans) = align_pieces(&pieces, reference);
    let fills = pieces
        .iter()
        .zip(spans)
        .filter_map(|(p, (a, b))| match p {
            Piece::Hole(s) | Piece::Gap(Some(s)) => Some((*s, reference[a..b].to_vec())),
            _ => None,
        })
        .collect();
    (cost, fills)
}

/// Gold fills for training the decoder; `None` when the reference cannot be
/// reached from the target under the lattice at zero cost.
pub fn reference_fills(target: &[String], lattice: &TagLattice, reference: &[String]) -> Option<Vec<(usize, Vec<String>)>> {
    let (cost, fills) = fills_from(target, lattice, reference);
    (cost == 0).then_some(fills)
}

/// Turns a tagged target into edits and the corrected sentence.
///
/// ORDER pairs are swapped, INSERTION tokens deleted. REPLACEMENT and
/// OMISSION slots take material from a memory hit at `threshold` or above,
/// else from `decoder`; a slot with no proposal is left as is.
pub fn apply_corrections(
    id: &str,
    source: &[String],
    target: &[String],
    lattice: &TagLattice,
    decoder: &mut dyn SpanDecoder,
    tm: Option<&TranslationMemory>,
    threshold: f64,
) -> Result<Correction> {
    if lattice.target_len() != target.len() {
        return Err(Error::Data(format!(
            "pair {id}: lattice covers {} tokens, target has {}",
            lattice.target_len(),
            target.len()
        )));
    }
    let mut edits = Vec::new();
    for j in order_pairs(lattice) {
        edits.push(Edit {
            slot: token_slot(j),
            op: EditOp::Swap,
            tokens: Vec::new(),
        });
    }
    for j in 0..target.len() {
        if lattice.token_tag(j) == ErrorTag::Insertion {
            edits.push(Edit {
                slot: token_slot(j),
                op: EditOp::Delete,
                tokens: Vec::new(),
            });
        }
    }
    let holes: Vec<(usize, ErrorTag)> = intermediate(target, lattice)
        .iter()
        .filter_map(|p| match p {
            Piece::Hole(s) => Some((*s, ErrorTag::Replacement)),
            Piece::Gap(Some(s)) => Some((*s, ErrorTag::Omission)),
            _ => None,
        })
        .collect();
    let tm_fills: Vec<(usize, Vec<String>)> = tm
        .and_then(|tm| tm.lookup(source, threshold))
        .map(|hit| fills_from(target, lattice, hit.target).1)
        .unwrap_or_default();
    let mut truncated = false;
    for (slot, tag) in holes {
        let from_tm = tm_fills.iter().find(|(s, _)| *s == slot).map(|(_, t)| t.clone());
        let tokens = match from_tm {
            Some(t) if !t.is_empty() => t,
            _ => {
                let (t, cut) = decoder.decode_span(slot, tag)?;
                truncated |= cut;
                t
            }
        };
        if tokens.is_empty() {
            continue;
        }
        let op = if tag == ErrorTag::Replacement { EditOp::Replace } else { EditOp::Insert };
        edits.push(Edit { slot, op, tokens });
    }
    edits.sort_by_key(|e| e.slot);
    let corrected = replay_edits(target, &edits)?;
    Ok(Correction {
        id: id.to_string(),
        edits,
        corrected,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ErrorTag::*;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn lat(v: &[ErrorTag]) -> TagLattice {
        TagLattice::new(v.to_vec()).unwrap()
    }

    #[test]
    fn all_ok_is_identity() {
        let tgt = t("a b c");
        let c = apply_corrections("x", &t("s"), &tgt, &TagLattice::all_ok(3), &mut NoDecoder, None, 0.8).unwrap();
        assert_eq!(c.corrected, tgt);
        assert!(c.edits.is_empty());
    }

    #[test]
    fn insertion_deletes_token() {
        let l = lat(&[Ok, Ok, Ok, Insertion, Ok, Ok, Ok]);
        let c = apply_corrections("x", &t("s"), &t("a b c"), &l, &mut NoDecoder, None, 0.8).unwrap();
        assert_eq!(c.corrected, t("a c"));
    }

    #[test]
    fn order_pairs_swap_once() {
        let l = lat(&[Ok, Order, Ok, Order, Ok, Order, Ok]);
        let c = apply_corrections("x", &t("s"), &t("b a c"), &l, &mut NoDecoder, None, 0.8).unwrap();
        assert_eq!(c.corrected, t("a b c"));
        assert_eq!(c.edits.len(), 1);
    }

    #[test]
    fn tm_fills_holes() {
        let tm = TranslationMemory::from_pairs([(t("s1 s2 s3 s4"), t("a b c d"))]);
        let l = lat(&[Ok, Ok, Omission, Replacement, Ok, Ok, Ok]);
        let c = apply_corrections("x", &t("s1 s2 s3 s4"), &t("a q d"), &l, &mut NoDecoder, Some(&tm), 0.8).unwrap();
        assert_eq!(c.corrected, t("a b c d"));
        assert_eq!(replay_edits(&t("a q d"), &c.edits).unwrap(), c.corrected);
    }

    #[test]
    fn decoder_fallback() {
        struct Fixed;
        impl SpanDecoder for Fixed {
            fn decode_span(&mut self, _: usize, _: ErrorTag) -> Result<(Vec<String>, bool)> {
                Result::Ok((vec!["z".into()], true))
            }
        }
        let l = lat(&[Omission, Replacement, Ok]);
        let c = apply_corrections("x", &t("s"), &t("a"), &l, &mut Fixed, None, 0.8).unwrap();
        assert_eq!(c.corrected, t("z z"));
        assert!(c.truncated);
    }

    #[test]
    fn replay_rejects_conflicts() {
        let e = |slot, op| Edit {
            slot,
            op,
            tokens: vec![],
        };
        let tgt = t("a b c");
        assert!(matches!(
            replay_edits(&tgt, &[e(1, EditOp::Delete), e(1, EditOp::Delete)]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            replay_edits(&tgt, &[e(1, EditOp::Swap), e(3, EditOp::Delete)]),
            Err(Error::Contract(_))
        ));
        assert!(replay_edits(&tgt, &[e(5, EditOp::Swap)]).is_err());
        assert!(replay_edits(&tgt, &[e(2, EditOp::Delete)]).is_err());
    }

    #[test]
    fn gold_fills() {
        let l = lat(&[Omission, Replacement, Ok, Insertion, Omission]);
        let fills = reference_fills(&t("q x"), &l, &t("a b c")).unwrap();
        assert_eq!(fills, vec![(0, t("a")), (1, t("b")), (4, t("c"))]);
        assert!(reference_fills(&t("q x"), &TagLattice::all_ok(2), &t("a b c")).is_none());
    }
}
