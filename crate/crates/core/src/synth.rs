//! Deterministic toy bilingual corpus with exact gold alignments, plus
//! labelled error injection over the gap/token slot lattice.
//!
//! Source sentences follow `NP VERB [NP [ADV]]` with `NP = DET [ADJ] NOUN`.
//! The target side maps every word through a bijective lexicon and flips
//! adjective-noun order inside noun phrases.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::SentencePair;
use crate::error::{Error, Result};
use crate::lattice::{gap_slot, token_slot, ErrorTag, LabelRecord, TagLattice};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WordClass {
    Det,
    Adj,
    Noun,
    Verb,
    Adv,
}

/// Source/target word lists with a one-to-one translation mapping.
#[derive(Clone, Debug)]
pub struct Lexicon {
    source: Vec<String>,
    target: Vec<String>,
    classes: Vec<WordClass>,
    by_class: HashMap<WordClass, Vec<usize>>,
    src_index: HashMap<String, usize>,
    tgt_index: HashMap<String, usize>,
}

const SRC_CONS: &[u8] = b"bdgkmpt";
const SRC_VOW: &[u8] = b"aiu";
const TGT_CONS: &[u8] = b"flnrsvz";
const TGT_VOW: &[u8] = b"eoy";

fn syllable(i: usize, cons: &[u8], vow: &[u8]) -> String {
    let c = cons[i % cons.len()] as char;
    let v = vow[(i / cons.len()) % vow.len()] as char;
    format!("{c}{v}")
}

fn make_word(i: usize, cons: &[u8], vow: &[u8]) -> String {
    let base = cons.len() * vow.len();
    let a = i % base;
    let q = i / base;
    let mut w = syllable(a, cons, vow) + &syllable((q + 3 * a) % base, cons, vow);
    if q >= base {
        w.push_str(&syllable(q / base, cons, vow));
        w.push_str(&(q / base).to_string());
    }
    w
}

impl Lexicon {
    /// `size` words per side, split across five word classes.
    pub fn new(size: usize) -> Result<Self> {
        if size < 10 {
            return Err(Error::Config(format!("vocab_size must be at least 10, got {size}")));
        }
        let det = (size / 8).max(2);
        let adv = (size / 10).max(1);
        let rest = size - det - adv;
        let adj = (rest * 3 / 10).max(1);
        let verb = (rest * 3 / 10).max(1);
        let noun = rest - adj - verb;
        let mut classes = Vec::with_capacity(size);
        for (class, n) in [
            (WordClass::Det, det),
            (WordClass::Adj, adj),
            (WordClass::Noun, noun),
            (WordClass::Verb, verb),
            (WordClass::Adv, adv),
        ] {
            classes.extend(std::iter::repeat_n(class, n));
        }
        let source: Vec<String> = (0..size).map(|i| make_word(i, SRC_CONS, SRC_VOW)).collect();
        // permute target spellings so the mapping is not an index-order artefact
        let target: Vec<String> = (0..size)
            .map(|i| make_word(size - 1 - i, TGT_CONS, TGT_VOW))
            .collect();
        let mut by_class: HashMap<WordClass, Vec<usize>> = HashMap::new();
        for (i, c) in classes.iter().enumerate() {
            by_class.entry(*c).or_default().push(i);
        }
        let src_index = source.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let tgt_index = target.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let lex = Self {
            source,
            target,
            classes,
            by_class,
            src_index,
            tgt_index,
        };
        debug_assert_eq!(lex.src_index.len(), size);
        debug_assert_eq!(lex.tgt_index.len(), size);
        Ok(lex)
    }

    pub fn size(&self) -> usize {
        self.source.len()
    }

    pub fn source_words(&self) -> &[String] {
        &self.source
    }

    pub fn target_words(&self) -> &[String] {
        &self.target
    }

    pub fn translate(&self, src: &str) -> Option<&str> {
        self.src_index.get(src).map(|&i| self.target[i].as_str())
    }

    pub fn back_translate(&self, tgt: &str) -> Option<&str> {
        self.tgt_index.get(tgt).map(|&i| self.source[i].as_str())
    }

    fn target_class(&self, tgt: &str) -> Option<WordClass> {
        self.tgt_index.get(tgt).map(|&i| self.classes[i])
    }

    fn pick(&self, class: WordClass, rng: &mut Rng) -> usize {
        *rng.choose(&self.by_class[&class]).expect("every class is non-empty")
    }

    /// Inverse of the target reorder + lexicon mapping.
    pub fn target_to_source(&self, target: &[String]) -> Option<Vec<String>> {
        let mut src: Vec<String> = target
            .iter()
            .map(|t| self.back_translate(t).map(str::to_string))
            .collect::<Option<_>>()?;
        let mut j = 0;
        while j + 1 < target.len() {
            if self.target_class(&target[j]) == Some(WordClass::Noun)
                && self.target_class(&target[j + 1]) == Some(WordClass::Adj)
            {
                src.swap(j, j + 1);
                j += 2;
            } else {
                j += 1;
            }
        }
        Some(src)
    }
}

fn noun_phrase(lex: &Lexicon, rng: &mut Rng, out: &mut Vec<(usize, WordClass)>) {
    out.push((lex.pick(WordClass::Det, rng), WordClass::Det));
    if rng.bernoulli(0.5) {
        out.push((lex.pick(WordClass::Adj, rng), WordClass::Adj));
    }
    out.push((lex.pick(WordClass::Noun, rng), WordClass::Noun));
}

/// Generates `n_pairs` sentence pairs with gold alignments.
pub fn generate_toy_parallel(n_pairs: usize, vocab_size: usize, rng: &mut Rng) -> Result<Vec<SentencePair>> {
    if n_pairs == 0 {
        return Err(Error::Config("n_pairs must be at least 1".into()));
    }
    let lex = Lexicon::new(vocab_size)?;
    Ok((0..n_pairs).map(|i| toy_pair(&lex, i, rng)).collect())
}

fn toy_pair(lex: &Lexicon, index: usize, rng: &mut Rng) -> SentencePair {
    let mut words: Vec<(usize, WordClass)> = Vec::new();
    noun_phrase(lex, rng, &mut words);
    words.push((lex.pick(WordClass::Verb, rng), WordClass::Verb));
    let shape = rng.below(4);
    if shape >= 1 {
        noun_phrase(lex, rng, &mut words);
    }
    if shape == 3 {
        words.push((lex.pick(WordClass::Adv, rng), WordClass::Adv));
    }
    // target order: source positions with ADJ NOUN flipped
    let mut order: Vec<usize> = (0..words.len()).collect();
    let mut k = 0;
    while k + 1 < words.len() {
        if words[k].1 == WordClass::Adj && words[k + 1].1 == WordClass::Noun {
            order.swap(k, k + 1);
            k += 2;
        } else {
            k += 1;
        }
    }
    let source = words.iter().map(|(w, _)| lex.source[*w].clone()).collect();
    let target = order.iter().map(|&s| lex.target[words[s].0].clone()).collect();
    let alignment = order.iter().enumerate().map(|(j, &i)| (i, j)).collect();
    SentencePair {
        id: format!("p{index:06}"),
        source,
        target,
        alignment: Some(alignment),
        ..Default::default()
    }
}

/// Per-kind corruption probabilities for each edit attempt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSpec {
    pub omission: f64,
    pub replacement: f64,
    pub insertion: f64,
    pub order: f64,
    pub max_errors_per_sentence: usize,
    /// One attempt per reference token instead of one per allowed error.
    #[serde(default)]
    pub per_token: bool,
    pub seed: u64,
}

impl ErrorSpec {
    /// Splits `total` evenly over the four kinds.
    pub fn uniform(total: f64, max_errors_per_sentence: usize, seed: u64) -> Self {
        let r = total / 4.0;
        Self {
            omission: r,
            replacement: r,
            insertion: r,
            order: r,
            max_errors_per_sentence,
            per_token: false,
            seed,
        }
    }

    /// Each reference token gets one attempt at rate `total`, uncapped.
    pub fn per_token(total: f64, seed: u64) -> Self {
        Self {
            max_errors_per_sentence: usize::MAX,
            per_token: true,
            ..Self::uniform(total, 0, seed)
        }
    }

    pub fn none() -> Self {
        Self::uniform(0.0, 0, 0)
    }

    pub fn total(&self) -> f64 {
        self.omission + self.replacement + self.insertion + self.order
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.omission, self.replacement, self.insertion, self.order];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) || self.total() > 1.0 + 1e-12 {
            return Err(Error::Config(format!("invalid error rates {rates:?}")));
        }
        Ok(())
    }
}

/// One injected edit, expressed on the corrupted sentence's slot lattice.
/// `original` holds what the slot had in the reference: the replaced token
/// for REPLACEMENT, the deleted token for OMISSION, nothing otherwise.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectedEdit {
    pub slot: usize,
    pub tag: ErrorTag,
    pub original: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorruptedPair {
    /// Corrupted target with updated alignment and gold tags.
    pub pair: SentencePair,
    /// The uncorrupted target.
    pub reference: Vec<String>,
    pub edits: Vec<InjectedEdit>,
}

impl CorruptedPair {
    pub fn lattice(&self) -> &TagLattice {
        self.pair.gold_tags.as_ref().expect("corrupted pairs carry gold tags")
    }

    pub fn label_record(&self) -> LabelRecord {
        LabelRecord {
            id: self.pair.id.clone(),
            slots: self.lattice().labels().to_vec(),
            reference: Some(self.reference.clone()),
            alignment: self.pair.alignment.clone(),
            scores: None,
        }
    }
}

#[derive(Clone, Debug)]
struct Item {
    tok: String,
    tag: ErrorTag,
    src: Option<usize>,
    original: Option<String>,
}

#[derive(Clone, Debug)]
struct Gap {
    tag: ErrorTag,
    omitted: Option<String>,
}

fn free_gap() -> Gap {
    Gap {
        tag: ErrorTag::Ok,
        omitted: None,
    }
}

/// Applies up to `spec.max_errors_per_sentence` non-overlapping edits.
///
/// Each attempt draws one kind with the configured probabilities (or no
/// edit). An attempt whose kind has no legal site is skipped. There is one
/// attempt per allowed error, or one per reference token with `per_token`.
pub fn inject_errors(
    pair: &SentencePair,
    spec: &ErrorSpec,
    vocabulary: &[String],
    rng: &mut Rng,
) -> Result<CorruptedPair> {
    spec.validate()?;
    let links = pair
        .alignment
        .as_ref()
        .ok_or_else(|| Error::Data(format!("pair {} has no gold alignment", pair.id)))?;
    let mut src_of = vec![None; pair.target.len()];
    for &(i, j) in links {
        if j >= pair.target.len() || i >= pair.source.len() {
            return Err(Error::Data(format!("pair {}: alignment link out of range", pair.id)));
        }
        src_of[j] = Some(i);
    }
    let mut items: Vec<Item> = pair
        .target
        .iter()
        .zip(&src_of)
        .map(|(t, s)| Item {
            tok: t.clone(),
            tag: ErrorTag::Ok,
            src: *s,
            original: None,
        })
        .collect();
    let mut gaps: Vec<Gap> = (0..=items.len()).map(|_| free_gap()).collect();

    let attempts = if spec.per_token {
        items.len()
    } else {
        spec.max_errors_per_sentence
    };
    let mut applied = 0;
    for _ in 0..attempts {
        if applied >= spec.max_errors_per_sentence {
            break;
        }
        let u = rng.next_f64();
        let mut acc = spec.omission;
        let kind = if u < acc {
            ErrorTag::Omission
        } else if u < {
            acc += spec.replacement;
            acc
        } {
            ErrorTag::Replacement
        } else if u < {
            acc += spec.insertion;
            acc
        } {
            ErrorTag::Insertion
        } else if u < acc + spec.order {
            ErrorTag::Order
        } else {
            continue;
        };
        if apply_edit(kind, &mut items, &mut gaps, vocabulary, rng) {
            applied += 1;
        }
    }

    let mut labels = Vec::with_capacity(2 * items.len() + 1);
    let mut edits = Vec::new();
    for (j, item) in items.iter().enumerate() {
        let g = &gaps[j];
        labels.push(g.tag);
        if let Some(o) = &g.omitted {
            edits.push(InjectedEdit {
                slot: gap_slot(j),
                tag: ErrorTag::Omission,
                original: vec![o.clone()],
            });
        }
        labels.push(item.tag);
        if item.tag.is_error() {
            edits.push(InjectedEdit {
                slot: token_slot(j),
                tag: item.tag,
                original: item.original.iter().cloned().collect(),
            });
        }
    }
    let last = &gaps[items.len()];
    labels.push(last.tag);
    if let Some(o) = &last.omitted {
        edits.push(InjectedEdit {
            slot: gap_slot(items.len()),
            tag: ErrorTag::Omission,
            original: vec![o.clone()],
        });
    }

    let alignment = items
        .iter()
        .enumerate()
        .filter(|(_, it)| it.tag != ErrorTag::Replacement)
        .filter_map(|(j, it)| it.src.map(|i| (i, j)))
        .collect::<Vec<_>>();
    let mut alignment = alignment;
    alignment.sort_unstable();
    let corrupted = SentencePair {
        id: pair.id.clone(),
        source: pair.source.clone(),
        target: items.iter().map(|it| it.tok.clone()).collect(),
        alignment: Some(alignment),
        gold_tags: Some(TagLattice::new(labels)?),
        annotations: pair.annotations.clone(),
    };
    Ok(CorruptedPair {
        pair: corrupted,
        reference: pair.target.clone(),
        edits,
    })
}

fn apply_edit(kind: ErrorTag, items: &mut Vec<Item>, gaps: &mut Vec<Gap>, vocabulary: &[String], rng: &mut Rng) -> bool {
    let n = items.len();
    let ok_tok = |k: usize| items[k].tag == ErrorTag::Ok;
    let ok_gap = |g: usize| gaps[g].tag == ErrorTag::Ok;
    match kind {
        ErrorTag::Omission => {
            if n < 2 {
                return false;
            }
            let sites: Vec<usize> = (0..n)
                .filter(|&k| ok_tok(k) && items[k].src.is_some() && ok_gap(k) && ok_gap(k + 1))
                .collect();
            let Some(&k) = rng.choose(&sites) else { return false };
            let removed = items.remove(k);
            gaps.remove(k + 1);
            gaps[k] = Gap {
                tag: ErrorTag::Omission,
                omitted: Some(removed.tok),
            };
            true
        }
        ErrorTag::Replacement => {
            let sites: Vec<usize> = (0..n).filter(|&k| ok_tok(k)).collect();
            let Some(&k) = rng.choose(&sites) else { return false };
            let options: Vec<&String> = vocabulary.iter().filter(|w| **w != items[k].tok).collect();
            let Some(&new) = rng.choose(&options) else { return false };
            let it = &mut items[k];
            it.original = Some(std::mem::replace(&mut it.tok, new.clone()));
            it.tag = ErrorTag::Replacement;
            true
        }
        ErrorTag::Insertion => {
            let sites: Vec<usize> = (0..=n)
                .filter(|&g| {
                    ok_gap(g)
                        && !(g > 0
                            && g < n
                            && items[g - 1].tag == ErrorTag::Order
                            && items[g].tag == ErrorTag::Order)
                })
                .collect();
            let Some(&g) = rng.choose(&sites) else { return false };
            let Some(tok) = rng.choose(vocabulary) else { return false };
            items.insert(
                g,
                Item {
                    tok: tok.clone(),
                    tag: ErrorTag::Insertion,
                    src: None,
                    original: None,
                },
            );
            gaps.insert(g + 1, free_gap());
            true
        }
        ErrorTag::Order => {
            if n < 2 {
                return false;
            }
            let sites: Vec<usize> = (0..n - 1)
                .filter(|&k| ok_tok(k) && ok_tok(k + 1) && ok_gap(k + 1) && items[k].tok != items[k + 1].tok)
                .collect();
            let Some(&k) = rng.choose(&sites) else { return false };
            items.swap(k, k + 1);
            items[k].tag = ErrorTag::Order;
            items[k + 1].tag = ErrorTag::Order;
            true
        }
        ErrorTag::Ok => false,
    }
}

/// Undoes recorded edits on a corrupted target.
pub fn invert_edits(corrupted: &[String], edits: &[InjectedEdit]) -> Result<Vec<String>> {
    let m = corrupted.len();
    let mut tokens: Vec<Option<String>> = corrupted.iter().cloned().map(Some).collect();
    let mut inserts: Vec<Vec<String>> = vec![Vec::new(); m + 1];
    let mut order_slots = Vec::new();
    for e in edits {
        match e.tag {
            ErrorTag::Omission if e.slot % 2 == 0 && e.slot / 2 <= m => {
                inserts[e.slot / 2] = e.original.clone();
            }
            ErrorTag::Replacement | ErrorTag::Insertion | ErrorTag::Order if e.slot % 2 == 1 && e.slot / 2 < m => {
                let j = e.slot / 2;
                match e.tag {
                    ErrorTag::Replacement => {
                        let orig = e.original.first().ok_or_else(|| Error::Data("replacement without original".into()))?;
                        tokens[j] = Some(orig.clone());
                    }
                    ErrorTag::Insertion => tokens[j] = None,
                    _ => order_slots.push(j),
                }
            }
            _ => return Err(Error::Data(format!("edit {e:?} does not fit a target of length {m}"))),
        }
    }
    order_slots.sort_unstable();
    for pair in order_slots.chunks(2) {
        if pair.len() != 2 || pair[1] != pair[0] + 1 {
            return Err(Error::Data("unpaired ORDER edit".into()));
        }
        tokens.swap(pair[0], pair[1]);
    }
    let mut out = Vec::new();
    for j in 0..=m {
        out.extend(inserts[j].iter().cloned());
        if j < m {
            if let Some(t) = tokens[j].take() {
                out.push(t);
            }
        }
    }
    Ok(out)
}

/// Corrupts a whole corpus, giving pair `i` the sub-stream `(spec.seed, i)`.
pub fn corrupt_corpus(pairs: &[SentencePair], spec: &ErrorSpec, vocabulary: &[String]) -> Result<Vec<CorruptedPair>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| inject_errors(p, spec, vocabulary, &mut Rng::derive(spec.seed, i as u64)))
        .collect()
}

/// Clean pairs and corruptions for one split of a desk-scale experiment.
pub fn toy_dataset(n_pairs: usize, vocab_size: usize, spec: &ErrorSpec, seed: u64) -> Result<Vec<CorruptedPair>> {
    let lex = Lexicon::new(vocab_size)?;
    let mut rng = Rng::new(seed);
    let clean: Vec<SentencePair> = (0..n_pairs).map(|i| toy_pair(&lex, i, &mut rng)).collect();
    corrupt_corpus(&clean, spec, lex.target_words())
}
