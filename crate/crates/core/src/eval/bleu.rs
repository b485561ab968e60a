use std::collections::HashMap;

use serde::Serialize;

/// Sentence- or corpus-level BLEU breakdown.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BleuResult {
    pub bleu: f64,
    pub brevity_penalty: f64,
    pub precisions: Vec<f64>,
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub hyp_length: usize,
    pub ref_length: usize,
    /// First n-gram order (1-based) whose precision was zero, if any.
    pub zero_order: Option<usize>,
    pub empty_hypothesis: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BleuConfig {
    pub max_order: usize,
    /// Add-one smoothing for orders 2 and up.
    pub smooth: bool,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self {
            max_order: 4,
            smooth: false,
        }
    }
}

fn ngram_counts<T: AsRef<str>>(toks: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    out
}

/// Clipped n-gram matches and the hypothesis n-gram total.
pub fn modified_ngram_precision<H: AsRef<str>, R: AsRef<str>>(hyp: &[H], refs: &[&[R]], n: usize) -> (usize, usize) {
    assert!(n >= 1, "n-gram order starts at 1");
    let counts = ngram_counts(hyp, n);
    let total = hyp.len().saturating_sub(n - 1);
    let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
    for r in refs {
        for (g, c) in ngram_counts(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let clipped = counts
        .iter()
        .map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    (clipped, total)
}

/// Reference length closest to `c`, ties going to the shorter one.
pub fn closest_ref_len(c: usize, ref_lens: impl IntoIterator<Item = usize>) -> usize {
    ref_lens
        .into_iter()
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

fn finish(matches: Vec<usize>, totals: Vec<usize>, c: usize, r: usize, cfg: BleuConfig) -> BleuResult {
    let mut precisions = Vec::with_capacity(cfg.max_order);
    let mut zero_order = None;
    for (i, (&m, &t)) in matches.iter().zip(&totals).enumerate() {
        let p = if cfg.smooth && i > 0 {
            (m as f64 + 1.0) / (t as f64 + 1.0)
        } else if t == 0 {
            0.0
        } else {
            m as f64 / t as f64
        };
        if p == 0.0 && zero_order.is_none() {
            zero_order = Some(i + 1);
        }
        precisions.push(p);
    }
    let empty = c == 0;
    let bp = if empty {
        0.0
    } else if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let bleu = if empty || zero_order.is_some() {
        0.0
    } else {
        let w = 1.0 / cfg.max_order as f64;
        bp * precisions.iter().map(|p| w * p.ln()).sum::<f64>().exp()
    };
    BleuResult {
        bleu,
        brevity_penalty: bp,
        precisions,
        matches,
        totals,
        hyp_length: c,
        ref_length: r,
        zero_order,
        empty_hypothesis: empty,
    }
}

pub fn bleu_score<H: AsRef<str>, R: AsRef<str>>(hyp: &[H], refs: &[&[R]], cfg: BleuConfig) -> BleuResult {
    assert!(!refs.is_empty(), "BLEU needs at least one reference");
    let (matches, totals) = (1..=cfg.max_order)
        .map(|n| modified_ngram_precision(hyp, refs, n))
        .unzip();
    let r = closest_ref_len(hyp.len(), refs.iter().map(|r| r.len()));
    finish(matches, totals, hyp.len(), r, cfg)
}

/// Corpus BLEU with a single reference per segment; counts and lengths are
/// summed over segments in input order before forming ratios.
pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(hyps: &[Vec<H>], refs: &[Vec<R>], cfg: BleuConfig) -> BleuResult {
    assert_eq!(hyps.len(), refs.len(), "corpus BLEU needs one reference per hypothesis");
    let mut matches = vec![0; cfg.max_order];
    let mut totals = vec![0; cfg.max_order];
    let (mut c, mut r) = (0, 0);
    for (h, rf) in hyps.iter().zip(refs) {
        for n in 1..=cfg.max_order {
            let (m, t) = modified_ngram_precision(h, &[rf.as_slice()], n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
        c += h.len();
        r += rf.len();
    }
    finish(matches, totals, c, r, cfg)
}
