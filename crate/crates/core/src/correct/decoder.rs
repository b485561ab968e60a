use serde::{Deserialize, Serialize};

use super::gru::{gru_step, GruParams};
use crate::corpus::{BOS, EOS, PAD, UNK};
use crate::encoder::scaled_dot_attention;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub emb_dim: usize,
    pub hidden: usize,
    pub max_len: usize,
    /// 1 is greedy search.
    pub beam: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            emb_dim: 32,
            hidden: 64,
            max_len: 4,
            beam: 1,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.emb_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("decoder dimensions must be positive".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("decoder max_len must be at least 1".into()));
        }
        if !(1..=4).contains(&self.beam) {
            return Err(Error::Config(format!("beam width must be 1..=4, got {}", self.beam)));
        }
        Ok(())
    }
}

/// Attentive GRU decoder conditioned on a span feature vector.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub vocab_size: usize,
    pub d_ctx: usize,
    pub d_span: usize,
    pub emb: ParamId,
    pub init_w: ParamId,
    pub init_b: ParamId,
    pub attn_w: ParamId,
    pub gru: GruParams,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodeOutput {
    /// Emitted ids, without the closing EOS.
    pub ids: Vec<usize>,
    /// Decoding stopped at `max_len` without producing EOS.
    pub truncated: bool,
    pub steps: usize,
}

fn never_emitted(id: usize) -> bool {
    id == PAD || id == UNK || id == BOS
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        vocab_size: usize,
        d_ctx: usize,
        d_span: usize,
        config: DecoderConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        if vocab_size <= EOS {
            return Err(Error::Config("decoder vocabulary lacks reserved tokens".into()));
        }
        let (e, h) = (config.emb_dim, config.hidden);
        let emb = store.add_xavier(format!("{prefix}.emb"), &[vocab_size, e], vocab_size, e, rng);
        let init_w = store.add_xavier(format!("{prefix}.init_w"), &[d_span, h], d_span, h, rng);
        let init_b = store.add(format!("{prefix}.init_b"), Tensor::zeros(&[h]));
        let attn_w = store.add_xavier(format!("{prefix}.attn_w"), &[h, d_ctx], h, d_ctx, rng);
        let gru = GruParams::new(store, &format!("{prefix}.gru"), e + d_ctx, h, rng);
        let out_w = store.add_xavier(format!("{prefix}.out_w"), &[h + d_ctx, vocab_size], h + d_ctx, vocab_size, rng);
        let out_b = store.add(format!("{prefix}.out_b"), Tensor::zeros(&[vocab_size]));
        Ok(Self {
            config,
            vocab_size,
            d_ctx,
            d_span,
            emb,
            init_w,
            init_b,
            attn_w,
            gru,
            out_w,
            out_b,
        })
    }

    /// `h0 = tanh(span·W + b)`.
    pub fn init_state(&self, g: &mut Graph, span: Var) -> Result<Var> {
        let (w, b) = (g.param(self.init_w), g.param(self.init_b));
        let h = g.matmul(span, w)?;
        let h = g.add_row(h, b)?;
        Ok(g.tanh(h))
    }

    /// One step from `prev` returning the new state and output logits.
    pub fn step(&self, g: &mut Graph, prev: usize, h: Var, src: Var, src_mask: &[bool]) -> Result<(Var, Var)> {
        let aw = g.param(self.attn_w);
        let q = g.matmul(h, aw)?;
        let ctx = scaled_dot_attention(g, q, src, src, src_mask)?;
        let emb = g.param(self.emb);
        let e = g.gather_rows(emb, &[prev])?;
        let x = g.concat_cols(&[e, ctx])?;
        let h = gru_step(g, x, h, &self.gru)?;
        let o = g.concat_cols(&[h, ctx])?;
        let (w, b) = (g.param(self.out_w), g.param(self.out_b));
        let logits = g.matmul(o, w)?;
        let logits = g.add_row(logits, b)?;
        Ok((h, logits))
    }

    /// Teacher-forced summed token cross-entropy; `target` ends with EOS.
    pub fn loss(&self, g: &mut Graph, span: Var, src: Var, src_mask: &[bool], target: &[usize]) -> Result<Var> {
        if target.is_empty() {
            return Err(Error::Data("empty correction target".into()));
        }
        let mut h = self.init_state(g, span)?;
        let mut prev = BOS;
        let mut rows = Vec::with_capacity(target.len());
        for &y in target {
            let (nh, logits) = self.step(g, prev, h, src, src_mask)?;
            rows.push(logits);
            h = nh;
            prev = y;
        }
        let logits = g.concat_rows(&rows)?;
        g.softmax_cross_entropy(logits, target)
    }

    /// Greedy (beam 1) or beam search; ties go to the lower token id.
    pub fn decode(&self, store: &ParamStore, span: &Tensor, src: &Tensor, src_mask: &[bool], max_len: usize) -> Result<DecodeOutput> {
        if max_len == 0 {
            return Err(Error::Config("decoder max_len must be at least 1".into()));
        }
        struct Hyp {
            ids: Vec<usize>,
            score: f64,
            h: Tensor,
        }
        let h0 = {
            let mut g = Graph::with_params(store);
            let s = g.constant(span.clone());
            let h = self.init_state(&mut g, s)?;
            g.value(h).clone()
        };
        let k = self.config.beam;
        let mut live = vec![Hyp {
            ids: Vec::new(),
            score: 0.0,
            h: h0,
        }];
        let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
        let mut steps = 0;
        while !live.is_empty() && steps < max_len {
            steps += 1;
            let mut cands: Vec<(f64, usize, usize, Tensor)> = Vec::new();
            for (hi, hyp) in live.iter().enumerate() {
                let mut g = Graph::with_params(store);
                let src_v = g.constant(src.clone());
                let hv = g.constant(hyp.h.clone());
                let prev = hyp.ids.last().copied().unwrap_or(BOS);
                let (nh, logits) = self.step(&mut g, prev, hv, src_v, src_mask)?;
                let row = g.value(logits).data();
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                let mut scored: Vec<(f64, usize)> = row
                    .iter()
                    .enumerate()
                    .filter(|(id, _)| !never_emitted(*id))
                    .map(|(id, v)| (hyp.score + v - lse, id))
                    .collect();
                scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                let h_new = g.value(nh).clone();
                for (sc, id) in scored.into_iter().take(k) {
                    cands.push((sc, hi, id, h_new.clone()));
                }
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::new();
            for (sc, hi, id, h) in cands.into_iter().take(k) {
                let mut ids = live[hi].ids.clone();
                if id == EOS {
                    finished.push((ids, sc));
                } else {
                    ids.push(id);
                    next.push(Hyp { ids, score: sc, h });
                }
            }
            live = next;
        }
        let best_done = finished
            .iter()
            .fold(None::<&(Vec<usize>, f64)>, |b, c| match b {
                Some(b) if b.1 >= c.1 => Some(b),
                _ => Some(c),
            });
        let best_live = live.first();
        Ok(match (best_done, best_live) {
            (Some(d), Some(l)) if l.score > d.1 => DecodeOutput {
                ids: l.ids.clone(),
                truncated: true,
                steps,
            },
            (Some(d), _) => DecodeOutput {
                ids: d.0.clone(),
                truncated: false,
                steps,
            },
            (None, Some(l)) => DecodeOutput {
                ids: l.ids.clone(),
                truncated: true,
                steps,
            },
            (None, None) => unreachable!("beam search always keeps a hypothesis"),
        })
    }
}
