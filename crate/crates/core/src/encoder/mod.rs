//! Token ids to context vectors: embeddings, a multi-width convolution
//! bank projected to the model width, then post-norm transformer blocks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Additive score for masked attention keys.
pub const MASK_SCORE: f64 = -1e9;
pub const LN_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kernel_sizes: Vec<usize>,
    pub filters_per_kernel: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_k: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kernel_sizes: vec![1, 2, 3, 4, 5],
            filters_per_kernel: 16,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_k: 16,
            d_ff: 128,
            max_len: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("filters_per_kernel", self.filters_per_kernel),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_k", self.d_k),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.kernel_sizes.is_empty() || self.kernel_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "kernel sizes must be a non-empty list of positive widths, got {:?}",
                self.kernel_sizes
            )));
        }
        if self.n_heads * self.d_k != self.d_model {
            return Err(Error::Config(format!(
                "n_heads * d_k = {} * {} does not equal d_model = {}",
                self.n_heads, self.d_k, self.d_model
            )));
        }
        Ok(())
    }
}

/// Per-token encoder outputs with the padding mask (`true` = padded).
#[derive(Clone, Debug, PartialEq)]
pub struct ContextVectors {
    pub values: Tensor,
    pub pad_mask: Vec<bool>,
}

/// One encoder input row set. `positions` index the positional table and
/// `segments` the segment table (0 or 1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderInput {
    pub ids: Vec<usize>,
    pub positions: Vec<usize>,
    pub segments: Vec<usize>,
    pub pad_mask: Vec<bool>,
}

impl EncoderInput {
    pub fn single(ids: &[usize], pad_mask: &[bool]) -> Self {
        Self {
            ids: ids.to_vec(),
            positions: (0..ids.len()).collect(),
            segments: vec![0; ids.len()],
            pad_mask: pad_mask.to_vec(),
        }
    }

    /// `[src ; sep ; tgt]` with positions restarting for the target segment.
    /// The separator belongs to the source segment.
    pub fn pair(src: &[usize], sep: usize, tgt: &[usize]) -> Self {
        let n = src.len() + 1;
        let mut ids = src.to_vec();
        ids.push(sep);
        ids.extend_from_slice(tgt);
        let positions = (0..n).chain(0..tgt.len()).collect();
        let segments = std::iter::repeat_n(0, n).chain(std::iter::repeat_n(1, tgt.len())).collect();
        Self {
            pad_mask: vec![false; ids.len()],
            ids,
            positions,
            segments,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct BlockParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
}

impl BlockParams {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &EncoderConfig, rng: &mut Rng) -> Self {
        let d = cfg.d_model;
        let mut w = |name: &str, r: usize, c: usize, rng: &mut Rng| {
            store.add_xavier(format!("{prefix}.{name}"), &[r, c], r, c, rng)
        };
        let wq = w("wq", d, d, rng);
        let wk = w("wk", d, d, rng);
        let wv = w("wv", d, d, rng);
        let wo = w("wo", d, d, rng);
        let w1 = w("w1", d, cfg.d_ff, rng);
        let w2 = w("w2", cfg.d_ff, d, rng);
        let mut z = |name: &str, n: usize, v: f64| store.add(format!("{prefix}.{name}"), Tensor::full(&[n], v));
        Self {
            wq,
            bq: z("bq", d, 0.0),
            wk,
            bk: z("bk", d, 0.0),
            wv,
            bv: z("bv", d, 0.0),
            wo,
            bo: z("bo", d, 0.0),
            ln1_g: z("ln1_g", d, 1.0),
            ln1_b: z("ln1_b", d, 0.0),
            w1,
            b1: z("b1", cfg.d_ff, 0.0),
            w2,
            b2: z("b2", d, 0.0),
            ln2_g: z("ln2_g", d, 1.0),
            ln2_b: z("ln2_b", d, 0.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub vocab_size: usize,
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub seg_emb: ParamId,
    pub kernels: Vec<(usize, ParamId)>,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub blocks: Vec<BlockParams>,
}

/// `[Lq×Lk]` additive mask with `MASK_SCORE` on padded key columns.
fn key_mask_matrix(rows: usize, key_mask: &[bool]) -> Result<Tensor> {
    if key_mask.iter().all(|&m| m) {
        return Err(Error::Contract("attention needs at least one unmasked key".into()));
    }
    let row: Vec<f64> = key_mask.iter().map(|&m| if m { MASK_SCORE } else { 0.0 }).collect();
    Tensor::matrix(rows, key_mask.len(), row.repeat(rows))
}

/// Row-softmax of `QKᵀ/√d_k` with padded keys masked out.
pub fn attention_weights(g: &mut Graph, q: Var, k: Var, key_mask: &[bool]) -> Result<Var> {
    let (lq, dq) = g.value(q).dims2();
    let (lk, dk) = g.value(k).dims2();
    if dq != dk {
        return Err(Error::shape("scaled_dot_attention", g.shape(q), g.shape(k)));
    }
    if key_mask.len() != lk {
        return Err(Error::shape("scaled_dot_attention", g.shape(k), &[key_mask.len()]));
    }
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (dk as f64).sqrt());
    let scores = if key_mask.iter().any(|&m| m) {
        let mask = g.constant(key_mask_matrix(lq, key_mask)?);
        g.add(scores, mask)?
    } else {
        if lk == 0 {
            return Err(Error::Contract("attention needs at least one unmasked key".into()));
        }
        scores
    };
    g.softmax(scores, 1)
}

pub fn scaled_dot_attention(g: &mut Graph, q: Var, k: Var, v: Var, key_mask: &[bool]) -> Result<Var> {
    let w = attention_weights(g, q, k, key_mask)?;
    g.matmul(w, v)
}

fn linear(g: &mut Graph, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let w = g.param(w);
    let b = g.param(b);
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

/// Multi-head attention, residual + norm, then feed-forward, residual + norm.
pub fn encoder_block(g: &mut Graph, x: Var, pad_mask: &[bool], p: &BlockParams, cfg: &EncoderConfig) -> Result<Var> {
    let q = linear(g, x, p.wq, p.bq)?;
    let k = linear(g, x, p.wk, p.bk)?;
    let v = linear(g, x, p.wv, p.bv)?;
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let qh = g.slice_cols(q, h * cfg.d_k, cfg.d_k)?;
        let kh = g.slice_cols(k, h * cfg.d_k, cfg.d_k)?;
        let vh = g.slice_cols(v, h * cfg.d_k, cfg.d_k)?;
        heads.push(scaled_dot_attention(g, qh, kh, vh, pad_mask)?);
    }
    let cat = g.concat_cols(&heads)?;
    let att = linear(g, cat, p.wo, p.bo)?;
    let r1 = g.add(x, att)?;
    let (g1, b1) = (g.param(p.ln1_g), g.param(p.ln1_b));
    let x1 = g.layer_norm(r1, g1, b1, LN_EPS)?;
    let h = linear(g, x1, p.w1, p.b1)?;
    let h = g.gelu(h);
    let f = linear(g, h, p.w2, p.b2)?;
    let r2 = g.add(x1, f)?;
    let (g2, b2) = (g.param(p.ln2_g), g.param(p.ln2_b));
    g.layer_norm(r2, g2, b2, LN_EPS)
}

impl Encoder {
    pub fn new(store: &mut ParamStore, prefix: &str, vocab_size: usize, config: EncoderConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        let d = config.d_model;
        let tok_emb = store.add_xavier(format!("{prefix}.tok_emb"), &[vocab_size, d], vocab_size, d, rng);
        let pos_emb = store.add_xavier(format!("{prefix}.pos_emb"), &[config.max_len, d], config.max_len, d, rng);
        let seg_emb = store.add_xavier(format!("{prefix}.seg_emb"), &[2, d], 2, d, rng);
        let f = config.filters_per_kernel;
        let kernels = config
            .kernel_sizes
            .iter()
            .map(|&k| (k, store.add_xavier(format!("{prefix}.conv{k}"), &[k, d, f], k * d, f, rng)))
            .collect();
        let bank = f * config.kernel_sizes.len();
        let proj_w = store.add_xavier(format!("{prefix}.proj_w"), &[bank, d], bank, d, rng);
        let proj_b = store.add(format!("{prefix}.proj_b"), Tensor::zeros(&[d]));
        let blocks = (0..config.n_layers)
            .map(|i| BlockParams::new(store, &format!("{prefix}.block{i}"), &config, rng))
            .collect();
        Ok(Self {
            config,
            vocab_size,
            tok_emb,
            pos_emb,
            seg_emb,
            kernels,
            proj_w,
            proj_b,
            blocks,
        })
    }

    fn check(&self, input: &EncoderInput) -> Result<()> {
        let n = input.len();
        if n == 0 {
            return Err(Error::Input("cannot encode an empty sequence".into()));
        }
        if input.positions.len() != n || input.segments.len() != n || input.pad_mask.len() != n {
            return Err(Error::Input("encoder input fields differ in length".into()));
        }
        if let Some(&p) = input.positions.iter().find(|&&p| p >= self.config.max_len) {
            return Err(Error::Input(format!(
                "sequence of length {} exceeds max_len {}",
                p + 1,
                self.config.max_len
            )));
        }
        if let Some(&id) = input.ids.iter().find(|&&id| id >= self.vocab_size) {
            return Err(Error::Input(format!("token id {id} outside vocabulary of {}", self.vocab_size)));
        }
        if input.segments.iter().any(|&s| s > 1) {
            return Err(Error::Input("segment ids must be 0 or 1".into()));
        }
        Ok(())
    }

    /// Token + positional + segment embeddings, zeroed at padded rows.
    pub fn embed(&self, g: &mut Graph, input: &EncoderInput) -> Result<Var> {
        self.check(input)?;
        let tok = g.param(self.tok_emb);
        let pos = g.param(self.pos_emb);
        let seg = g.param(self.seg_emb);
        let e = g.gather_rows(tok, &input.ids)?;
        let p = g.gather_rows(pos, &input.positions)?;
        let s = g.gather_rows(seg, &input.segments)?;
        let e = g.add(e, p)?;
        let e = g.add(e, s)?;
        if input.pad_mask.iter().any(|&m| m) {
            let d = self.config.d_model;
            let keep: Vec<f64> = input
                .pad_mask
                .iter()
                .flat_map(|&m| std::iter::repeat_n(if m { 0.0 } else { 1.0 }, d))
                .collect();
            let keep = g.constant(Tensor::matrix(input.len(), d, keep)?);
            g.mul(e, keep)
        } else {
            Ok(e)
        }
    }

    /// Convolution bank, linear projection to `d_model`, GELU.
    pub fn cnn_ngram_features(&self, g: &mut Graph, embedded: Var) -> Result<Var> {
        let d = self.config.d_model;
        let (_, d_in) = g.value(embedded).dims2();
        if d_in != d {
            return Err(Error::Config(format!("embedding width {d_in} does not match d_model {d}")));
        }
        let kernels: Vec<(usize, Var)> = self.kernels.iter().map(|&(k, w)| (k, g.param(w))).collect();
        let maps = g.conv1d_bank(embedded, &kernels)?;
        let proj = linear(g, maps, self.proj_w, self.proj_b)?;
        Ok(g.gelu(proj))
    }

    pub fn forward(&self, g: &mut Graph, input: &EncoderInput) -> Result<Var> {
        let e = self.embed(g, input)?;
        let mut x = self.cnn_ngram_features(g, e)?;
        for b in &self.blocks {
            x = encoder_block(g, x, &input.pad_mask, b, &self.config)?;
        }
        Ok(x)
    }

    /// Inference-only encoding of a single sequence.
    pub fn encode_sequence(&self, store: &ParamStore, ids: &[usize], pad_mask: &[bool]) -> Result<ContextVectors> {
        let mut g = Graph::with_params(store);
        let out = self.forward(&mut g, &EncoderInput::single(ids, pad_mask))?;
        Ok(ContextVectors {
            values: g.value(out).clone(),
            pad_mask: pad_mask.to_vec(),
        })
    }
}
