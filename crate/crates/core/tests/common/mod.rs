#![allow(dead_code)]

use proofkit::correct::{apply_corrections, gru_step, Decoder, DecoderConfig, GruParams, NoDecoder, TranslationMemory};
use proofkit::detect::{crf_nll, log_partition, viterbi, CrfScores};
use proofkit::encoder::{encoder_block, scaled_dot_attention, BlockParams, EncoderConfig};
use proofkit::eval::{bleu_score, corpus_bleu, BleuConfig};
use proofkit::synth::{toy_dataset, ErrorSpec};
use proofkit::tensor::{Graph, ParamId, ParamStore, Tensor, Var};
use proofkit::Rng;

pub const FD_EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_INSTANCES: u64 = 10;

pub const OPS: [&str; 9] = [
    "matmul",
    "conv1d_bank",
    "softmax",
    "cross_entropy",
    "attention",
    "encoder_block",
    "crf_nll",
    "gru_step",
    "decoder_step",
];

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, falling back to the absolute error near zero.
pub fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let diff = norm(a.iter().zip(n).map(|(x, y)| x - y));
    let scale = norm(a.iter().copied()).max(norm(n.iter().copied()));
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

fn eval(store: &ParamStore, f: &dyn Fn(&mut Graph) -> Var) -> f64 {
    let mut g = Graph::with_params(store);
    let y = f(&mut g);
    g.value(y).item()
}

/// Worst per-parameter relative error between backprop and central
/// differences of the scalar `f`.
pub fn grad_error(store: &ParamStore, f: &dyn Fn(&mut Graph) -> Var) -> f64 {
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::with_params(store);
        let y = f(&mut g);
        let grads = g.backward(y).expect("backward");
        (0..store.len())
            .map(|id| match grads.param(id) {
                Some(t) => t.data().to_vec(),
                None => vec![0.0; store.get(id).value.len()],
            })
            .collect()
    };
    let mut s = store.clone();
    let mut worst: f64 = 0.0;
    for (id, a) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for (k, nk) in numeric.iter_mut().enumerate() {
            let orig = s.get(id).value.data()[k];
            s.get_mut(id).value.data_mut()[k] = orig + FD_EPS;
            let up = eval(&s, f);
            s.get_mut(id).value.data_mut()[k] = orig - FD_EPS;
            let down = eval(&s, f);
            s.get_mut(id).value.data_mut()[k] = orig;
            *nk = (up - down) / (2.0 * FD_EPS);
        }
        worst = worst.max(rel_error(a, &numeric));
    }
    worst
}

/// Reduces any output to a scalar through fixed random weights.
pub fn project(g: &mut Graph, y: Var) -> Var {
    let shape = g.shape(y).to_vec();
    let mut rng = Rng::new(0x5eed);
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let w = g.constant(Tensor::new(shape, w).unwrap());
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

pub fn random_param(s: &mut ParamStore, name: &str, shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> ParamId {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(lo, hi)).collect();
    s.add(name, Tensor::new(shape.to_vec(), data).unwrap())
}

/// Overwrites every parameter from `from` on with uniform noise.
pub fn jitter(s: &mut ParamStore, from: usize, rng: &mut Rng) {
    for id in from..s.len() {
        for v in s.get_mut(id).value.data_mut() {
            *v = rng.uniform(-1.0, 1.0);
        }
    }
}

fn dim(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn some_masked(rng: &mut Rng, n: usize) -> Vec<bool> {
    let mut m: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.3)).collect();
    m[rng.below(n)] = false;
    m
}

/// Gradient-check error of one seeded instance of `op`.
pub fn op_error(op: &str, seed: u64) -> f64 {
    let mut rng = Rng::derive(seed, 0x67ad);
    let mut s = ParamStore::new();
    match op {
        "matmul" => {
            let (m, k, n) = (dim(&mut rng, 1, 4), dim(&mut rng, 1, 5), dim(&mut rng, 1, 4));
            let a = random_param(&mut s, "a", &[m, k], -1.0, 1.0, &mut rng);
            let b = random_param(&mut s, "b", &[k, n], -1.0, 1.0, &mut rng);
            grad_error(&s, &|g| {
                let (a, b) = (g.param(a), g.param(b));
                let y = g.matmul(a, b).unwrap();
                project(g, y)
            })
        }
        "conv1d_bank" => {
            let (l, d) = (dim(&mut rng, 1, 6), dim(&mut rng, 1, 3));
            let x = random_param(&mut s, "x", &[l, d], -1.0, 1.0, &mut rng);
            let widths: Vec<usize> = (1..=5).filter(|_| rng.bernoulli(0.6)).collect();
            let widths = if widths.is_empty() { vec![3] } else { widths };
            let ws: Vec<(usize, ParamId)> = widths
                .iter()
                .map(|&k| {
                    let f = dim(&mut rng, 1, 3);
                    (k, random_param(&mut s, &format!("w{k}"), &[k, d, f], -1.0, 1.0, &mut rng))
                })
                .collect();
            grad_error(&s, &|g| {
                let x = g.param(x);
                let ks: Vec<(usize, Var)> = ws.iter().map(|&(k, w)| (k, g.param(w))).collect();
                let y = g.conv1d_bank(x, &ks).unwrap();
                project(g, y)
            })
        }
        "softmax" => {
            let (r, c) = (dim(&mut rng, 1, 4), dim(&mut rng, 2, 5));
            let x = random_param(&mut s, "x", &[r, c], -3.0, 3.0, &mut rng);
            let axis = (seed % 2) as usize;
            grad_error(&s, &|g| {
                let x = g.param(x);
                let y = g.softmax(x, axis).unwrap();
                project(g, y)
            })
        }
        "cross_entropy" => {
            let (r, c) = (dim(&mut rng, 1, 4), dim(&mut rng, 2, 5));
            let p = random_param(&mut s, "p", &[r, c], 0.05, 1.0, &mut rng);
            let mut y = vec![0.0; r * c];
            for i in 0..r {
                y[i * c + rng.below(c)] = 1.0;
            }
            let y = Tensor::matrix(r, c, y).unwrap();
            grad_error(&s, &|g| {
                let t = g.constant(y.clone());
                let p = g.param(p);
                g.cross_entropy(t, p).unwrap()
            })
        }
        "attention" => {
            let (lq, lk, d, dv) = (dim(&mut rng, 1, 4), dim(&mut rng, 1, 5), dim(&mut rng, 1, 4), dim(&mut rng, 1, 3));
            let q = random_param(&mut s, "q", &[lq, d], -1.0, 1.0, &mut rng);
            let k = random_param(&mut s, "k", &[lk, d], -1.0, 1.0, &mut rng);
            let v = random_param(&mut s, "v", &[lk, dv], -1.0, 1.0, &mut rng);
            let mask = some_masked(&mut rng, lk);
            grad_error(&s, &|g| {
                let (q, k, v) = (g.param(q), g.param(k), g.param(v));
                let y = scaled_dot_attention(g, q, k, v, &mask).unwrap();
                project(g, y)
            })
        }
        "encoder_block" => {
            let cfg = EncoderConfig {
                d_model: 4,
                n_heads: 2,
                d_k: 2,
                d_ff: 6,
                ..EncoderConfig::default()
            };
            let l = dim(&mut rng, 1, 5);
            let x = random_param(&mut s, "x", &[l, 4], -1.0, 1.0, &mut rng);
            let p = BlockParams::new(&mut s, "blk", &cfg, &mut rng);
            jitter(&mut s, 1, &mut rng);
            let mask = some_masked(&mut rng, l);
            grad_error(&s, &|g| {
                let x = g.param(x);
                let y = encoder_block(g, x, &mask, &p, &cfg).unwrap();
                project(g, y)
            })
        }
        "crf_nll" => {
            let (n, t) = (dim(&mut rng, 1, 6), dim(&mut rng, 2, 5));
            let e = random_param(&mut s, "e", &[n, t], -2.0, 2.0, &mut rng);
            let tr = random_param(&mut s, "trans", &[t, t], -2.0, 2.0, &mut rng);
            let st = random_param(&mut s, "start", &[t], -2.0, 2.0, &mut rng);
            let sp = random_param(&mut s, "stop", &[t], -2.0, 2.0, &mut rng);
            let gold: Vec<usize> = (0..n).map(|_| rng.below(t)).collect();
            grad_error(&s, &|g| {
                let (e, tr, st, sp) = (g.param(e), g.param(tr), g.param(st), g.param(sp));
                crf_nll(g, e, tr, st, sp, &gold).unwrap()
            })
        }
        "gru_step" => {
            let (rows, input, hidden) = (dim(&mut rng, 1, 3), dim(&mut rng, 1, 4), dim(&mut rng, 1, 4));
            let x = random_param(&mut s, "x", &[rows, input], -1.0, 1.0, &mut rng);
            let h = random_param(&mut s, "h", &[rows, hidden], -1.0, 1.0, &mut rng);
            let p = GruParams::new(&mut s, "gru", input, hidden, &mut rng);
            jitter(&mut s, 2, &mut rng);
            grad_error(&s, &|g| {
                let (x, h) = (g.param(x), g.param(h));
                let y = gru_step(g, x, h, &p).unwrap();
                project(g, y)
            })
        }
        "decoder_step" => {
            let (vocab, d_ctx, hidden, l) = (dim(&mut rng, 5, 8), dim(&mut rng, 2, 4), dim(&mut rng, 2, 4), dim(&mut rng, 1, 4));
            let src = random_param(&mut s, "src", &[l, d_ctx], -1.0, 1.0, &mut rng);
            let h = random_param(&mut s, "h", &[1, hidden], -1.0, 1.0, &mut rng);
            let cfg = DecoderConfig {
                emb_dim: 3,
                hidden,
                max_len: 4,
                beam: 1,
            };
            let dec = Decoder::new(&mut s, "dec", vocab, d_ctx, 3, cfg, &mut rng).unwrap();
            jitter(&mut s, 2, &mut rng);
            let mask = some_masked(&mut rng, l);
            let prev = rng.below(vocab);
            grad_error(&s, &|g| {
                let (src, h) = (g.param(src), g.param(h));
                let (h, logits) = dec.step(g, prev, h, src, &mask).unwrap();
                let a = project(g, h);
                let b = project(g, logits);
                g.add(a, b).unwrap()
            })
        }
        other => panic!("unknown op {other}"),
    }
}

/// Worst error over the seeded instances of `op`.
pub fn op_worst(op: &str) -> f64 {
    (0..GRAD_INSTANCES).map(|s| op_error(op, s)).fold(0.0, f64::max)
}

pub struct CrfCase {
    pub n: usize,
    pub t: usize,
    pub emissions: Vec<f64>,
    pub transitions: Vec<f64>,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
}

impl CrfCase {
    pub fn random(seed: u64, max_t: usize, max_s: usize) -> Self {
        let mut rng = Rng::derive(seed, 0xc4f);
        let t = dim(&mut rng, 1, max_t);
        let n = dim(&mut rng, 1, max_s);
        let mut v = |k: usize| (0..k).map(|_| rng.uniform(-3.0, 3.0)).collect::<Vec<f64>>();
        Self {
            n,
            t,
            emissions: v(n * t),
            transitions: v(t * t),
            start: v(t),
            stop: v(t),
        }
    }

    pub fn scores(&self) -> CrfScores<'_> {
        CrfScores::new(&self.emissions, &self.transitions, &self.start, &self.stop).unwrap()
    }

    pub fn score(&self, path: &[usize]) -> f64 {
        let mut s = self.start[path[0]] + self.stop[path[self.n - 1]];
        for (i, &y) in path.iter().enumerate() {
            s += self.emissions[i * self.t + y];
            if i > 0 {
                s += self.transitions[path[i - 1] * self.t + y];
            }
        }
        s
    }

    /// Every label sequence in lexicographic order.
    pub fn all_paths(&self) -> Vec<Vec<usize>> {
        let total = self.t.pow(self.n as u32);
        (0..total)
            .map(|mut code| {
                let mut p = vec![0; self.n];
                for slot in (0..self.n).rev() {
                    p[slot] = code % self.t;
                    code /= self.t;
                }
                p
            })
            .collect()
    }
}

/// Compares the CRF against enumeration; returns the first mismatch.
pub fn crf_oracle(instances: u64) -> Result<(), String> {
    for seed in 0..instances {
        let case = CrfCase::random(seed, 4, 6);
        let c = case.scores();
        let paths = case.all_paths();
        let scores: Vec<f64> = paths.iter().map(|p| case.score(p)).collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let brute_z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        let log_z = log_partition(&c);
        if (log_z - brute_z).abs() > 1e-8 {
            return Err(format!("instance {seed}: log Z {log_z} vs enumeration {brute_z}"));
        }
        let best = scores
            .iter()
            .enumerate()
            .fold(0, |b, (i, s)| if *s > scores[b] { i } else { b });
        let v = viterbi(&c);
        if v != paths[best] {
            return Err(format!("instance {seed}: viterbi {v:?} vs enumeration {:?}", paths[best]));
        }
        let total: f64 = scores.iter().map(|s| (s - log_z).exp()).sum();
        if (total - 1.0).abs() > 1e-8 {
            return Err(format!("instance {seed}: probabilities sum to {total}"));
        }
    }
    Ok(())
}

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// The fixed BLEU cases; returns the first failure.
pub fn bleu_golden() -> Result<(), String> {
    let cfg = BleuConfig::default();
    let corpus: Vec<Vec<String>> = ["the cat sat on the mat", "a b c d e f", "one two three four five"]
        .iter()
        .map(|s| toks(s))
        .collect();
    let id = corpus_bleu(&corpus, &corpus, cfg);
    if id.bleu != 1.0 {
        return Err(format!("identity corpus gave {}", id.bleu));
    }
    let r = toks("a b c d e");
    let short = bleu_score(&toks("a b c d"), &[&r[..]], cfg);
    let expected = (1.0f64 - 5.0 / 4.0).exp();
    if (short.bleu - expected).abs() > 1e-6 || (short.bleu - 0.778801).abs() > 1e-6 {
        return Err(format!("brevity case gave {}", short.bleu));
    }
    let r = toks("the cat");
    let clip = bleu_score(&toks("the the the the"), &[&r[..]], cfg);
    if clip.precisions[0] != 0.25 || clip.matches[0] != 1 || clip.totals[0] != 4 {
        return Err(format!("clipping case gave p1 = {}", clip.precisions[0]));
    }
    if clip.bleu != 0.0 || clip.zero_order != Some(2) {
        return Err(format!("clipping case zero order {:?}, bleu {}", clip.zero_order, clip.bleu));
    }
    let r = toks("c d");
    let disjoint = bleu_score(&toks("a b"), &[&r[..]], cfg);
    if disjoint.bleu != 0.0 || disjoint.zero_order != Some(1) {
        return Err(format!("disjoint case zero order {:?}", disjoint.zero_order));
    }
    let empty: Vec<String> = Vec::new();
    let e = bleu_score(&empty, &[&r[..]], cfg);
    if e.bleu != 0.0 || e.brevity_penalty != 0.0 || !e.empty_hypothesis {
        return Err("empty hypothesis not flagged".into());
    }
    Ok(())
}

fn row(store: &ParamStore, id: ParamId) -> Vec<f64> {
    store.get(id).value.data().to_vec()
}

fn affine(x: &[f64], w: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (i, xv) in x.iter().enumerate() {
        for (j, o) in out.iter_mut().enumerate() {
            *o += xv * w[i * cols + j];
        }
    }
    out
}

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// The GRU candidate state recomputed outside the graph.
pub fn gru_candidate(store: &ParamStore, p: &GruParams, x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = p.hidden;
    let (xr, hr, br) = (affine(x, &row(store, p.wr), n), affine(h, &row(store, p.ur), n), row(store, p.br));
    let r: Vec<f64> = (0..n).map(|j| sig(xr[j] + hr[j] + br[j])).collect();
    let rh: Vec<f64> = h.iter().zip(&r).map(|(a, b)| a * b).collect();
    let (xh, hh, bh) = (affine(x, &row(store, p.wh), n), affine(&rh, &row(store, p.uh), n), row(store, p.bh));
    (0..n).map(|j| (xh[j] + hh[j] + bh[j]).tanh()).collect()
}

pub struct GruCase {
    pub store: ParamStore,
    pub params: GruParams,
    pub x: Vec<f64>,
    pub h: Vec<f64>,
}

impl GruCase {
    pub fn random(seed: u64) -> Self {
        let mut rng = Rng::derive(seed, 0x96);
        let (input, hidden) = (dim(&mut rng, 1, 5), dim(&mut rng, 1, 6));
        let mut store = ParamStore::new();
        let params = GruParams::new(&mut store, "gru", input, hidden, &mut rng);
        jitter(&mut store, 0, &mut rng);
        let x = (0..input).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let h = (0..hidden).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Self { store, params, x, h }
    }

    pub fn force_update_gate(&mut self, bias: f64) {
        for v in self.store.get_mut(self.params.bz).value.data_mut() {
            *v = bias;
        }
    }

    pub fn step(&self) -> Vec<f64> {
        let mut g = Graph::with_params(&self.store);
        let x = g.constant(Tensor::matrix(1, self.x.len(), self.x.clone()).unwrap());
        let h = g.constant(Tensor::matrix(1, self.h.len(), self.h.clone()).unwrap());
        let y = gru_step(&mut g, x, h, &self.params).unwrap();
        g.value(y).data().to_vec()
    }

    pub fn candidate(&self) -> Vec<f64> {
        gru_candidate(&self.store, &self.params, &self.x, &self.h)
    }
}

/// The three update-gate identities over `instances` seeds.
pub fn gru_identities(instances: u64) -> Result<(), String> {
    for seed in 0..instances {
        let mut c = GruCase::random(seed);
        let free = c.step();
        let cand = c.candidate();
        for (j, v) in free.iter().enumerate() {
            let (lo, hi) = (c.h[j].min(cand[j]), c.h[j].max(cand[j]));
            if *v < lo - 1e-12 || *v > hi + 1e-12 {
                return Err(format!("seed {seed}: h[{j}] = {v} outside [{lo}, {hi}]"));
            }
        }
        c.force_update_gate(-1e4);
        if c.step() != c.h {
            return Err(format!("seed {seed}: z = 0 did not keep the previous state"));
        }
        c.force_update_gate(1e4);
        let cand = c.candidate();
        let out = c.step();
        if out.iter().zip(&cand).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(format!("seed {seed}: z = 1 gave {out:?}, candidate {cand:?}"));
        }
    }
    Ok(())
}

/// Gold tags plus a memory of the references; returns exact-match counts.
pub fn gold_round_trip(n: usize, spec: &ErrorSpec, seed: u64) -> (usize, usize) {
    let data = toy_dataset(n, 28, spec, seed).unwrap();
    let tm = TranslationMemory::from_pairs(data.iter().map(|p| (p.pair.source.clone(), p.reference.clone())));
    let exact = data
        .iter()
        .filter(|p| {
            let c = apply_corrections(&p.pair.id, &p.pair.source, &p.pair.target, p.lattice(), &mut NoDecoder, Some(&tm), 0.8)
                .unwrap();
            c.corrected == p.reference
        })
        .count();
    (exact, data.len())
}

pub fn tiny_config(seed: u64) -> proofkit::train::TrainConfig {
    let mut c = proofkit::train::TrainConfig::default();
    c.seed = seed;
    c.epochs = 3;
    c.batch_size = 8;
    c.learning_rate = 0.005;
    c.patience = 100;
    let e = &mut c.model.encoder;
    e.kernel_sizes = vec![1, 3];
    e.filters_per_kernel = 4;
    e.d_model = 8;
    e.n_layers = 1;
    e.n_heads = 2;
    e.d_k = 4;
    e.d_ff = 16;
    c.model.decoder.emb_dim = 8;
    c.model.decoder.hidden = 8;
    c
}

pub fn tiny_pairs(n: usize, spec: &ErrorSpec, seed: u64) -> Vec<proofkit::train::TrainPair> {
    toy_dataset(n, 28, spec, seed).unwrap().into_iter().map(Into::into).collect()
}

/// A TSV report with every value cell replaced by `*`.
pub fn skeleton(report: &str) -> String {
    let mut lines = report.lines();
    let mut out = String::new();
    if let Some(h) = lines.next() {
        out.push_str(h);
        out.push('\n');
    }
    for l in lines {
        let mut cells = l.split('\t');
        out.push_str(cells.next().unwrap_or(""));
        for c in cells {
            out.push_str(if c.parse::<f64>().is_ok() { "\t*" } else { "\t?" });
        }
        out.push('\n');
    }
    out
}

pub fn golden(name: &str) -> String {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name);
    std::fs::read_to_string(path).unwrap()
}

pub struct SweepCheck {
    pub axis: proofkit::train::SweepAxis,
    pub values: &'static [usize],
    pub golden: &'static str,
}

pub const SWEEPS: [SweepCheck; 2] = [
    SweepCheck {
        axis: proofkit::train::SweepAxis::KernelSize,
        values: &[1, 3, 4, 5],
        golden: "sweep_kernel_size.tsv",
    },
    SweepCheck {
        axis: proofkit::train::SweepAxis::BatchSize,
        values: &[16, 32, 64, 128, 256],
        golden: "sweep_batch_size.tsv",
    },
];

/// Runs one small sweep and compares its TSV and JSON shapes to the golden file.
pub fn sweep_matches_golden(c: &SweepCheck) -> Result<(), String> {
    use proofkit::eval::{render_report, Format};
    let data = tiny_pairs(24, &ErrorSpec::uniform(0.5, 1, 21), 13);
    let (tr, dev) = data.split_at(16);
    let mut cfg = tiny_config(2);
    cfg.epochs = 1;
    let rows = proofkit::train::sweep(c.axis, c.values, &cfg, tr, dev).map_err(|e| e.to_string())?;
    let tsv = render_report(c.axis.column(), &rows, Format::Tsv);
    let want = golden(c.golden);
    if skeleton(&tsv) != want {
        return Err(format!("TSV shape:\n{}\nexpected:\n{want}", skeleton(&tsv)));
    }
    let js: serde_json::Value = serde_json::from_str(&render_report(c.axis.column(), &rows, Format::Json)).map_err(|e| e.to_string())?;
    let header: Vec<&str> = want.lines().next().unwrap().split('\t').collect();
    let labels: Vec<&str> = want.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    let json_rows = js["rows"].as_array().ok_or("JSON report has no rows")?;
    if js["axis"] != c.axis.column() || json_rows.len() != labels.len() {
        return Err("JSON axis or row count".into());
    }
    for (r, label) in json_rows.iter().zip(&labels) {
        let keys: Vec<&str> = r.as_object().unwrap().keys().map(String::as_str).collect();
        if keys != header || r[c.axis.column()] != *label {
            return Err(format!("JSON row {keys:?} for {label}"));
        }
    }
    Ok(())
}
