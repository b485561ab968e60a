//! Joint training of encoder, tagger and decoder; evaluation; sweeps.

mod checkpoint;
mod sweep;

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use sweep::{sweep, SweepAxis};

use crate::correct::{reference_fills, Correction, TranslationMemory};
use crate::corpus::{build_vocab, SentencePair, Vocabulary, EOS};
use crate::detect::{alignment_loss, alignment_matrix};
use crate::eval::{corpus_bleu, BleuConfig, BleuResult, DetectionMetrics, RegressionAccumulator, RegressionErrors};
use crate::error::{Error, Result};
use crate::lattice::TagLattice;
use crate::model::{Model, ModelConfig};
use crate::rng::Rng;
use crate::synth::{inject_errors, CorruptedPair, ErrorSpec};
use crate::tensor::{Adam, Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub align: f64,
    pub crf: f64,
    pub corr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            align: 1.0,
            crf: 1.0,
            corr: 1.0,
        }
    }
}

impl LossWeights {
    /// `λa·align + λc·crf + λr·corr`.
    pub fn combine(&self, align: f64, crf: f64, corr: f64) -> f64 {
        self.align * align + self.crf * crf + self.corr * corr
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub model: ModelConfig,
    /// Epochs without a dev F1 improvement before stopping.
    pub patience: usize,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    pub optimizer: OptimizerKind,
    pub checkpoint: Option<PathBuf>,
    /// Re-corrupts pairs that carry their clean original with a fresh draw
    /// every epoch after the first.
    pub resample: Option<ErrorSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.002,
            weights: LossWeights::default(),
            model: ModelConfig::default(),
            patience: 10,
            clip_norm: 5.0,
            optimizer: OptimizerKind::Adam,
            checkpoint: None,
            resample: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let w = self.weights;
        if [w.align, w.crf, w.corr].iter().any(|v| !(*v >= 0.0)) || w.align + w.crf + w.corr <= 0.0 {
            return Err(Error::Config(format!("loss weights must be >= 0 with at least one > 0, got {w:?}")));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if let Some(spec) = &self.resample {
            spec.validate()?;
        }
        self.model.encoder.validate()?;
        self.model.decoder.validate()
    }
}

/// A (possibly corrupted) pair with its supervision channels.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPair {
    pub pair: SentencePair,
    pub reference: Option<Vec<String>>,
    /// Uncorrupted pair with its alignment, used for resampling.
    pub clean: Option<SentencePair>,
}

impl From<CorruptedPair> for TrainPair {
    fn from(c: CorruptedPair) -> Self {
        Self {
            pair: c.pair,
            reference: Some(c.reference),
            clean: None,
        }
    }
}

impl TrainPair {
    pub fn with_clean(mut self, clean: SentencePair) -> Self {
        self.clean = Some(clean);
        self
    }

    fn gold(&self) -> Result<&TagLattice> {
        self.pair
            .gold_tags
            .as_ref()
            .ok_or_else(|| Error::Data(format!("pair {} has no gold tags", self.pair.id)))
    }
}

/// Ids and targets ready for the loss.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub id: String,
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
    pub links: Vec<(usize, usize)>,
    pub gold: Option<TagLattice>,
    /// `(slot, ids ending in EOS)` per flagged REPLACEMENT/OMISSION slot.
    pub corrections: Vec<(usize, Vec<usize>)>,
}

pub fn prepare(model: &Model, p: &TrainPair, w: &LossWeights) -> Result<Prepared> {
    let id = &p.pair.id;
    let missing = |what: &str| Error::Data(format!("pair {id} lacks {what} but its loss weight is positive"));
    let mut links = Vec::new();
    if w.align > 0.0 {
        let all = p.pair.alignment.as_ref().ok_or_else(|| missing("a gold alignment"))?;
        let mut seen = std::collections::BTreeSet::new();
        links = all.iter().copied().filter(|(i, _)| seen.insert(*i)).collect();
    }
    let gold = if w.crf > 0.0 || w.corr > 0.0 {
        Some(p.gold().map_err(|_| missing("gold tags"))?.clone())
    } else {
        p.pair.gold_tags.clone()
    };
    let mut corrections = Vec::new();
    if w.corr > 0.0 {
        let reference = p.reference.as_ref().ok_or_else(|| missing("a reference"))?;
        let lattice = gold.as_ref().expect("checked above");
        let fills = reference_fills(&p.pair.target, lattice, reference)
            .ok_or_else(|| Error::Data(format!("pair {id}: reference is not reachable from the gold tags")))?;
        for (slot, toks) in fills {
            let mut ids = model.ids(&toks);
            ids.push(EOS);
            corrections.push((slot, ids));
        }
    }
    Ok(Prepared {
        id: id.clone(),
        src: model.ids(&p.pair.source),
        tgt: model.ids(&p.pair.target),
        links,
        gold,
        corrections,
    })
}

/// Summed component losses and their normalising counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossParts {
    pub align: f64,
    pub crf: f64,
    pub corr: f64,
    pub n_links: usize,
    pub n_seqs: usize,
    pub n_tokens: usize,
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl LossParts {
    pub fn add(&mut self, o: &LossParts) {
        self.align += o.align;
        self.crf += o.crf;
        self.corr += o.corr;
        self.n_links += o.n_links;
        self.n_seqs += o.n_seqs;
        self.n_tokens += o.n_tokens;
    }

    /// Per-link, per-sequence and per-token means.
    pub fn means(&self) -> (f64, f64, f64) {
        (
            mean(self.align, self.n_links),
            mean(self.crf, self.n_seqs),
            mean(self.corr, self.n_tokens),
        )
    }

    pub fn total(&self, w: &LossWeights) -> f64 {
        let (a, c, r) = self.means();
        w.combine(a, c, r)
    }

    pub fn counts(batch: &[&Prepared], w: &LossWeights) -> LossParts {
        LossParts {
            n_links: if w.align > 0.0 { batch.iter().map(|p| p.links.len()).sum() } else { 0 },
            n_seqs: batch.len(),
            n_tokens: if w.corr > 0.0 {
                batch.iter().flat_map(|p| &p.corrections).map(|(_, t)| t.len()).sum()
            } else {
                0
            },
            ..Default::default()
        }
    }
}

/// One example's share of the batch loss, normalised by batch-level counts.
pub fn example_loss(
    model: &Model,
    g: &mut Graph,
    ex: &Prepared,
    w: &LossWeights,
    norms: &LossParts,
) -> Result<(Option<Var>, LossParts)> {
    let f = model.forward(g, &ex.src, &ex.tgt)?;
    let mut terms = Vec::new();
    let mut parts = LossParts::default();
    if w.align > 0.0 && !ex.links.is_empty() {
        let probs = alignment_matrix(g, f.src, f.tgt, &vec![false; ex.tgt.len()])?;
        let l = alignment_loss(g, probs, &ex.links)?;
        parts.align = g.value(l).item();
        terms.push(g.scale(l, w.align / norms.n_links as f64));
    }
    if w.crf > 0.0 {
        let gold = ex.gold.as_ref().ok_or_else(|| Error::Data(format!("pair {} has no gold tags", ex.id)))?;
        let l = model.detector.nll(g, f.crf, gold)?;
        parts.crf = g.value(l).item();
        terms.push(g.scale(l, w.crf / norms.n_seqs as f64));
    }
    if w.corr > 0.0 && !ex.corrections.is_empty() {
        let mask = vec![false; ex.src.len()];
        let mut sum = None;
        for (slot, target) in &ex.corrections {
            let span = g.slice_rows(f.features, *slot, 1)?;
            let l = model.decoder.loss(g, span, f.src, &mask, target)?;
            sum = Some(match sum {
                Some(s) => g.add(s, l)?,
                None => l,
            });
        }
        let l = sum.expect("non-empty corrections");
        parts.corr = g.value(l).item();
        terms.push(g.scale(l, w.corr / norms.n_tokens as f64));
    }
    let mut total = None;
    for t in terms {
        total = Some(match total {
            Some(s) => g.add(s, t)?,
            None => t,
        });
    }
    Ok((total, parts))
}

/// Accumulates gradients of the batch loss into the store, in example order.
pub fn batch_gradients(model: &mut Model, batch: &[&Prepared], w: &LossWeights) -> Result<LossParts> {
    let norms = LossParts::counts(batch, w);
    model.store.zero_grad();
    let mut parts = LossParts {
        n_links: norms.n_links,
        n_seqs: norms.n_seqs,
        n_tokens: norms.n_tokens,
        ..Default::default()
    };
    for ex in batch {
        let (grads, p) = {
            let mut g = Graph::with_params(&model.store);
            let (loss, p) = example_loss(model, &mut g, ex, w, &norms)?;
            (loss.map(|l| g.backward(l)).transpose()?, p)
        };
        parts.align += p.align;
        parts.crf += p.crf;
        parts.corr += p.corr;
        if let Some(grads) = grads {
            model.store.accumulate(&grads, 1.0);
        }
    }
    Ok(parts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_align: f64,
    pub loss_crf: f64,
    pub loss_corr: f64,
    pub dev_f1: f64,
    pub seconds: f64,
}

impl EpochLog {
    /// The log line with the wall-clock field zeroed, for run-to-run diffs.
    pub fn without_timing(&self) -> Self {
        Self {
            seconds: 0.0,
            ..self.clone()
        }
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Vocabulary over sources, targets and references of the training split.
pub fn training_vocab(pairs: &[TrainPair]) -> Vocabulary {
    let mut all: Vec<SentencePair> = pairs.iter().map(|p| p.pair.clone()).collect();
    all.extend(pairs.iter().filter_map(|p| {
        p.reference
            .as_ref()
            .map(|r| SentencePair::new(p.pair.id.clone(), Vec::new(), r.clone()))
    }));
    build_vocab(&all, 1, usize::MAX)
}

fn snapshot(model: &Model) -> Vec<Tensor> {
    model.store.iter().map(|p| p.value.clone()).collect()
}

fn restore(model: &mut Model, values: &[Tensor]) {
    for (p, v) in model.store.iter_mut().zip(values) {
        p.value = v.clone();
    }
}

fn resampled(
    model: &Model,
    pairs: &[TrainPair],
    spec: &ErrorSpec,
    words: &[String],
    epoch: usize,
    w: &LossWeights,
) -> Result<Vec<Prepared>> {
    let seed = Rng::derive(spec.seed, epoch as u64).next_u64();
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| match &p.clean {
            Some(clean) => {
                let c = inject_errors(clean, spec, words, &mut Rng::derive(seed, i as u64))?;
                prepare(model, &c.into(), w)
            }
            None => prepare(model, p, w),
        })
        .collect()
}

/// Trains with per-epoch shuffling from `Rng::derive(seed, epoch)`, keeping
/// the parameters of the best dev-F1 epoch.
pub fn train(config: &TrainConfig, train_set: &[TrainPair], dev: &[TrainPair]) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || dev.is_empty() {
        return Err(Error::Data("training and dev splits must be non-empty".into()));
    }
    for p in dev {
        p.gold()?;
    }
    let mut model = Model::new(config.model.clone(), training_vocab(train_set), config.seed)?;
    let w = config.weights;
    let fixed: Vec<Prepared> = train_set.iter().map(|p| prepare(&model, p, &w)).collect::<Result<_>>()?;
    let words: Vec<String> = train_set
        .iter()
        .filter_map(|p| p.clean.as_ref())
        .flat_map(|c| c.target.iter().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut adam = Adam::new(config.learning_rate);
    let mut log = Vec::new();
    let mut best = (f64::NEG_INFINITY, snapshot(&model), 0);
    let mut last_good = snapshot(&model);
    let mut stale = 0;
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let fresh = match &config.resample {
            Some(spec) if epoch > 0 && !words.is_empty() => Some(resampled(&model, train_set, spec, &words, epoch, &w)?),
            _ => None,
        };
        let prepared = fresh.as_ref().unwrap_or(&fixed);
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        Rng::derive(config.seed, epoch as u64).shuffle(&mut order);
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &prepared[i]).collect();
            let parts = batch_gradients(&mut model, &batch, &w)?;
            let total = parts.total(&w);
            if !total.is_finite() || !model.store.grad_norm().is_finite() {
                restore(&mut model, &last_good);
                let ckpt = Checkpoint::from_model(&model, config, json!({ "diverged_epoch": epoch }));
                return Err(Error::Diverged {
                    epoch,
                    last_good: Box::new(ckpt),
                });
            }
            if config.clip_norm > 0.0 {
                model.store.clip_grad_norm(config.clip_norm);
            }
            match config.optimizer {
                OptimizerKind::Adam => adam.step(&mut model.store)?,
                OptimizerKind::Sgd => model.store.sgd_step(config.learning_rate)?,
            }
            let (a, c, r) = parts.means();
            sums.0 += total;
            sums.1 += a;
            sums.2 += c;
            sums.3 += r;
            batches += 1;
        }
        let dev_f1 = evaluate_detection(&model, dev)?.0.f1();
        let b = batches as f64;
        log.push(EpochLog {
            epoch,
            loss_total: sums.0 / b,
            loss_align: sums.1 / b,
            loss_crf: sums.2 / b,
            loss_corr: sums.3 / b,
            dev_f1,
            seconds: start.elapsed().as_secs_f64(),
        });
        last_good = snapshot(&model);
        if dev_f1 > best.0 {
            best = (dev_f1, last_good.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    restore(&mut model, &best.1);
    let metrics = json!({
        "best_epoch": best.2,
        "dev_f1": best.0,
        "epochs_run": log.len(),
    });
    let checkpoint = Checkpoint::from_model(&model, config, metrics);
    if let Some(path) = &config.checkpoint {
        checkpoint.save(path)?;
    }
    Ok(TrainOutcome {
        model,
        checkpoint,
        log,
        best_epoch: best.2,
    })
}

/// Detection metrics and tag-probability errors against gold lattices.
pub fn evaluate_detection(model: &Model, pairs: &[TrainPair]) -> Result<(DetectionMetrics, RegressionErrors)> {
    let mut det = DetectionMetrics::default();
    let mut reg = RegressionAccumulator::default();
    for p in pairs {
        let gold = p.gold()?;
        let d = model.detect(&p.pair.source, &p.pair.target)?;
        if d.tagging.lattice.len() != gold.len() {
            return Err(Error::Data(format!("pair {}: lattice length mismatch", p.pair.id)));
        }
        det.add(&d.tagging.lattice, gold);
        for (probs, g) in d.tagging.scores.iter().zip(gold.labels()) {
            reg.add(probs, *g);
        }
    }
    Ok((det, reg.finish()))
}

/// Full pipeline over labelled pairs.
pub struct Evaluation {
    pub detection: DetectionMetrics,
    pub regression: RegressionErrors,
    pub corrupted_bleu: BleuResult,
    pub corrected_bleu: BleuResult,
    pub corrections: Vec<Correction>,
    pub seconds: f64,
}

pub fn evaluate_model(
    model: &Model,
    pairs: &[TrainPair],
    tm: Option<&TranslationMemory>,
    threshold: f64,
) -> Result<Evaluation> {
    let start = Instant::now();
    let mut det = DetectionMetrics::default();
    let mut reg = RegressionAccumulator::default();
    let mut corrections = Vec::with_capacity(pairs.len());
    let mut refs = Vec::with_capacity(pairs.len());
    for p in pairs {
        let gold = p.gold()?;
        let reference = p
            .reference
            .as_ref()
            .ok_or_else(|| Error::Data(format!("pair {} has no reference", p.pair.id)))?;
        let d = model.detect(&p.pair.source, &p.pair.target)?;
        det.add(&d.tagging.lattice, gold);
        for (probs, g) in d.tagging.scores.iter().zip(gold.labels()) {
            reg.add(probs, *g);
        }
        corrections.push(model.correct(&p.pair.id, &p.pair.source, &p.pair.target, &d, tm, threshold)?);
        refs.push(reference.clone());
    }
    let inputs: Vec<Vec<String>> = pairs.iter().map(|p| p.pair.target.clone()).collect();
    let outputs: Vec<Vec<String>> = corrections.iter().map(|c| c.corrected.clone()).collect();
    Ok(Evaluation {
        detection: det,
        regression: reg.finish(),
        corrupted_bleu: corpus_bleu(&inputs, &refs, BleuConfig::default()),
        corrected_bleu: corpus_bleu(&outputs, &refs, BleuConfig::default()),
        corrections,
        seconds: start.elapsed().as_secs_f64(),
    })
}
