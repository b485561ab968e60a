//! The composed proofreading model: joint pair encoder, slot tagger and
//! span decoder sharing one parameter store.

use serde::{Deserialize, Serialize};

use crate::correct::{apply_corrections, Correction, Decoder, DecoderConfig, SpanDecoder, TranslationMemory};
use crate::corpus::{Vocabulary, EOS};
use crate::detect::{alignment_matrix, slot_features, CrfInputs, Detector, Tagging};
use crate::encoder::{Encoder, EncoderConfig, EncoderInput};
use crate::error::Result;
use crate::lattice::ErrorTag;
use crate::rng::Rng;
use crate::tensor::{Graph, ParamStore, Tensor, Var};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub detector: Detector,
    pub decoder: Decoder,
}

/// Graph handles for one encoded pair.
#[derive(Clone, Copy, Debug)]
pub struct PairForward {
    pub src: Var,
    pub tgt: Var,
    pub features: Var,
    pub crf: CrfInputs,
}

/// Inference result for one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub alignment: Tensor,
    pub tagging: Tagging,
    pub src_context: Tensor,
    pub features: Tensor,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let d = config.encoder.d_model;
        let encoder = Encoder::new(&mut store, "encoder", vocab.len(), config.encoder.clone(), &mut rng)?;
        let detector = Detector::new(&mut store, "detector", d, &mut rng);
        let decoder = Decoder::new(&mut store, "decoder", vocab.len(), d, 2 * d, config.decoder.clone(), &mut rng)?;
        Ok(Self {
            config,
            vocab,
            store,
            encoder,
            detector,
            decoder,
        })
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        self.vocab.encode(tokens, false)
    }

    /// Encodes `[src ; </s> ; tgt]` and builds masked CRF inputs.
    pub fn forward(&self, g: &mut Graph, src: &[usize], tgt: &[usize]) -> Result<PairForward> {
        let input = EncoderInput::pair(src, EOS, tgt);
        let x = self.encoder.forward(g, &input)?;
        let n = src.len();
        let src_v = g.slice_rows(x, 0, n)?;
        let tgt_v = g.slice_rows(x, n + 1, tgt.len())?;
        let features = slot_features(g, src_v, tgt_v, &vec![false; n])?;
        let crf = self.detector.crf_inputs(g, features)?;
        Ok(PairForward {
            src: src_v,
            tgt: tgt_v,
            features,
            crf,
        })
    }

    pub fn detect(&self, source: &[String], target: &[String]) -> Result<Detection> {
        let (src, tgt) = (self.ids(source), self.ids(target));
        let mut g = Graph::with_params(&self.store);
        let f = self.forward(&mut g, &src, &tgt)?;
        let a = alignment_matrix(&mut g, f.src, f.tgt, &vec![false; tgt.len()])?;
        let tagging = self.detector.decode(&g, f.crf)?;
        Ok(Detection {
            alignment: g.value(a).clone(),
            tagging,
            src_context: g.value(f.src).clone(),
            features: g.value(f.features).clone(),
        })
    }

    /// Decodes a span from one slot's feature row.
    pub fn decode_slot(&self, det: &Detection, slot: usize) -> Result<(Vec<String>, bool)> {
        let span = Tensor::matrix(1, det.features.cols(), det.features.row(slot).to_vec())?;
        let mask = vec![false; det.src_context.rows()];
        let out = self
            .decoder
            .decode(&self.store, &span, &det.src_context, &mask, self.config.decoder.max_len)?;
        Ok((self.vocab.decode(&out.ids), out.truncated))
    }

    pub fn correct(
        &self,
        id: &str,
        source: &[String],
        target: &[String],
        det: &Detection,
        tm: Option<&TranslationMemory>,
        threshold: f64,
    ) -> Result<Correction> {
        let mut dec = SlotDecoder { model: self, det };
        apply_corrections(id, source, target, &det.tagging.lattice, &mut dec, tm, threshold)
    }
}

struct SlotDecoder<'a> {
    model: &'a Model,
    det: &'a Detection,
}

impl SpanDecoder for SlotDecoder<'_> {
    fn decode_span(&mut self, slot: usize, _tag: ErrorTag) -> Result<(Vec<String>, bool)> {
        self.model.decode_slot(self.det, slot)
    }
}
