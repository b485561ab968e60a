//! Source/target comparison: alignment probabilities, slot features, and
//! CRF tagging of the gap/token lattice.

pub mod crf;

use crate::encoder::attention_weights;
use crate::error::{Error, Result};
use crate::lattice::{ErrorTag, SlotKind, TagLattice, NUM_TAGS};
use crate::rng::Rng;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

pub use crf::{log_partition, marginals, neg_log_likelihood, path_score, viterbi, CrfScores, Marginals};

const PINNED: f64 = -1e9;

/// Row-softmax of `src·tgtᵀ/√d` over unmasked target columns: row `i` is
/// source token `i`'s distribution over target positions.
pub fn alignment_matrix(g: &mut Graph, src: Var, tgt: Var, tgt_mask: &[bool]) -> Result<Var> {
    if tgt_mask.iter().all(|&m| m) {
        return Err(Error::Contract("alignment needs a non-empty target".into()));
    }
    attention_weights(g, src, tgt, tgt_mask)
}

/// `-Σ log probs[i][j]` over gold links; each source has at most one link.
pub fn alignment_loss(g: &mut Graph, probs: Var, links: &[(usize, usize)]) -> Result<Var> {
    let (n, m) = g.value(probs).dims2();
    let mut y = vec![0.0; n * m];
    let mut seen = vec![false; n];
    for &(i, j) in links {
        if i >= n || j >= m {
            return Err(Error::Data(format!("alignment link {i}-{j} outside {n}x{m}")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Data(format!("source token {i} has more than one gold link")));
        }
        y[i * m + j] = 1.0;
    }
    let y = g.constant(Tensor::matrix(n, m, y)?);
    g.cross_entropy(y, probs)
}

/// `[S×m]` matrix mapping token features to slot features: token slots copy
/// their token, gap slots average their neighbours.
pub fn slot_matrix(m: usize) -> Tensor {
    let s = 2 * m + 1;
    let mut p = vec![0.0; s * m];
    for j in 0..m {
        p[(2 * j + 1) * m + j] = 1.0;
    }
    for gap in 0..=m {
        let row = 2 * gap * m;
        match (gap.checked_sub(1), (gap < m).then_some(gap)) {
            (Some(l), Some(r)) => {
                p[row + l] = 0.5;
                p[row + r] = 0.5;
            }
            (Some(only), None) | (None, Some(only)) => p[row + only] = 1.0,
            (None, None) => {}
        }
    }
    Tensor::matrix(s, m, p).expect("slot matrix shape")
}

/// Token-slot features `[t_j ; Σ_i softmax_i(t_j·s_i/√d) s_i]` spread over
/// the slot lattice.
pub fn slot_features(g: &mut Graph, src: Var, tgt: Var, src_mask: &[bool]) -> Result<Var> {
    let (m, _) = g.value(tgt).dims2();
    let w = attention_weights(g, tgt, src, src_mask)?;
    let summary = g.matmul(w, src)?;
    let tok = g.concat_cols(&[tgt, summary])?;
    let p = g.constant(slot_matrix(m));
    g.matmul(p, tok)
}

/// `-1e9` on tags that are illegal for each slot's kind.
pub fn emission_mask(slots: usize) -> Tensor {
    let mut d = vec![0.0; slots * NUM_TAGS];
    for s in 0..slots {
        let kind = SlotKind::of(s);
        for t in ErrorTag::ALL {
            if !t.legal_on(kind) {
                d[s * NUM_TAGS + t.index()] = PINNED;
            }
        }
    }
    Tensor::matrix(slots, NUM_TAGS, d).expect("mask shape")
}

/// Transition, start and stop pins implied by the alternating slot kinds.
pub fn structural_masks() -> (Tensor, Tensor, Tensor) {
    let token_only = |t: ErrorTag| !t.legal_on(SlotKind::Gap);
    let mut trans = vec![0.0; NUM_TAGS * NUM_TAGS];
    for u in ErrorTag::ALL {
        for v in ErrorTag::ALL {
            let both_token = token_only(u) && token_only(v);
            let both_gap = u == ErrorTag::Omission && v == ErrorTag::Omission;
            if both_token || both_gap {
                trans[u.index() * NUM_TAGS + v.index()] = PINNED;
            }
        }
    }
    let ends: Vec<f64> = ErrorTag::ALL.iter().map(|&t| if token_only(t) { PINNED } else { 0.0 }).collect();
    (
        Tensor::matrix(NUM_TAGS, NUM_TAGS, trans).expect("mask shape"),
        Tensor::vector(ends.clone()),
        Tensor::vector(ends),
    )
}

/// Graph node for `log Z − score(gold)`; differentiable in all four inputs.
pub fn crf_nll(g: &mut Graph, emissions: Var, transitions: Var, start: Var, stop: Var, gold: &[usize]) -> Result<Var> {
    let (value, marg) = {
        let c = CrfScores::new(
            g.value(emissions).data(),
            g.value(transitions).data(),
            g.value(start).data(),
            g.value(stop).data(),
        )?;
        let nll = neg_log_likelihood(&c, gold)?;
        (nll, marginals(&c))
    };
    Ok(g.custom(
        &[emissions, transitions, start, stop],
        Tensor::scalar(value),
        Box::new(crf::CrfNll {
            gold: gold.to_vec(),
            marginals: marg,
        }),
    ))
}

/// Emission projection and CRF parameters.
#[derive(Clone, Debug)]
pub struct Detector {
    pub d_model: usize,
    pub emit_w: ParamId,
    pub emit_b: ParamId,
    pub transitions: ParamId,
    pub start: ParamId,
    pub stop: ParamId,
}

/// Masked CRF inputs for one sentence.
#[derive(Clone, Copy, Debug)]
pub struct CrfInputs {
    pub emissions: Var,
    pub transitions: Var,
    pub start: Var,
    pub stop: Var,
}

/// Predicted lattice plus per-slot tag posteriors.
#[derive(Clone, Debug, PartialEq)]
pub struct Tagging {
    pub lattice: TagLattice,
    pub scores: Vec<Vec<f64>>,
}

impl Detector {
    pub fn new(store: &mut ParamStore, prefix: &str, d_model: usize, rng: &mut Rng) -> Self {
        let f = 2 * d_model;
        Self {
            d_model,
            emit_w: store.add_xavier(format!("{prefix}.emit_w"), &[f, NUM_TAGS], f, NUM_TAGS, rng),
            emit_b: store.add(format!("{prefix}.emit_b"), Tensor::zeros(&[NUM_TAGS])),
            transitions: store.add(format!("{prefix}.transitions"), Tensor::zeros(&[NUM_TAGS, NUM_TAGS])),
            start: store.add(format!("{prefix}.start"), Tensor::zeros(&[NUM_TAGS])),
            stop: store.add(format!("{prefix}.stop"), Tensor::zeros(&[NUM_TAGS])),
        }
    }

    /// Slot features to masked emissions and masked CRF parameters.
    pub fn crf_inputs(&self, g: &mut Graph, features: Var) -> Result<CrfInputs> {
        let (s, _) = g.value(features).dims2();
        let w = g.param(self.emit_w);
        let b = g.param(self.emit_b);
        let e = g.matmul(features, w)?;
        let e = g.add_row(e, b)?;
        let em = g.constant(emission_mask(s));
        let emissions = g.add(e, em)?;
        let (tm, sm, pm) = structural_masks();
        let (tm, sm, pm) = (g.constant(tm), g.constant(sm), g.constant(pm));
        let t = g.param(self.transitions);
        let st = g.param(self.start);
        let sp = g.param(self.stop);
        Ok(CrfInputs {
            emissions,
            transitions: g.add(t, tm)?,
            start: g.add(st, sm)?,
            stop: g.add(sp, pm)?,
        })
    }

    pub fn nll(&self, g: &mut Graph, inputs: CrfInputs, gold: &TagLattice) -> Result<Var> {
        if g.value(inputs.emissions).rows() != gold.len() {
            return Err(Error::Data(format!(
                "gold lattice has {} slots, model produced {}",
                gold.len(),
                g.value(inputs.emissions).rows()
            )));
        }
        crf_nll(g, inputs.emissions, inputs.transitions, inputs.start, inputs.stop, &gold.indices())
    }

    /// Viterbi labels and forward-backward posteriors.
    pub fn decode(&self, g: &Graph, inputs: CrfInputs) -> Result<Tagging> {
        let c = CrfScores::new(
            g.value(inputs.emissions).data(),
            g.value(inputs.transitions).data(),
            g.value(inputs.start).data(),
            g.value(inputs.stop).data(),
        )?;
        let lattice = TagLattice::from_indices(&viterbi(&c))?;
        let scores = marginals(&c).unary.chunks(NUM_TAGS).map(<[f64]>::to_vec).collect();
        Ok(Tagging { lattice, scores })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_column_alignment() {
        let mut g = Graph::new();
        let s = g.constant(Tensor::matrix(1, 2, vec![0.3, 0.4]).unwrap());
        let p = alignment_matrix(&mut g, s, s, &[false]).unwrap();
        assert_eq!(g.value(p).data(), &[1.0]);
        assert!(matches!(alignment_matrix(&mut g, s, s, &[true]), Err(Error::Contract(_))));
    }

    #[test]
    fn orthogonal_rows_are_uniform() {
        let mut g = Graph::new();
        let s = g.constant(Tensor::matrix(1, 3, vec![0.0, 0.0, 1.0]).unwrap());
        let t = g.constant(Tensor::matrix(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap());
        let p = alignment_matrix(&mut g, s, t, &[false, false]).unwrap();
        assert_eq!(g.value(p).data(), &[0.5, 0.5]);
    }

    #[test]
    fn alignment_loss_cases() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::matrix(1, 4, vec![0.25; 4]).unwrap());
        let l = alignment_loss(&mut g, p, &[(0, 2)]).unwrap();
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-15);
        let p = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let l = alignment_loss(&mut g, p, &[(0, 0), (1, 1)]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        assert!(matches!(alignment_loss(&mut g, p, &[(0, 2)]), Err(Error::Data(_))));
        assert!(matches!(alignment_loss(&mut g, p, &[(0, 0), (0, 1)]), Err(Error::Data(_))));
    }

    #[test]
    fn slot_matrix_rows() {
        let p = slot_matrix(3);
        assert_eq!(p.shape(), &[7, 3]);
        assert_eq!(p.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(p.row(1), &[1.0, 0.0, 0.0]);
        assert_eq!(p.row(2), &[0.5, 0.5, 0.0]);
        assert_eq!(p.row(5), &[0.0, 0.0, 1.0]);
        assert_eq!(p.row(6), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn masked_decode_is_always_legal() {
        let mut store = ParamStore::new();
        let det = Detector::new(&mut store, "det", 3, &mut Rng::new(0));
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            // emissions strongly preferring token-only tags everywhere
            let feats: Vec<f64> = (0..7 * 6).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let mut g = Graph::with_params(&store);
            let f = g.constant(Tensor::matrix(7, 6, feats).unwrap());
            let inputs = det.crf_inputs(&mut g, f).unwrap();
            let t = det.decode(&g, inputs).unwrap();
            assert_eq!(t.lattice.len(), 7);
            for s in &t.scores {
                assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
