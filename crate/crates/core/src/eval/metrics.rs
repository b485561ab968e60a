use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{ErrorTag, TagLattice};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

/// Ratio with the empty-denominator case mapped to 1.
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

impl Counts {
    /// Precision; 1 when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// Recall; 1 when there is nothing to find.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DetectionMetrics {
    pub counts: Counts,
    pub per_tag: Vec<(ErrorTag, Counts)>,
    pub slots: usize,
    pub correct_slots: usize,
}

impl DetectionMetrics {
    pub fn precision(&self) -> f64 {
        self.counts.precision()
    }

    pub fn recall(&self) -> f64 {
        self.counts.recall()
    }

    pub fn f1(&self) -> f64 {
        self.counts.f1()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.correct_slots, self.slots)
    }

    pub fn add(&mut self, pred: &TagLattice, gold: &TagLattice) {
        if self.per_tag.is_empty() {
            self.per_tag = ErrorTag::ALL[1..].iter().map(|t| (*t, Counts::default())).collect();
        }
        for (p, g) in pred.labels().iter().zip(gold.labels()) {
            self.slots += 1;
            if p == g {
                self.correct_slots += 1;
            }
            match (p.is_error(), g.is_error()) {
                (true, _) if p == g => self.counts.tp += 1,
                (true, _) => self.counts.fp += 1,
                (false, false) => self.counts.tn += 1,
                (false, true) => {}
            }
            if g.is_error() && p != g {
                self.counts.fn_ += 1;
            }
            for (tag, c) in &mut self.per_tag {
                match (p == tag, g == tag) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => c.tn += 1,
                }
            }
        }
    }
}

/// Micro-averaged detection scores over aligned lattices.
///
/// A non-OK prediction is a true positive only when the tag matches the gold
/// tag; a wrong error tag is both a false positive and a false negative.
pub fn detection_metrics(pred: &[(&str, &TagLattice)], gold: &[&TagLattice]) -> Result<DetectionMetrics> {
    if pred.len() != gold.len() {
        return Err(Error::Data(format!(
            "{} predicted lattices against {} gold lattices",
            pred.len(),
            gold.len()
        )));
    }
    let mut m = DetectionMetrics::default();
    for ((id, p), g) in pred.iter().zip(gold) {
        if p.len() != g.len() {
            return Err(Error::Data(format!(
                "pair {id}: predicted {} slots, gold has {}",
                p.len(),
                g.len()
            )));
        }
        m.add(p, g);
    }
    if m.per_tag.is_empty() {
        m.per_tag = ErrorTag::ALL[1..].iter().map(|t| (*t, Counts::default())).collect();
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct RegressionErrors {
    pub rmse: f64,
    pub mse: f64,
    pub mae: f64,
}

/// Errors between per-slot tag distributions and one-hot gold vectors,
/// averaged over every (slot, tag) cell.
#[derive(Clone, Debug, Default)]
pub struct RegressionAccumulator {
    sq: f64,
    abs: f64,
    cells: usize,
}

impl RegressionAccumulator {
    pub fn add(&mut self, probs: &[f64], gold: ErrorTag) {
        for (t, p) in probs.iter().enumerate() {
            let y = if t == gold.index() { 1.0 } else { 0.0 };
            self.sq += (p - y) * (p - y);
            self.abs += (p - y).abs();
            self.cells += 1;
        }
    }

    pub fn finish(&self) -> RegressionErrors {
        if self.cells == 0 {
            return RegressionErrors::default();
        }
        let mse = self.sq / self.cells as f64;
        RegressionErrors {
            rmse: mse.sqrt(),
            mse,
            mae: self.abs / self.cells as f64,
        }
    }
}

pub fn regression_errors(probs: &[Vec<f64>], gold: &[ErrorTag]) -> RegressionErrors {
    let mut acc = RegressionAccumulator::default();
    for (p, g) in probs.iter().zip(gold) {
        acc.add(p, *g);
    }
    acc.finish()
}
