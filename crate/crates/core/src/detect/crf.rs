//! Linear-chain CRF over `S` slots and `T` tags, scored as
//! `start[y0] + Σ emit[s][ys] + Σ trans[ys-1][ys] + stop[yS-1]`.

use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Tensor};

/// Borrowed raw scores. `emissions` is `S×T` and `transitions` `T×T`, row-major.
#[derive(Clone, Copy, Debug)]
pub struct CrfScores<'a> {
    pub emissions: &'a [f64],
    pub transitions: &'a [f64],
    pub start: &'a [f64],
    pub stop: &'a [f64],
    pub tags: usize,
}

impl<'a> CrfScores<'a> {
    pub fn new(emissions: &'a [f64], transitions: &'a [f64], start: &'a [f64], stop: &'a [f64]) -> Result<Self> {
        let t = start.len();
        if t == 0 || stop.len() != t || transitions.len() != t * t || emissions.is_empty() || !emissions.len().is_multiple_of(t) {
            return Err(Error::shape("crf", &[emissions.len(), t], &[transitions.len(), stop.len()]));
        }
        Ok(Self {
            emissions,
            transitions,
            start,
            stop,
            tags: t,
        })
    }

    pub fn slots(&self) -> usize {
        self.emissions.len() / self.tags
    }

    fn emit(&self, s: usize, y: usize) -> f64 {
        self.emissions[s * self.tags + y]
    }

    fn trans(&self, u: usize, v: usize) -> f64 {
        self.transitions[u * self.tags + v]
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Forward log-potentials `alpha[s][y]`.
fn forward(c: &CrfScores) -> Vec<f64> {
    let (s_n, t_n) = (c.slots(), c.tags);
    let mut alpha = vec![0.0; s_n * t_n];
    for y in 0..t_n {
        alpha[y] = c.start[y] + c.emit(0, y);
    }
    for s in 1..s_n {
        for v in 0..t_n {
            let prev = &alpha[(s - 1) * t_n..s * t_n];
            alpha[s * t_n + v] = log_sum_exp((0..t_n).map(|u| prev[u] + c.trans(u, v))) + c.emit(s, v);
        }
    }
    alpha
}

fn backward(c: &CrfScores) -> Vec<f64> {
    let (s_n, t_n) = (c.slots(), c.tags);
    let mut beta = vec![0.0; s_n * t_n];
    beta[(s_n - 1) * t_n..].copy_from_slice(c.stop);
    for s in (0..s_n - 1).rev() {
        for u in 0..t_n {
            let next = &beta[(s + 1) * t_n..(s + 2) * t_n];
            beta[s * t_n + u] = log_sum_exp((0..t_n).map(|v| c.trans(u, v) + c.emit(s + 1, v) + next[v]));
        }
    }
    beta
}

pub fn log_partition(c: &CrfScores) -> f64 {
    let alpha = forward(c);
    let last = (c.slots() - 1) * c.tags;
    log_sum_exp((0..c.tags).map(|y| alpha[last + y] + c.stop[y]))
}

pub fn path_score(c: &CrfScores, path: &[usize]) -> f64 {
    debug_assert_eq!(path.len(), c.slots());
    let mut s = c.start[path[0]] + c.stop[path[path.len() - 1]];
    for (i, &y) in path.iter().enumerate() {
        s += c.emit(i, y);
        if i > 0 {
            s += c.trans(path[i - 1], y);
        }
    }
    s
}

/// Posterior expectations used for gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginals {
    pub log_z: f64,
    /// `S×T` slot posteriors.
    pub unary: Vec<f64>,
    /// `T×T` expected transition counts.
    pub pairwise: Vec<f64>,
}

pub fn marginals(c: &CrfScores) -> Marginals {
    let (s_n, t_n) = (c.slots(), c.tags);
    let alpha = forward(c);
    let beta = backward(c);
    let last = (s_n - 1) * t_n;
    let log_z = log_sum_exp((0..t_n).map(|y| alpha[last + y] + c.stop[y]));
    let unary = alpha.iter().zip(&beta).map(|(a, b)| (a + b - log_z).exp()).collect();
    let mut pairwise = vec![0.0; t_n * t_n];
    for s in 1..s_n {
        for u in 0..t_n {
            for v in 0..t_n {
                pairwise[u * t_n + v] +=
                    (alpha[(s - 1) * t_n + u] + c.trans(u, v) + c.emit(s, v) + beta[s * t_n + v] - log_z).exp();
            }
        }
    }
    Marginals { log_z, unary, pairwise }
}

/// Exact best path; on equal scores the lowest tag index wins.
pub fn viterbi(c: &CrfScores) -> Vec<usize> {
    let (s_n, t_n) = (c.slots(), c.tags);
    let mut delta: Vec<f64> = (0..t_n).map(|y| c.start[y] + c.emit(0, y)).collect();
    let mut back = vec![0usize; s_n * t_n];
    for s in 1..s_n {
        let mut next = vec![0.0; t_n];
        for v in 0..t_n {
            let mut best = 0;
            let mut best_score = delta[0] + c.trans(0, v);
            for u in 1..t_n {
                let sc = delta[u] + c.trans(u, v);
                if sc > best_score {
                    best = u;
                    best_score = sc;
                }
            }
            back[s * t_n + v] = best;
            next[v] = best_score + c.emit(s, v);
        }
        delta = next;
    }
    let mut y = 0;
    let mut best = delta[0] + c.stop[0];
    for v in 1..t_n {
        if delta[v] + c.stop[v] > best {
            best = delta[v] + c.stop[v];
            y = v;
        }
    }
    let mut path = vec![0; s_n];
    path[s_n - 1] = y;
    for s in (1..s_n).rev() {
        y = back[s * t_n + y];
        path[s - 1] = y;
    }
    path
}

pub fn neg_log_likelihood(c: &CrfScores, gold: &[usize]) -> Result<f64> {
    if gold.len() != c.slots() || gold.iter().any(|&y| y >= c.tags) {
        return Err(Error::Data(format!(
            "gold path of length {} does not fit {} slots x {} tags",
            gold.len(),
            c.slots(),
            c.tags
        )));
    }
    Ok(log_partition(c) - path_score(c, gold))
}

/// Backward rule for the NLL node: inputs are emissions, transitions,
/// start, stop.
pub(crate) struct CrfNll {
    pub gold: Vec<usize>,
    pub marginals: Marginals,
}

impl CustomOp for CrfNll {
    fn name(&self) -> &'static str {
        "crf_nll"
    }

    fn backward(&self, out_grad: &Tensor, inputs: &[&Tensor], _output: &Tensor) -> Vec<Option<Tensor>> {
        let g = out_grad.item();
        let t_n = inputs[2].len();
        let s_n = self.gold.len();
        let mut de: Vec<f64> = self.marginals.unary.iter().map(|p| g * p).collect();
        let mut dt: Vec<f64> = self.marginals.pairwise.iter().map(|p| g * p).collect();
        let mut ds: Vec<f64> = self.marginals.unary[..t_n].iter().map(|p| g * p).collect();
        let mut dp: Vec<f64> = self.marginals.unary[(s_n - 1) * t_n..].iter().map(|p| g * p).collect();
        for (s, &y) in self.gold.iter().enumerate() {
            de[s * t_n + y] -= g;
            if s > 0 {
                dt[self.gold[s - 1] * t_n + y] -= g;
            }
        }
        ds[self.gold[0]] -= g;
        dp[self.gold[s_n - 1]] -= g;
        let shaped = |t: &Tensor, d: Vec<f64>| Some(Tensor::new(t.shape().to_vec(), d).expect("same shape"));
        vec![
            shaped(inputs[0], de),
            shaped(inputs[1], dt),
            shaped(inputs[2], ds),
            shaped(inputs[3], dp),
        ]
    }
}
