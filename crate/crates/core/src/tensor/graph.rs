use std::collections::BTreeMap;

use super::{matmul_raw, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation with a hand-written backward rule, for fused kernels that
/// would be wasteful to express with primitive nodes.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input (in input order); `None` means zero.
    fn backward(&self, out_grad: &Tensor, inputs: &[&Tensor], output: &Tensor)
        -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    Log(Var),
    Softmax { x: Var, axis: usize },
    Sum(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    Gather { table: Var, ids: Vec<usize> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Conv1dBank { x: Var, kernels: Vec<(usize, Var)> },
    CrossEntropy { y_true: Var, y_pred: Var },
    SoftmaxXent { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Probability floor applied inside logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

/// Define-by-run tape. Nodes are appended in execution order, so the node
/// list is already topologically sorted and backward is a reverse sweep.
pub struct Graph<'a> {
    params: Option<&'a ParamStore>,
    param_vars: BTreeMap<ParamId, Var>,
    nodes: Vec<Node>,
}

/// Result of a backward sweep.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    params: BTreeMap<ParamId, Tensor>,
    leaves: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    /// Gradient for a leaf created with `requires_grad = true`.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn conv_pads(k: usize) -> (usize, usize) {
    let left = (k - 1) / 2;
    (left, k - 1 - left)
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self {
            params: None,
            param_vars: BTreeMap::new(),
            nodes: Vec::new(),
        }
    }

    pub fn with_params(store: &'a ParamStore) -> Self {
        Self {
            params: Some(store),
            param_vars: BTreeMap::new(),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => &self.params.expect("param node without store").get(*id).value,
            (None, _) => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn input(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.input(t, false)
    }

    /// Node for a learnable parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        assert!(
            self.params.is_some_and(|p| id < p.len()),
            "unknown parameter {id}"
        );
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::shape("transpose", s, &[]));
        }
        let (r, c) = (s[0], s[1]);
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(a), ng))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let (m, n) = ta.dims2();
        if tb.len() != n {
            return Err(Error::shape("add_row", ta.shape(), tb.shape()));
        }
        let mut data = ta.data().to_vec();
        for i in 0..m {
            for (x, b) in data[i * n..(i + 1) * n].iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        let shape = ta.shape().to_vec();
        let ng = self.ng(a) || self.ng(bias);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddRow(a, bias), ng))
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        let data = t.data().iter().map(|x| f(*x)).collect();
        Tensor::new(t.shape().to_vec(), data).expect("same shape")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.map(a, |x| x * s);
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let t = self.map(a, |x| x + s);
        let ng = self.ng(a);
        self.push(t, Op::AddScalar(a), ng)
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.scale(a, -1.0);
        self.add_scalar(n, 1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::tanh);
        let ng = self.ng(a);
        self.push(t, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, sigmoid);
        let ng = self.ng(a);
        self.push(t, Op::Sigmoid(a), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.map(a, gelu);
        let ng = self.ng(a);
        self.push(t, Op::Gelu(a), ng)
    }

    /// Natural log with inputs clamped below at [`LOG_FLOOR`].
    pub fn log(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.max(LOG_FLOOR).ln());
        let ng = self.ng(a);
        self.push(t, Op::Log(a), ng)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.shape().len() {
            return Err(Error::shape("softmax", t.shape(), &[axis]));
        }
        let (outer, n, inner) = axis_split(t.shape(), axis);
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| src[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..n {
                    let e = (src[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    z += e;
                }
                for j in 0..n {
                    out[idx(j)] /= z;
                }
            }
        }
        let shape = t.shape().to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for p in parts {
            let (r, c) = self.value(*p).dims2();
            if r != rows {
                return Err(Error::shape("concat_cols", &[rows], self.shape(*p)));
            }
            total += c;
        }
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for p in parts {
            let t = self.value(*p);
            let c = t.cols();
            for i in 0..rows {
                data[i * total + off..i * total + off + c].copy_from_slice(t.row(i));
            }
            off += c;
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(Tensor::new(vec![rows, total], data)?, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            if t.cols() != cols {
                return Err(Error::shape("concat_rows", &[cols], t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(Tensor::new(vec![rows, cols], data)?, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2();
        if len == 0 || start + len > c {
            return Err(Error::shape("slice_cols", t.shape(), &[start, len]));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&t.row(i)[start..start + len]);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(vec![r, len], data)?, Op::SliceCols { x, start }, ng))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2();
        if len == 0 || start + len > r {
            return Err(Error::shape("slice_rows", t.shape(), &[start, len]));
        }
        let data = t.data()[start * c..(start + len) * c].to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(vec![len, c], data)?, Op::SliceRows { x, start }, ng))
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (r, c) = t.dims2();
        if ids.is_empty() {
            return Err(Error::shape("gather_rows", t.shape(), &[0]));
        }
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                return Err(Error::shape("gather_rows", t.shape(), &[id]));
            }
            data.extend_from_slice(t.row(id));
        }
        let ng = self.ng(table);
        Ok(self.push(
            Tensor::new(vec![ids.len(), c], data)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Row-wise layer normalisation followed by `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::shape("layer_norm", t.shape(), self.shape(gamma)));
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = t.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let xh = (row[j] - mean) * rs;
                xhat[i * c + j] = xh;
                out[i * c + j] = g[j] * xh + b[j];
            }
        }
        let shape = t.shape().to_vec();
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// Bank of 1-D convolutions over the row (time) axis with length-preserving
    /// zero padding; for even widths the extra pad goes on the right. Each
    /// kernel's weights have shape `[k, d_in, f]`; outputs are concatenated
    /// along the feature axis into `[L, Σf]`.
    pub fn conv1d_bank(&mut self, x: Var, kernels: &[(usize, Var)]) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape().len() != 2 {
            return Err(Error::shape("conv1d_bank", tx.shape(), &[]));
        }
        let (l, d) = (tx.shape()[0], tx.shape()[1]);
        let mut total_f = 0;
        for &(k, w) in kernels {
            let sw = self.shape(w);
            if k == 0 {
                return Err(Error::Config("kernel size must be at least 1".into()));
            }
            if k > l + (k - 1) {
                return Err(Error::Config(format!("kernel size {k} exceeds padded length")));
            }
            if sw.len() != 3 || sw[0] != k || sw[1] != d {
                return Err(Error::shape("conv1d_bank", &[k, d], sw));
            }
            total_f += sw[2];
        }
        if kernels.is_empty() {
            return Err(Error::Config("empty kernel bank".into()));
        }
        let xs = tx.data();
        let mut out = vec![0.0; l * total_f];
        let mut off = 0;
        for &(k, w) in kernels {
            let tw = self.value(w);
            let f = tw.shape()[2];
            let ws = tw.data();
            let (left, _) = conv_pads(k);
            for t in 0..l {
                let orow = &mut out[t * total_f + off..t * total_f + off + f];
                for o in 0..k {
                    let src = t as isize + o as isize - left as isize;
                    if src < 0 || src >= l as isize {
                        continue;
                    }
                    let xrow = &xs[src as usize * d..(src as usize + 1) * d];
                    for (i, xv) in xrow.iter().enumerate() {
                        if *xv == 0.0 {
                            continue;
                        }
                        let wrow = &ws[(o * d + i) * f..(o * d + i + 1) * f];
                        for (ov, wv) in orow.iter_mut().zip(wrow) {
                            *ov += xv * wv;
                        }
                    }
                }
            }
            off += f;
        }
        let ng = self.ng(x) || kernels.iter().any(|(_, w)| self.ng(*w));
        Ok(self.push(
            Tensor::new(vec![l, total_f], out)?,
            Op::Conv1dBank {
                x,
                kernels: kernels.to_vec(),
            },
            ng,
        ))
    }

    /// `-Σ y_true · ln(max(y_pred, 1e-12))` as a scalar.
    pub fn cross_entropy(&mut self, y_true: Var, y_pred: Var) -> Result<Var> {
        let (ty, tp) = (self.value(y_true), self.value(y_pred));
        if ty.shape() != tp.shape() {
            return Err(Error::shape("cross_entropy", ty.shape(), tp.shape()));
        }
        let loss: f64 = ty
            .data()
            .iter()
            .zip(tp.data())
            .filter(|(y, _)| **y != 0.0)
            .map(|(y, p)| -y * p.max(LOG_FLOOR).ln())
            .sum();
        let ng = self.ng(y_pred);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { y_true, y_pred }, ng))
    }

    /// Summed negative log-likelihood of `targets` under row-wise softmax of
    /// `logits[N×V]`, fused for stability.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (n, v) = t.dims2();
        if targets.len() != n || targets.iter().any(|&y| y >= v) {
            return Err(Error::shape("softmax_cross_entropy", t.shape(), &[targets.len()]));
        }
        let mut probs = vec![0.0; n * v];
        let mut loss = 0.0;
        for i in 0..n {
            let row = t.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            for j in 0..v {
                probs[i * v + j] = (row[j] - max).exp() / z;
            }
            loss += z.ln() + max - row[targets[i]];
        }
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        ))
    }

    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        let ng = inputs.iter().any(|v| self.ng(*v));
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            ng,
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    out.leaves.insert(Var(idx), g);
                }
                Op::Param(id) => {
                    out.params.insert(*id, g);
                }
                op => self.backprop(op, idx, &g, &mut grads),
            }
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut Tensor)) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.shape(v)));
        }
        f(slot.as_mut().unwrap());
    }

    fn like(&self, v: Var, data: Vec<f64>) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), data).expect("gradient shape")
    }

    fn backprop(&self, op: &Op, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = self.nodes[idx].value.as_ref().expect("op output");
        let gd = g.data();
        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if self.ng(*a) {
                    // ga = g · bᵀ
                    let bd = tb.data();
                    let mut bt = vec![0.0; n * k];
                    for p in 0..k {
                        for j in 0..n {
                            bt[j * k + p] = bd[p * n + j];
                        }
                    }
                    let ga = super::matmul_raw(gd, &bt, m, n, k);
                    self.acc(grads, *a, self.like(*a, ga));
                }
                if self.ng(*b) {
                    // gb = aᵀ · g
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = ta.data()[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                    self.acc(grads, *b, self.like(*b, gb));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[j * r + i] = gd[i * c + j];
                    }
                }
                self.acc(grads, *a, self.like(*a, ga));
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                let neg = gd.iter().map(|x| -x).collect();
                self.acc(grads, *b, self.like(*b, neg));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let d = gd.iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    self.acc(grads, *a, self.like(*a, d));
                }
                if self.ng(*b) {
                    let d = gd.iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    self.acc(grads, *b, self.like(*b, d));
                }
            }
            Op::AddRow(a, bias) => {
                self.acc(grads, *a, g.clone());
                let n = self.value(*bias).len();
                self.acc_with(grads, *bias, |t| {
                    for (i, gv) in gd.iter().enumerate() {
                        t.data_mut()[i % n] += gv;
                    }
                });
            }
            Op::Scale(a, s) => {
                let d = gd.iter().map(|x| x * s).collect();
                self.acc(grads, *a, self.like(*a, d));
            }
            Op::AddScalar(a) => self.acc(grads, *a, g.clone()),
            Op::Tanh(a) => {
                let d = gd.iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                self.acc(grads, *a, self.like(*a, d));
            }
            Op::Sigmoid(a) => {
                let d = gd.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.acc(grads, *a, self.like(*a, d));
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                let d = gd.iter().zip(x).map(|(g, x)| g * gelu_grad(*x)).collect();
                self.acc(grads, *a, self.like(*a, d));
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(g, x)| if *x >= LOG_FLOOR { g / x } else { 0.0 })
                    .collect();
                self.acc(grads, *a, self.like(*a, d));
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = axis_split(out.shape(), *axis);
                let y = out.data();
                let mut d = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let dot: f64 = (0..n).map(|j| gd[idx(j)] * y[idx(j)]).sum();
                        for j in 0..n {
                            d[idx(j)] = y[idx(j)] * (gd[idx(j)] - dot);
                        }
                    }
                }
                self.acc(grads, *x, self.like(*x, d));
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.acc(grads, *a, self.like(*a, vec![gd[0]; n]));
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = out.dims2();
                let mut off = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    if self.ng(*p) {
                        let mut d = Vec::with_capacity(rows * c);
                        for i in 0..rows {
                            d.extend_from_slice(&gd[i * total + off..i * total + off + c]);
                        }
                        self.acc(grads, *p, self.like(*p, d));
                    }
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if self.ng(*p) {
                        self.acc(grads, *p, self.like(*p, gd[off..off + n].to_vec()));
                    }
                    off += n;
                }
            }
            Op::SliceCols { x, start } => {
                let len = out.cols();
                let c = self.value(*x).cols();
                self.acc_with(grads, *x, |t| {
                    let td = t.data_mut();
                    for (i, grow) in gd.chunks(len).enumerate() {
                        for (o, gv) in td[i * c + start..i * c + start + len].iter_mut().zip(grow) {
                            *o += gv;
                        }
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let c = out.cols();
                self.acc_with(grads, *x, |t| {
                    for (o, gv) in t.data_mut()[start * c..start * c + gd.len()].iter_mut().zip(gd) {
                        *o += gv;
                    }
                });
            }
            Op::Gather { table, ids } => {
                let c = out.cols();
                self.acc_with(grads, *table, |t| {
                    let td = t.data_mut();
                    for (i, &id) in ids.iter().enumerate() {
                        for (o, gv) in td[id * c..(id + 1) * c].iter_mut().zip(&gd[i * c..(i + 1) * c]) {
                            *o += gv;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (r, c) = out.dims2();
                let gam = self.value(*gamma).data();
                if self.ng(*gamma) {
                    let mut gg = vec![0.0; c];
                    for (i, gv) in gd.iter().enumerate() {
                        gg[i % c] += gv * xhat[i];
                    }
                    self.acc(grads, *gamma, self.like(*gamma, gg));
                }
                if self.ng(*beta) {
                    let mut gb = vec![0.0; c];
                    for (i, gv) in gd.iter().enumerate() {
                        gb[i % c] += gv;
                    }
                    self.acc(grads, *beta, self.like(*beta, gb));
                }
                if self.ng(*x) {
                    let mut gx = vec![0.0; r * c];
                    let cf = c as f64;
                    for i in 0..r {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..c {
                            let gxh = gd[i * c + j] * gam[j];
                            s1 += gxh;
                            s2 += gxh * xhat[i * c + j];
                        }
                        for j in 0..c {
                            let gxh = gd[i * c + j] * gam[j];
                            gx[i * c + j] = rstd[i] / cf * (cf * gxh - s1 - xhat[i * c + j] * s2);
                        }
                    }
                    self.acc(grads, *x, self.like(*x, gx));
                }
            }
            Op::Conv1dBank { x, kernels } => {
                let tx = self.value(*x);
                let (l, d) = (tx.shape()[0], tx.shape()[1]);
                let total_f = out.cols();
                let xs = tx.data();
                let mut gx = vec![0.0; l * d];
                let mut off = 0;
                for &(k, w) in kernels {
                    let tw = self.value(w);
                    let f = tw.shape()[2];
                    let ws = tw.data();
                    let (left, _) = conv_pads(k);
                    let mut gw = vec![0.0; ws.len()];
                    for t in 0..l {
                        let grow = &gd[t * total_f + off..t * total_f + off + f];
                        for o in 0..k {
                            let src = t as isize + o as isize - left as isize;
                            if src < 0 || src >= l as isize {
                                continue;
                            }
                            let s = src as usize;
                            for i in 0..d {
                                let base = (o * d + i) * f;
                                let wrow = &ws[base..base + f];
                                let xv = xs[s * d + i];
                                let mut acc = 0.0;
                                for ((gv, wv), gwv) in grow.iter().zip(wrow).zip(&mut gw[base..base + f]) {
                                    acc += gv * wv;
                                    *gwv += xv * gv;
                                }
                                gx[s * d + i] += acc;
                            }
                        }
                    }
                    if self.ng(w) {
                        self.acc(grads, w, self.like(w, gw));
                    }
                    off += f;
                }
                if self.ng(*x) {
                    self.acc(grads, *x, self.like(*x, gx));
                }
            }
            Op::CrossEntropy { y_true, y_pred } => {
                let (ty, tp) = (self.value(*y_true), self.value(*y_pred));
                let d = ty
                    .data()
                    .iter()
                    .zip(tp.data())
                    .map(|(y, p)| if *p >= LOG_FLOOR { -gd[0] * y / p } else { 0.0 })
                    .collect();
                self.acc(grads, *y_pred, self.like(*y_pred, d));
            }
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
            } => {
                let v = out_cols_of(self.value(*logits));
                let mut d: Vec<f64> = probs.iter().map(|p| p * gd[0]).collect();
                for (i, &y) in targets.iter().enumerate() {
                    d[i * v + y] -= gd[0];
                }
                self.acc(grads, *logits, self.like(*logits, d));
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let gs = op.backward(g, &vals, out);
                for (v, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        self.acc(grads, *v, gi);
                    }
                }
            }
        }
    }
}

fn out_cols_of(t: &Tensor) -> usize {
    t.cols()
}
