use super::{seeded_init, Gradients, Tensor};
use crate::rng::Rng;
use crate::error::{Error, Result};

pub type ParamId = usize;

/// A learnable tensor together with its gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

/// Ordered collection of named parameters. Ids are insertion indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            value,
            grad: None,
        });
        self.params.len() - 1
    }

    /// Adds a Xavier-initialised parameter.
    pub fn add_xavier(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut Rng,
    ) -> ParamId {
        self.add(name, seeded_init(shape, fan_in, fan_out, rng))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Sets every gradient buffer to zeros.
    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = Some(Tensor::zeros(p.value.shape()));
        }
    }

    /// Adds `scale * g` into the gradient buffers, allocating missing ones.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) {
        for (id, g) in grads.params() {
            let p = &mut self.params[id];
            let buf = p.grad.get_or_insert_with(|| Tensor::zeros(p.value.shape()));
            buf.add_scaled(g, scale);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .map(Tensor::norm_sq)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in self.params.iter_mut().filter_map(|p| p.grad.as_mut()) {
                for v in g.data_mut() {
                    *v *= s;
                }
            }
        }
        norm
    }

    fn check_grads(&self) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::Usage(format!("parameter `{}` has no gradient", p.name)));
        }
        Ok(())
    }

    /// Plain gradient descent, `p ← p − lr·grad`, then gradients are zeroed.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        self.sgd_momentum_step(lr, 0.0, &mut Vec::new())
    }

    /// Heavy-ball momentum variant; `velocity` is lazily sized on first use.
    pub fn sgd_momentum_step(&mut self, lr: f64, momentum: f64, velocity: &mut Vec<Tensor>) -> Result<()> {
        if !(lr >= 0.0) {
            return Err(Error::Usage(format!("learning rate must be non-negative, got {lr}")));
        }
        self.check_grads()?;
        if momentum > 0.0 && velocity.is_empty() {
            *velocity = self.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        }
        for (i, p) in self.params.iter_mut().enumerate() {
            let g = p.grad.as_mut().expect("checked");
            if momentum > 0.0 {
                let v = &mut velocity[i];
                for (vv, gv) in v.data_mut().iter_mut().zip(g.data()) {
                    *vv = momentum * *vv + gv;
                }
                p.value.add_scaled(v, -lr);
            } else {
                p.value.add_scaled(g, -lr);
            }
            g.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        Ok(())
    }
}

/// Adam optimiser state.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        store.check_grads()?;
        if self.m.is_empty() {
            self.m = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in store.iter_mut().enumerate() {
            let g = p.grad.as_mut().expect("checked");
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((w, gv), mv), vv) in p.value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mh = *mv / c1;
                let vh = *vv / c2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
            g.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        Ok(())
    }
}
