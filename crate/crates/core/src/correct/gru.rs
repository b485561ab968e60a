use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Update (`z`), reset (`r`) and candidate (`h`) weights; `w*` act on the
/// input, `u*` on the previous state.
#[derive(Clone, Debug)]
pub struct GruParams {
    pub input: usize,
    pub hidden: usize,
    pub wz: ParamId,
    pub uz: ParamId,
    pub bz: ParamId,
    pub wr: ParamId,
    pub ur: ParamId,
    pub br: ParamId,
    pub wh: ParamId,
    pub uh: ParamId,
    pub bh: ParamId,
}

impl GruParams {
    pub fn new(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut w = |n: &str, rng: &mut Rng| store.add_xavier(format!("{prefix}.{n}"), &[input, hidden], input, hidden, rng);
        let (wz, wr, wh) = (w("wz", rng), w("wr", rng), w("wh", rng));
        let mut u = |n: &str, rng: &mut Rng| store.add_xavier(format!("{prefix}.{n}"), &[hidden, hidden], hidden, hidden, rng);
        let (uz, ur, uh) = (u("uz", rng), u("ur", rng), u("uh", rng));
        let mut b = |n: &str| store.add(format!("{prefix}.{n}"), Tensor::zeros(&[hidden]));
        Self {
            input,
            hidden,
            wz,
            uz,
            bz: b("bz"),
            wr,
            ur,
            br: b("br"),
            wh,
            uh,
            bh: b("bh"),
        }
    }
}

fn gate(g: &mut Graph, x: Var, h: Var, w: ParamId, u: ParamId, b: ParamId) -> Result<Var> {
    let (w, u, b) = (g.param(w), g.param(u), g.param(b));
    let xw = g.matmul(x, w)?;
    let hu = g.matmul(h, u)?;
    let s = g.add(xw, hu)?;
    g.add_row(s, b)
}

/// `h = (1 − z)⊙h_prev + z⊙h̃` with `h̃ = tanh(W_h x + U_h (r⊙h_prev) + b_h)`.
/// Rows of `x` and `h_prev` are independent sequences.
pub fn gru_step(g: &mut Graph, x: Var, h_prev: Var, p: &GruParams) -> Result<Var> {
    let (xr, xc) = g.value(x).dims2();
    let (hr, hc) = g.value(h_prev).dims2();
    if xc != p.input || hc != p.hidden || xr != hr {
        return Err(Error::shape("gru_step", g.shape(x), g.shape(h_prev)));
    }
    let z = gate(g, x, h_prev, p.wz, p.uz, p.bz)?;
    let z = g.sigmoid(z);
    let r = gate(g, x, h_prev, p.wr, p.ur, p.br)?;
    let r = g.sigmoid(r);
    let rh = g.mul(r, h_prev)?;
    let cand = gate(g, x, rh, p.wh, p.uh, p.bh)?;
    let cand = g.tanh(cand);
    let keep = g.one_minus(z);
    let a = g.mul(keep, h_prev)?;
    let b = g.mul(z, cand)?;
    g.add(a, b)
}
