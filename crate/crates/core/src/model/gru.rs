//! Single-layer GRU used as an alternative sequence backbone.

use rand::Rng;

use crate::error::Result;
use crate::numerics::{concat, uniform_fan_in, Bound, ParamId, ParamStore, Tensor, Var};

/// Gates are packed `[r | z | n]` along the last axis.
#[derive(Debug, Clone)]
pub struct GruParams {
    pub hidden: usize,
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
}

impl GruParams {
    pub fn init(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut add = |name: &str, shape: &[usize]| {
            store.add(format!("{prefix}.{name}"), uniform_fan_in(rng, shape, hidden))
        };
        GruParams {
            hidden,
            w_ih: add("w_ih", &[input, 3 * hidden]),
            w_hh: add("w_hh", &[hidden, 3 * hidden]),
            b_ih: add("b_ih", &[3 * hidden]),
            b_hh: add("b_hh", &[3 * hidden]),
        }
    }

    pub fn num_scalars(input: usize, hidden: usize) -> usize {
        3 * hidden * (input + hidden + 2)
    }
}

/// Runs over `x: [B, L, input]` from a zero state and returns every hidden
/// state, `[B, L, hidden]`.
///
/// r = σ(x W_ir + b_ir + h W_hr + b_hr)
/// z = σ(x W_iz + b_iz + h W_hz + b_hz)
/// n = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
/// h' = n + z ⊙ (h − n)
pub fn gru_forward<'g>(x: Var<'g>, p: &GruParams, w: &Bound<'g>) -> Result<Var<'g>> {
    let shape = x.shape();
    let (batch, len) = (shape[0], shape[1]);
    let hd = p.hidden;
    let gx = x.linear(w.get(p.w_ih), w.get(p.b_ih))?;
    let mut h = x.graph().constant(Tensor::zeros(&[batch, 1, hd]));
    let mut outs = Vec::with_capacity(len);
    for t in 0..len {
        let gxt = gx.narrow(1, t, 1)?;
        let gh = h.linear(w.get(p.w_hh), w.get(p.b_hh))?;
        let r = gxt.narrow(2, 0, hd)?.add(gh.narrow(2, 0, hd)?)?.sigmoid();
        let z = gxt.narrow(2, hd, hd)?.add(gh.narrow(2, hd, hd)?)?.sigmoid();
        let n = gxt
            .narrow(2, 2 * hd, hd)?
            .add(r.mul(gh.narrow(2, 2 * hd, hd)?)?)?
            .tanh();
        h = n.add(z.mul(h.sub(n)?)?)?;
        outs.push(h);
    }
    concat(&outs, 1)
}
