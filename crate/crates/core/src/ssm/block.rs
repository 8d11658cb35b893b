use rand::Rng;

use super::conv::causal_depthwise_conv1d;
use super::norm::rmsnorm;
use super::scan::selective_scan_op;
use crate::error::Result;
use crate::numerics::functions::softplus_inverse;
use crate::numerics::{uniform_fan_in, Bound, ParamId, ParamStore, Tensor, Var};

/// Sizes of one Mamba block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MambaDims {
    pub d_model: usize,
    pub d_state: usize,
    pub expand: usize,
    pub conv_width: usize,
}

impl MambaDims {
    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }
}

impl Default for MambaDims {
    fn default() -> Self {
        MambaDims {
            d_model: 64,
            d_state: 16,
            expand: 2,
            conv_width: 4,
        }
    }
}

/// Step sizes Δ start in this range (log-uniform) through the softplus bias.
pub const DELTA_INIT_RANGE: (f64, f64) = (1e-3, 1e-1);

/// Learnable weights of one Mamba block, as handles into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MambaBlockParams {
    pub dims: MambaDims,
    pub norm_gain: ParamId,
    /// `[d_model, 2·d_inner]`: x-branch then gate branch.
    pub w_in: ParamId,
    pub conv_kernel: ParamId,
    pub conv_bias: ParamId,
    pub w_delta: ParamId,
    pub delta_bias: ParamId,
    pub w_b: ParamId,
    pub w_c: ParamId,
    /// `A = −exp(a_log)`.
    pub a_log: ParamId,
    pub d_skip: ParamId,
    pub w_out: ParamId,
}

impl MambaBlockParams {
    pub fn init(store: &mut ParamStore, prefix: &str, dims: MambaDims, rng: &mut impl Rng) -> Self {
        let d = dims.d_model;
        let di = dims.d_inner();
        let n = dims.d_state;
        let k = dims.conv_width;
        let name = |s: &str| format!("{prefix}.{s}");

        let norm_gain = store.add(name("norm.gain"), Tensor::full(&[d], 1.0));
        let w_in = store.add(name("in_proj.w"), uniform_fan_in(rng, &[d, 2 * di], d));
        let conv_kernel = store.add(name("conv.kernel"), uniform_fan_in(rng, &[di, k], k));
        let conv_bias = store.add(name("conv.bias"), uniform_fan_in(rng, &[di], k));
        let w_delta = store.add(name("delta_proj.w"), uniform_fan_in(rng, &[di, di], di));
        let (lo, hi) = (DELTA_INIT_RANGE.0.ln(), DELTA_INIT_RANGE.1.ln());
        let delta_bias = store.add(
            name("delta_proj.b"),
            Tensor::from_fn(&[di], |_| softplus_inverse(rng.gen_range(lo..hi).exp())),
        );
        let w_b = store.add(name("b_proj.w"), uniform_fan_in(rng, &[di, n], di));
        let w_c = store.add(name("c_proj.w"), uniform_fan_in(rng, &[di, n], di));
        let a_log = store.add(
            name("a_log"),
            Tensor::from_fn(&[di, n], |i| ((i % n) as f64 + 1.0).ln()),
        );
        let d_skip = store.add(name("d_skip"), Tensor::full(&[di], 1.0));
        let w_out = store.add(name("out_proj.w"), uniform_fan_in(rng, &[di, d], di));
        MambaBlockParams {
            dims,
            norm_gain,
            w_in,
            conv_kernel,
            conv_bias,
            w_delta,
            delta_bias,
            w_b,
            w_c,
            a_log,
            d_skip,
            w_out,
        }
    }

    pub fn num_scalars(dims: MambaDims) -> usize {
        let d = dims.d_model;
        let di = dims.d_inner();
        let n = dims.d_state;
        let k = dims.conv_width;
        d + d * 2 * di + di * k + di + di * di + di + 2 * di * n + di * n + di + di * d
    }
}

/// Residual Mamba block over `[L, d_model]` or `[B, L, d_model]`:
///
/// `x + W_out( SSM(silu(conv(x_branch))) ⊙ silu(z) )` with
/// `(x_branch, z) = rmsnorm(x) · W_in`.
pub fn mamba_block_forward<'g>(x: Var<'g>, p: &MambaBlockParams, w: &Bound<'g>) -> Result<Var<'g>> {
    let di = p.dims.d_inner();
    let last = x.shape().len() - 1;

    let xz = rmsnorm(x, w.get(p.norm_gain))?.matmul(w.get(p.w_in))?;
    let xb = xz.narrow(last, 0, di)?;
    let z = xz.narrow(last, di, di)?;

    let u = causal_depthwise_conv1d(xb, w.get(p.conv_kernel), w.get(p.conv_bias))?.silu();
    let delta = u
        .matmul(w.get(p.w_delta))?
        .add_row(w.get(p.delta_bias))?
        .softplus();
    let b = u.matmul(w.get(p.w_b))?;
    let c = u.matmul(w.get(p.w_c))?;
    let a = w.get(p.a_log).exp().neg();
    let y = selective_scan_op(delta, a, b, c, u, w.get(p.d_skip))?;

    let out = y.mul(z.silu())?.matmul(w.get(p.w_out))?;
    x.add(out)
}

/// Move the block to a generic point for gradient checks: step sizes of
/// order one, spread decay rates, non-unit gains and O(1) B/C projections.
/// At initialization the Δ and `a_log` gradients are ~1e-7 and drown in
/// central-difference roundoff.
pub fn randomize_block(store: &mut ParamStore, p: &MambaBlockParams, rng: &mut impl Rng) {
    for v in store.get_mut(p.delta_bias).data_mut() {
        *v = softplus_inverse(rng.gen_range(0.2..1.5));
    }
    for v in store.get_mut(p.a_log).data_mut() {
        *v = rng.gen_range(-0.7..1.0);
    }
    for id in [p.d_skip, p.norm_gain] {
        for v in store.get_mut(id).data_mut() {
            *v = rng.gen_range(0.5..1.5);
        }
    }
    for id in [p.w_b, p.w_c] {
        for v in store.get_mut(id).data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
}

/// A stack of residual Mamba blocks applied in order.
pub fn mamba_stack_forward<'g>(
    mut x: Var<'g>,
    blocks: &[MambaBlockParams],
    w: &Bound<'g>,
) -> Result<Var<'g>> {
    for p in blocks {
        x = mamba_block_forward(x, p, w)?;
    }
    Ok(x)
}
