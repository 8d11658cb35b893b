//! Selective (input-dependent) discretized state-space scan.
//!
//! For every channel `c` and state index `s`:
//!
//! ```text
//! Ā[t]   = exp(Δ[t,c] · A[c,s])
//! B̄[t]   = Δ[t,c] · B[t,s]
//! h[t]   = Ā[t] · h[t−1] + B̄[t] · u[t,c]          (h[−1] = 0)
//! y[t,c] = Σ_s C[t,s] · h[t,c,s] + D[c] · u[t,c]
//! ```
//!
//! Layout is row-major with a leading batch extent: `Δ, u: [B, L, C]`,
//! `B, C: [B, L, N]`, `A: [C, N]`, `D: [C]`.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::numerics::{FusedOp, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanDims {
    pub batch: usize,
    pub len: usize,
    pub d_inner: usize,
    pub d_state: usize,
}

/// Values saved by the forward pass for [`scan_backward`]: hidden states
/// and decay factors `Ā`, both `[B, L, C, N]`.
#[derive(Debug, Clone, Default)]
pub struct ScanTrace<F> {
    pub states: Vec<F>,
    pub decays: Vec<F>,
}

impl<F: Float> ScanTrace<F> {
    pub fn zeros(dims: ScanDims) -> Self {
        let n = dims.batch * dims.len * dims.d_inner * dims.d_state;
        ScanTrace {
            states: vec![F::zero(); n],
            decays: vec![F::zero(); n],
        }
    }
}

/// Sequential reference scan. Writes `y` (`[B, L, C]`) and, when given, the
/// trace needed by the adjoint.
#[allow(clippy::too_many_arguments)]
pub fn scan_forward<F: Float>(
    dims: ScanDims,
    delta: &[F],
    a: &[F],
    b: &[F],
    c: &[F],
    u: &[F],
    d_skip: &[F],
    y: &mut [F],
    mut trace: Option<&mut ScanTrace<F>>,
) {
    let ScanDims {
        batch,
        len,
        d_inner: ch,
        d_state: ns,
    } = dims;
    let mut h = vec![F::zero(); ch * ns];
    for bi in 0..batch {
        h.iter_mut().for_each(|v| *v = F::zero());
        for t in 0..len {
            let row = bi * len + t;
            let bt = &b[row * ns..(row + 1) * ns];
            let ct = &c[row * ns..(row + 1) * ns];
            for cc in 0..ch {
                let dt = delta[row * ch + cc];
                let ut = u[row * ch + cc];
                let du = dt * ut;
                let ac = &a[cc * ns..(cc + 1) * ns];
                let hc = &mut h[cc * ns..(cc + 1) * ns];
                let mut acc = F::zero();
                for s in 0..ns {
                    let decay = (dt * ac[s]).exp();
                    debug_assert!(
                        dt * ac[s] < F::zero() && decay >= F::zero() && decay <= F::one(),
                        "decay factor outside (0, 1)"
                    );
                    if let Some(tr) = trace.as_deref_mut() {
                        tr.decays[row * ch * ns + cc * ns + s] = decay;
                    }
                    hc[s] = decay * hc[s] + du * bt[s];
                    acc = acc + ct[s] * hc[s];
                }
                y[row * ch + cc] = acc + d_skip[cc] * ut;
            }
            if let Some(tr) = trace.as_deref_mut() {
                tr.states[row * ch * ns..(row + 1) * ch * ns].copy_from_slice(&h);
            }
        }
    }
}

/// Compose two affine maps `h ↦ a·h + b`, applying `first` then `second`.
#[inline]
fn compose<F: Float>(first: (F, F), second: (F, F)) -> (F, F) {
    (first.0 * second.0, second.0 * first.1 + second.1)
}

/// Work-efficient (Blelloch) inclusive scan of affine maps. On return
/// `maps[t]` is the composition of `maps[0..=t]`; its offset is `h[t]` for
/// a zero initial state.
pub fn affine_scan_inclusive<F: Float>(maps: &mut [(F, F)]) {
    let n = maps.len();
    if n <= 1 {
        return;
    }
    let size = n.next_power_of_two();
    let identity = (F::one(), F::zero());
    let orig: Vec<(F, F)> = maps.to_vec();
    let mut tree = orig.clone();
    tree.resize(size, identity);

    // up-sweep
    let mut stride = 1;
    while stride < size {
        let mut i = 2 * stride - 1;
        while i < size {
            tree[i] = compose(tree[i - stride], tree[i]);
            i += 2 * stride;
        }
        stride *= 2;
    }
    // down-sweep (exclusive)
    tree[size - 1] = identity;
    let mut stride = size / 2;
    while stride >= 1 {
        let mut i = 2 * stride - 1;
        while i < size {
            let left = tree[i - stride];
            tree[i - stride] = tree[i];
            tree[i] = compose(tree[i], left);
            i += 2 * stride;
        }
        stride /= 2;
    }
    for t in 0..n {
        maps[t] = compose(tree[t], orig[t]);
    }
}

/// Same result as [`scan_forward`], computed per (channel, state) lane with
/// an associative scan over the per-step affine maps.
#[allow(clippy::too_many_arguments)]
pub fn scan_forward_associative<F: Float>(
    dims: ScanDims,
    delta: &[F],
    a: &[F],
    b: &[F],
    c: &[F],
    u: &[F],
    d_skip: &[F],
    y: &mut [F],
) {
    let ScanDims {
        batch,
        len,
        d_inner: ch,
        d_state: ns,
    } = dims;
    let mut lane = vec![(F::one(), F::zero()); len];
    for bi in 0..batch {
        for cc in 0..ch {
            for t in 0..len {
                let row = bi * len + t;
                y[row * ch + cc] = d_skip[cc] * u[row * ch + cc];
            }
            for s in 0..ns {
                for (t, m) in lane.iter_mut().enumerate() {
                    let row = bi * len + t;
                    let dt = delta[row * ch + cc];
                    *m = (
                        (dt * a[cc * ns + s]).exp(),
                        dt * b[row * ns + s] * u[row * ch + cc],
                    );
                }
                affine_scan_inclusive(&mut lane);
                for (t, m) in lane.iter().enumerate() {
                    let row = bi * len + t;
                    y[row * ch + cc] = y[row * ch + cc] + c[row * ns + s] * m.1;
                }
            }
        }
    }
}

/// Adjoint of [`scan_forward`] given its trace. Returns
/// gradients for (Δ, A, B, C, u, D).
#[allow(clippy::too_many_arguments)]
pub fn scan_backward(
    dims: ScanDims,
    delta: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    u: &[f64],
    d_skip: &[f64],
    trace: &ScanTrace<f64>,
    gy: &[f64],
) -> [Vec<f64>; 6] {
    let ScanDims {
        batch,
        len,
        d_inner: ch,
        d_state: ns,
    } = dims;
    let mut g_delta = vec![0.0; delta.len()];
    let mut g_a = vec![0.0; a.len()];
    let mut g_b = vec![0.0; b.len()];
    let mut g_c = vec![0.0; c.len()];
    let mut g_u = vec![0.0; u.len()];
    let mut g_d = vec![0.0; d_skip.len()];
    let mut carry = vec![0.0; ch * ns];
    for bi in 0..batch {
        carry.iter_mut().for_each(|v| *v = 0.0);
        for t in (0..len).rev() {
            let row = bi * len + t;
            let bt = &b[row * ns..(row + 1) * ns];
            let ct = &c[row * ns..(row + 1) * ns];
            let states = &trace.states;
            let h_now = &states[row * ch * ns..(row + 1) * ch * ns];
            let h_prev = (t > 0).then(|| &states[(row - 1) * ch * ns..row * ch * ns]);
            for cc in 0..ch {
                let dt = delta[row * ch + cc];
                let ut = u[row * ch + cc];
                let gyv = gy[row * ch + cc];
                g_d[cc] += gyv * ut;
                let mut gu = gyv * d_skip[cc];
                let mut gdt = 0.0;
                for s in 0..ns {
                    let k = cc * ns + s;
                    let ac = a[k];
                    g_c[row * ns + s] += gyv * h_now[k];
                    let gh = carry[k] + gyv * ct[s];
                    let decay = trace.decays[row * ch * ns + k];
                    let hp = h_prev.map_or(0.0, |hp| hp[k]);
                    let g_decay = gh * hp * decay;
                    gdt += g_decay * ac + gh * bt[s] * ut;
                    g_a[k] += g_decay * dt;
                    g_b[row * ns + s] += gh * dt * ut;
                    gu += gh * dt * bt[s];
                    carry[k] = gh * decay;
                }
                g_delta[row * ch + cc] += gdt;
                g_u[row * ch + cc] += gu;
            }
        }
    }
    [g_delta, g_a, g_b, g_c, g_u, g_d]
}

/// Owned inputs of one scan, per-sample shapes with an optional leading
/// batch extent.
#[derive(Debug, Clone)]
pub struct SsmScanInputs {
    pub delta: Tensor,
    pub b: Tensor,
    pub c: Tensor,
    pub u: Tensor,
    pub a: Tensor,
    pub d_skip: Tensor,
}

fn dims_of(
    delta: &[usize],
    a: &[usize],
    b: &[usize],
    c: &[usize],
    u: &[usize],
    d_skip: &[usize],
) -> Result<ScanDims> {
    let err = |rhs: &[usize]| Error::Shape {
        op: "selective_scan",
        lhs: delta.to_vec(),
        rhs: rhs.to_vec(),
    };
    if delta.len() < 2 || a.len() != 2 {
        return Err(err(a));
    }
    let r = delta.len();
    let (len, ch) = (delta[r - 2], delta[r - 1]);
    let batch: usize = delta[..r - 2].iter().product();
    let ns = a[1];
    if a[0] != ch {
        return Err(err(a));
    }
    if u != delta {
        return Err(err(u));
    }
    let mut bc_shape = delta.to_vec();
    bc_shape[r - 1] = ns;
    if b != bc_shape.as_slice() {
        return Err(err(b));
    }
    if c != bc_shape.as_slice() {
        return Err(err(c));
    }
    if d_skip != [ch] {
        return Err(err(d_skip));
    }
    Ok(ScanDims {
        batch,
        len,
        d_inner: ch,
        d_state: ns,
    })
}

fn check_delta(delta: &[f64]) -> Result<()> {
    match delta.iter().position(|&d| !(d > 0.0)) {
        Some(i) => Err(Error::Contract(format!(
            "selective_scan requires Δ > 0, got {} at flat index {i}",
            delta[i]
        ))),
        None => Ok(()),
    }
}

impl SsmScanInputs {
    pub fn dims(&self) -> Result<ScanDims> {
        dims_of(
            self.delta.shape(),
            self.a.shape(),
            self.b.shape(),
            self.c.shape(),
            self.u.shape(),
            self.d_skip.shape(),
        )
    }
}

/// Run the reference scan on owned inputs.
pub fn selective_scan(inp: &SsmScanInputs) -> Result<Tensor> {
    let dims = inp.dims()?;
    check_delta(inp.delta.data())?;
    let mut y = vec![0.0; inp.u.numel()];
    scan_forward(
        dims,
        inp.delta.data(),
        inp.a.data(),
        inp.b.data(),
        inp.c.data(),
        inp.u.data(),
        inp.d_skip.data(),
        &mut y,
        None,
    );
    Tensor::new(inp.u.shape(), y)
}

/// Run the associative-scan variant on owned inputs.
pub fn selective_scan_associative(inp: &SsmScanInputs) -> Result<Tensor> {
    let dims = inp.dims()?;
    check_delta(inp.delta.data())?;
    let mut y = vec![0.0; inp.u.numel()];
    scan_forward_associative(
        dims,
        inp.delta.data(),
        inp.a.data(),
        inp.b.data(),
        inp.c.data(),
        inp.u.data(),
        inp.d_skip.data(),
        &mut y,
    );
    Tensor::new(inp.u.shape(), y)
}

struct ScanOp {
    dims: ScanDims,
    trace: ScanTrace<f64>,
}

impl FusedOp for ScanOp {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(
        &self,
        inputs: &[&[f64]],
        _output: &[f64],
        grad_out: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let [delta, a, b, c, u, d] = [
            inputs[0], inputs[1], inputs[2], inputs[3], inputs[4], inputs[5],
        ];
        scan_backward(self.dims, delta, a, b, c, u, d, &self.trace, grad_out)
            .into_iter()
            .map(Some)
            .collect()
    }
}

/// Differentiable selective scan on graph values.
pub fn selective_scan_op<'g>(
    delta: Var<'g>,
    a: Var<'g>,
    b: Var<'g>,
    c: Var<'g>,
    u: Var<'g>,
    d_skip: Var<'g>,
) -> Result<Var<'g>> {
    let dims = dims_of(
        &delta.shape(),
        &a.shape(),
        &b.shape(),
        &c.shape(),
        &u.shape(),
        &d_skip.shape(),
    )?;
    let inputs = [delta, a, b, c, u, d_skip];
    let track = inputs.iter().any(|v| v.requires_grad());
    let (y, trace) = {
        let dl = delta.data();
        check_delta(&dl)?;
        let mut y = vec![0.0; dl.len()];
        let mut trace = if track { ScanTrace::zeros(dims) } else { ScanTrace::default() };
        scan_forward(
            dims,
            &dl,
            &a.data(),
            &b.data(),
            &c.data(),
            &u.data(),
            &d_skip.data(),
            &mut y,
            track.then_some(&mut trace),
        );
        (y, trace)
    };
    let graph = delta.graph();
    Ok(graph.fused(Box::new(ScanOp { dims, trace }), &inputs, u.shape(), y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, Graph};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Per-step recurrence written directly from the definition, one
    /// (channel, state) pair at a time.
    fn naive(inp: &SsmScanInputs) -> Vec<f64> {
        let l = inp.u.shape()[0];
        let ch = inp.u.shape()[1];
        let ns = inp.a.shape()[1];
        let mut y = vec![0.0; l * ch];
        for c in 0..ch {
            let mut h = vec![0.0; ns];
            for t in 0..l {
                let dt = inp.delta.data()[t * ch + c];
                let ut = inp.u.data()[t * ch + c];
                let mut out = inp.d_skip.data()[c] * ut;
                for s in 0..ns {
                    let abar = (dt * inp.a.data()[c * ns + s]).exp();
                    let bbar = dt * inp.b.data()[t * ns + s];
                    h[s] = abar * h[s] + bbar * ut;
                    out += inp.c.data()[t * ns + s] * h[s];
                }
                y[t * ch + c] = out;
            }
        }
        y
    }

    pub(crate) fn random_inputs(rng: &mut impl Rng, l: usize, ch: usize, ns: usize) -> SsmScanInputs {
        let mut r = |shape: &[usize], lo: f64, hi: f64| Tensor::from_fn(shape, |_| rng.gen_range(lo..hi));
        SsmScanInputs {
            delta: r(&[l, ch], 0.01, 1.0),
            b: r(&[l, ns], -1.0, 1.0),
            c: r(&[l, ns], -1.0, 1.0),
            u: r(&[l, ch], -1.0, 1.0),
            a: r(&[ch, ns], -3.0, -0.1),
            d_skip: r(&[ch], -1.0, 1.0),
        }
    }

    #[test]
    fn hand_unrolled_recurrence() {
        let t = |v: &[f64], s: &[usize]| Tensor::new(s, v.to_vec()).unwrap();
        let inp = SsmScanInputs {
            delta: t(&[1.0, 1.0, 1.0], &[3, 1]),
            b: t(&[1.0, 1.0, 1.0], &[3, 1]),
            c: t(&[1.0, 1.0, 1.0], &[3, 1]),
            u: t(&[1.0, 1.0, 1.0], &[3, 1]),
            a: t(&[-std::f64::consts::LN_2], &[1, 1]),
            d_skip: t(&[0.0], &[1]),
        };
        let y = selective_scan(&inp).unwrap();
        let expect = [1.0, 1.5, 1.75];
        for (a, b) in y.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_input_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut inp = random_inputs(&mut rng, 10, 3, 4);
        inp.u = Tensor::zeros(&[10, 3]);
        assert!(selective_scan(&inp).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_naive_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let inp = random_inputs(&mut rng, 64, 4, 8);
            let y = selective_scan(&inp).unwrap();
            let oracle = naive(&inp);
            for (a, b) in y.data().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn associative_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for l in [1, 2, 3, 7, 64, 100] {
            let inp = random_inputs(&mut rng, l, 3, 5);
            let a = selective_scan(&inp).unwrap();
            let b = selective_scan_associative(&inp).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-8, "L={l}");
        }
    }

    #[test]
    fn non_positive_delta_is_contract_violation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut inp = random_inputs(&mut rng, 5, 2, 2);
        inp.delta.data_mut()[3] = 0.0;
        assert!(matches!(selective_scan(&inp), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut inp = random_inputs(&mut rng, 5, 2, 2);
        inp.b = Tensor::zeros(&[4, 2]);
        assert!(matches!(selective_scan(&inp), Err(Error::Shape { .. })));
    }

    #[test]
    fn batched_equals_per_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s1 = random_inputs(&mut rng, 6, 2, 3);
        let s2 = random_inputs(&mut rng, 6, 2, 3);
        let stack = |a: &Tensor, b: &Tensor| {
            let mut shape = vec![2];
            shape.extend_from_slice(a.shape());
            Tensor::new(&shape, [a.data(), b.data()].concat()).unwrap()
        };
        let batched = SsmScanInputs {
            delta: stack(&s1.delta, &s2.delta),
            b: stack(&s1.b, &s2.b),
            c: stack(&s1.c, &s2.c),
            u: stack(&s1.u, &s2.u),
            a: s1.a.clone(),
            d_skip: s1.d_skip.clone(),
        };
        let mut s2 = s2;
        s2.a = s1.a.clone();
        s2.d_skip = s1.d_skip.clone();
        let y = selective_scan(&batched).unwrap();
        let y1 = selective_scan(&s1).unwrap();
        let y2 = selective_scan(&s2).unwrap();
        assert_eq!(&y.data()[..12], y1.data());
        assert_eq!(&y.data()[12..], y2.data());
    }

    #[test]
    fn adjoints_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let inp = random_inputs(&mut rng, 7, 3, 4);
        let weights = Tensor::from_fn(&[7, 3], |_| rng.gen_range(-1.0..1.0));
        let mut params = vec![inp.delta, inp.a, inp.b, inp.c, inp.u, inp.d_skip];
        let report = grad_check(&mut params, 1e-5, |g: &Graph, v| {
            let y = selective_scan_op(v[0], v[1], v[2], v[3], v[4], v[5])?;
            Ok(y.mul(g.constant(weights.clone()))?.sum())
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }
}
