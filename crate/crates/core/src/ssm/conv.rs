//! Causal depthwise 1-D convolution over time.

use crate::error::{Error, Result};
use crate::numerics::{FusedOp, Var};

/// `[B, L, C]` input with `[C, K]` kernels and `[C]` bias.
#[derive(Debug, Clone, Copy)]
struct ConvDims {
    batch: usize,
    len: usize,
    channels: usize,
    width: usize,
}

fn conv_forward(dims: ConvDims, x: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let ConvDims {
        batch,
        len,
        channels,
        width,
    } = dims;
    let mut y = vec![0.0; x.len()];
    for bi in 0..batch {
        for t in 0..len {
            let out = &mut y[(bi * len + t) * channels..(bi * len + t + 1) * channels];
            out.copy_from_slice(bias);
            for j in 0..width {
                // tap j reads x[t − (width − 1) + j]
                let Some(src_t) = (t + j + 1).checked_sub(width) else {
                    continue;
                };
                let src = &x[(bi * len + src_t) * channels..(bi * len + src_t + 1) * channels];
                for c in 0..channels {
                    out[c] += kernel[c * width + j] * src[c];
                }
            }
        }
    }
    y
}

struct ConvOp {
    dims: ConvDims,
}

impl FusedOp for ConvOp {
    fn name(&self) -> &'static str {
        "causal_depthwise_conv1d"
    }

    fn backward(
        &self,
        inputs: &[&[f64]],
        _output: &[f64],
        g: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let ConvDims {
            batch,
            len,
            channels,
            width,
        } = self.dims;
        let (x, kernel) = (inputs[0], inputs[1]);
        let mut gx = vec![0.0; x.len()];
        let mut gk = vec![0.0; kernel.len()];
        let mut gb = vec![0.0; channels];
        for bi in 0..batch {
            for t in 0..len {
                let grow = &g[(bi * len + t) * channels..(bi * len + t + 1) * channels];
                for c in 0..channels {
                    gb[c] += grow[c];
                }
                for j in 0..width {
                    let Some(src_t) = (t + j + 1).checked_sub(width) else {
                        continue;
                    };
                    let base = (bi * len + src_t) * channels;
                    for c in 0..channels {
                        gx[base + c] += grow[c] * kernel[c * width + j];
                        gk[c * width + j] += grow[c] * x[base + c];
                    }
                }
            }
        }
        vec![
            needs[0].then_some(gx),
            needs[1].then_some(gk),
            needs[2].then_some(gb),
        ]
    }
}

/// `y[t,c] = Σ_j kernel[c,j] · x[t−K+1+j, c] + bias[c]`, with `x` zero
/// before the first step. Accepts `[L, C]` or `[B, L, C]`.
pub fn causal_depthwise_conv1d<'g>(x: Var<'g>, kernel: Var<'g>, bias: Var<'g>) -> Result<Var<'g>> {
    let xs = x.shape();
    let ks = kernel.shape();
    let bs = bias.shape();
    let r = xs.len();
    if r < 2 || ks.len() != 2 || ks[0] != xs[r - 1] || ks[1] == 0 || bs != [xs[r - 1]] {
        return Err(Error::Shape {
            op: "causal_depthwise_conv1d",
            lhs: xs,
            rhs: ks,
        });
    }
    let dims = ConvDims {
        batch: xs[..r - 2].iter().product(),
        len: xs[r - 2],
        channels: xs[r - 1],
        width: ks[1],
    };
    let y = conv_forward(dims, &x.data(), &kernel.data(), &bias.data());
    Ok(x.graph().fused(Box::new(ConvOp { dims }), &[x, kernel, bias], xs, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, Graph, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn run(x: &Tensor, k: &Tensor, b: &Tensor) -> Tensor {
        let g = Graph::new();
        causal_depthwise_conv1d(g.constant(x.clone()), g.constant(k.clone()), g.constant(b.clone()))
            .unwrap()
            .value()
    }

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::from_fn(&[5, 3], |i| i as f64 * 0.5 - 1.0);
        let y = run(&x, &Tensor::full(&[3, 1], 1.0), &Tensor::zeros(&[3]));
        assert_eq!(y, x);
    }

    #[test]
    fn impulse_response() {
        let (a, b) = (0.3, -1.7);
        let x = Tensor::new(&[3, 1], vec![1.0, 0.0, 0.0]).unwrap();
        let k = Tensor::new(&[1, 2], vec![a, b]).unwrap();
        let y = run(&x, &k, &Tensor::zeros(&[1]));
        assert_eq!(y.data(), &[b, a, 0.0]);
    }

    #[test]
    fn causal_under_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::from_fn(&[10, 4], |_| rng.gen_range(-1.0..1.0));
        let k = Tensor::from_fn(&[4, 4], |_| rng.gen_range(-1.0..1.0));
        let b = Tensor::from_fn(&[4], |_| rng.gen_range(-1.0..1.0));
        let y0 = run(&x, &k, &b);
        let mut x2 = x.clone();
        for c in 0..4 {
            x2.data_mut()[5 * 4 + c] += 3.0;
        }
        let y1 = run(&x2, &k, &b);
        assert_eq!(&y0.data()[..20], &y1.data()[..20]);
        assert_ne!(&y0.data()[20..24], &y1.data()[20..24]);
    }

    #[test]
    fn adjoints_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = vec![
            Tensor::from_fn(&[2, 6, 3], |_| rng.gen_range(-1.0..1.0)),
            Tensor::from_fn(&[3, 4], |_| rng.gen_range(-1.0..1.0)),
            Tensor::from_fn(&[3], |_| rng.gen_range(-1.0..1.0)),
        ];
        let w = Tensor::from_fn(&[2, 6, 3], |_| rng.gen_range(-1.0..1.0));
        let r = grad_check(&mut p, 1e-5, |g, v| {
            Ok(causal_depthwise_conv1d(v[0], v[1], v[2])?
                .mul(g.constant(w.clone()))?
                .sum())
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-7, "{r:?}");
    }
}
