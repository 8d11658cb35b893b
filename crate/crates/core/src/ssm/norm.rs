use crate::error::{Error, Result};
use crate::numerics::{FusedOp, Var};

pub const RMS_EPS: f64 = 1e-6;

struct RmsNormOp {
    dim: usize,
}

impl FusedOp for RmsNormOp {
    fn name(&self) -> &'static str {
        "rmsnorm"
    }

    fn backward(
        &self,
        inputs: &[&[f64]],
        _output: &[f64],
        g: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let (x, gain) = (inputs[0], inputs[1]);
        let d = self.dim;
        let mut gx = vec![0.0; x.len()];
        let mut gg = vec![0.0; d];
        for ((xr, gr), gxr) in x
            .chunks_exact(d)
            .zip(g.chunks_exact(d))
            .zip(gx.chunks_exact_mut(d))
        {
            let ms = xr.iter().map(|v| v * v).sum::<f64>() / d as f64;
            let r = 1.0 / (ms + RMS_EPS).sqrt();
            let mut proj = 0.0;
            for i in 0..d {
                gg[i] += gr[i] * xr[i] * r;
                proj += gr[i] * gain[i] * xr[i];
            }
            let coef = proj * r * r * r / d as f64;
            for i in 0..d {
                gxr[i] = r * gain[i] * gr[i] - coef * xr[i];
            }
        }
        vec![needs[0].then_some(gx), needs[1].then_some(gg)]
    }
}

/// Per-row `x / sqrt(mean(x²) + 1e-6) · gain` over the last axis.
pub fn rmsnorm<'g>(x: Var<'g>, gain: Var<'g>) -> Result<Var<'g>> {
    let xs = x.shape();
    let gs = gain.shape();
    if xs.is_empty() || gs.len() != 1 || xs.last() != Some(&gs[0]) {
        return Err(Error::Shape {
            op: "rmsnorm",
            lhs: xs,
            rhs: gs,
        });
    }
    let d = gs[0];
    let y = {
        let xv = x.data();
        let gv = gain.data();
        let mut y = vec![0.0; xv.len()];
        for (xr, yr) in xv.chunks_exact(d).zip(y.chunks_exact_mut(d)) {
            let ms = xr.iter().map(|v| v * v).sum::<f64>() / d as f64;
            let r = 1.0 / (ms + RMS_EPS).sqrt();
            for i in 0..d {
                yr[i] = xr[i] * r * gv[i];
            }
        }
        y
    };
    Ok(x.graph().fused(Box::new(RmsNormOp { dim: d }), &[x, gain], xs, y))
}
