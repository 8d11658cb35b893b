//! Scalar nonlinearities shared by the graph ops and the kernels.

use num_traits::Float;

/// Inputs above this are returned as-is by [`softplus`]; `log1p(e^-x)` is
/// below 1e-13 there.
pub const SOFTPLUS_THRESHOLD: f64 = 30.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// d/dx silu(x) = σ(x)(1 + x(1 − σ(x))).
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// `log(1 + e^x)`, overflow safe.
pub fn softplus(x: f64) -> f64 {
    softplus_generic(x)
}

pub fn softplus_generic<F: Float>(x: F) -> F {
    let threshold = F::from(SOFTPLUS_THRESHOLD).unwrap();
    if x > threshold {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of softplus for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Per-element smooth-L1 penalty.
pub fn smooth_l1_elem(d: f64, beta: f64) -> f64 {
    let a = d.abs();
    if a < beta {
        0.5 * d * d / beta
    } else {
        a - 0.5 * beta
    }
}
