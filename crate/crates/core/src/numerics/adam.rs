use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam optimizer state with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Fresh state for parameters of the given shapes, with the usual
    /// defaults `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>, lr: f64) -> Self {
        let m: Vec<Tensor> = shapes.into_iter().map(Tensor::zeros).collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn for_params(params: &[Tensor], lr: f64) -> Self {
        Self::new(params.iter().map(|p| p.shape()), lr)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }
}

/// One in-place Adam update of `params` given `grads`.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::LengthMismatch {
            what: "adam parameter list",
            left: params.len(),
            right: grads.len(),
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Rescale `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Scalar Adam written out independently of the tensor version.
    struct ScalarAdam {
        m: f64,
        v: f64,
        t: i32,
    }

    impl ScalarAdam {
        fn step(&mut self, theta: f64, g: f64, lr: f64) -> f64 {
            self.t += 1;
            self.m = 0.9 * self.m + 0.1 * g;
            self.v = 0.999 * self.v + 0.001 * g * g;
            let mh = self.m / (1.0 - 0.9f64.powi(self.t));
            let vh = self.v / (1.0 - 0.999f64.powi(self.t));
            theta - lr * mh / (vh.sqrt() + 1e-8)
        }
    }

    #[test]
    fn zero_gradient_leaves_params_bit_identical() {
        let mut p = vec![Tensor::new(&[3], vec![0.0, -1.25, 3.5e-7]).unwrap()];
        let before = p.clone();
        let mut st = AdamState::for_params(&p, 1e-3);
        adam_step(&mut p, &[Tensor::zeros(&[3])], &mut st).unwrap();
        for (a, b) in p[0].data().iter().zip(before[0].data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_unit_gradient() {
        let mut p = vec![Tensor::zeros(&[1])];
        let mut st = AdamState::for_params(&p, 0.001);
        adam_step(&mut p, &[Tensor::full(&[1], 1.0)], &mut st).unwrap();
        let expected = -0.001 * 1.0 / (1.0 + 1e-8);
        assert!((p[0].data()[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn matches_scalar_oracle_over_100_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 5;
        let mut p = vec![Tensor::from_fn(&[n], |_| rng.gen_range(-1.0..1.0))];
        let mut oracle: Vec<(f64, ScalarAdam)> = p[0]
            .data()
            .iter()
            .map(|&v| (v, ScalarAdam { m: 0.0, v: 0.0, t: 0 }))
            .collect();
        let mut st = AdamState::for_params(&p, 1e-2);
        for _ in 0..100 {
            let g = Tensor::from_fn(&[n], |_| rng.gen_range(-2.0..2.0));
            adam_step(&mut p, std::slice::from_ref(&g), &mut st).unwrap();
            for (i, (theta, opt)) in oracle.iter_mut().enumerate() {
                *theta = opt.step(*theta, g.data()[i], 1e-2);
            }
        }
        for (i, (theta, _)) in oracle.iter().enumerate() {
            assert!((p[0].data()[i] - theta).abs() < 1e-12);
        }
        assert_eq!(st.step_count(), 100);
        assert_eq!(st.first_moments()[0].shape(), &[n]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut st = AdamState::for_params(&p, 1e-3);
        assert!(adam_step(&mut p, &[Tensor::zeros(&[3])], &mut st).is_err());
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![Tensor::new(&[2], vec![3.0, 4.0]).unwrap()];
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
        let mut small = vec![Tensor::new(&[1], vec![0.5]).unwrap()];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data(), &[0.5]);
    }
}
