use crate::tensor::{Scalar, Tensor};

/// Adam with bias-corrected moment estimates:
///
/// ```text
/// m ← β₁m + (1 − β₁)g        v ← β₂v + (1 − β₂)g²
/// p ← p − lr · (m / (1 − β₁ᵗ)) / (√(v / (1 − β₂ᵗ)) + ε)
/// ```
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar = f32> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &[Tensor<T>], betas: (f64, f64), eps: f64) -> Self {
        Self {
            beta1: betas.0,
            beta2: betas.1,
            eps,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count");
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one, eps) = (T::one(), T::lit(self.eps));
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let lr = T::lit(lr);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.shape(), g.shape(), "gradient shape");
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (i, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = b1 * m[i] + (one - b1) * *gv;
                v[i] = b2 * v[i] + (one - b2) * *gv * *gv;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *pv -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// `lr(epoch) = base · factor^⌊epoch / period⌋`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepScheduler {
    pub base: f64,
    pub period: usize,
    pub factor: f64,
}

impl StepScheduler {
    /// Period from the config, or a third of the epochs rounded up.
    pub fn new(base: f64, epochs: usize, period: Option<usize>, factor: f64) -> Self {
        Self { base, period: period.unwrap_or_else(|| epochs.div_ceil(3)).max(1), factor }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        self.base * self.factor.powi((epoch / self.period) as i32)
    }
}
