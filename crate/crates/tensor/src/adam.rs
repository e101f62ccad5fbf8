use crate::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// A trainable tensor with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let n = value.len();
        Self {
            grad: Tensor::zeros(value.shape()),
            value,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    fn update(&mut self, step: u64, cfg: &AdamConfig) {
        let c = |x: f64| T::from_f64_lossy(x);
        let (b1, b2) = (c(cfg.beta1), c(cfg.beta2));
        let t = step as i32;
        let corr1 = T::one() - b1.powi(t);
        let corr2 = T::one() - b2.powi(t);
        let (lr, eps) = (c(cfg.lr), c(cfg.eps));
        let g = self.grad.data();
        for (i, p) in self.value.data_mut().iter_mut().enumerate() {
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g[i] * g[i];
            let m_hat = self.m[i] / corr1;
            let v_hat = self.v[i] / corr2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Weights and bias of one layer plus the shared optimizer step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState<T> {
    pub weights: Param<T>,
    pub bias: Param<T>,
    pub step: u64,
}

impl<T: Scalar> LayerState<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Self {
        Self {
            weights: Param::new(weights),
            bias: Param::new(bias),
            step: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.weights.zero_grad();
        self.bias.zero_grad();
    }
}

/// One bias-corrected Adam update of every parameter in `state`.
pub fn adam_step<T: Scalar>(state: &mut LayerState<T>, cfg: &AdamConfig) {
    state.step += 1;
    state.weights.update(state.step, cfg);
    state.bias.update(state.step, cfg);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_state(w: f64) -> LayerState<f64> {
        LayerState::new(Tensor::filled(&[1], w), Tensor::zeros(&[1]))
    }

    #[test]
    fn first_step_moves_by_about_lr_against_gradient() {
        let cfg = AdamConfig::default();
        for g in [1e-6, 0.3, -2.0, 1e4] {
            let mut s = scalar_state(1.0);
            s.weights.grad.data_mut()[0] = g;
            adam_step(&mut s, &cfg);
            let delta = s.weights.value.data()[0] - 1.0;
            assert_eq!(delta.signum(), -g.signum());
            let lower = cfg.lr * g.abs() / (g.abs() + cfg.eps);
            assert!(delta.abs() <= cfg.lr + 1e-15 && delta.abs() >= lower - 1e-15, "g={g} delta={delta}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = scalar_state(0.25);
        for _ in 0..3 {
            adam_step(&mut s, &AdamConfig::default());
        }
        assert_eq!(s.weights.value.data()[0], 0.25);
        assert_eq!(s.step, 3);
    }

    #[test]
    fn three_steps_on_quadratic_match_hand_trace() {
        // f(w) = (w - 3)^2, w0 = 0
        let cfg = AdamConfig::default();
        let mut s = scalar_state(0.0);
        let (mut w, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = 2.0 * (w - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 1e-3 * mh / (vh.sqrt() + 1e-8);

            let cur = s.weights.value.data()[0];
            s.weights.grad.data_mut()[0] = 2.0 * (cur - 3.0);
            adam_step(&mut s, &cfg);
            assert!((s.weights.value.data()[0] - w).abs() < 1e-12);
        }
    }
}
