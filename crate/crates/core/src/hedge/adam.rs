use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction over a fixed-length flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One update over `(parameters, gradient)` slice pairs, consumed in
    /// order. Panics if the total length differs from the state's.
    pub fn update<'a, I>(&mut self, pairs: I)
    where
        I: IntoIterator<Item = (&'a mut [f64], &'a [f64])>,
    {
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let mut offset = 0;
        for (params, grads) in pairs {
            assert_eq!(params.len(), grads.len(), "parameter and gradient shapes differ");
            let m = &mut self.m[offset..offset + params.len()];
            let v = &mut self.v[offset..offset + params.len()];
            for (((p, g), mi), vi) in params.iter_mut().zip(grads).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
            offset += params.len();
        }
        assert_eq!(offset, self.m.len(), "parameter count differs from optimizer state");
    }
}

/// Single-vector convenience form.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) {
    state.update(std::iter::once((params, grads)));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_closed_form() {
        let mut s = AdamState::new(AdamConfig::default(), 1);
        let mut p = [1.0];
        adam_step(&mut s, &mut p, &[2.0]);
        let expected = 1.0 - 0.005 * 2.0 / (2.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] - 0.995).abs() < 1e-10);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn zero_gradient_is_inert() {
        let mut s = AdamState::new(AdamConfig::default(), 3);
        let mut p = [1.0, -2.0, 3.0];
        adam_step(&mut s, &mut p, &[0.0; 3]);
        assert_eq!(p, [1.0, -2.0, 3.0]);
        assert!(s.first_moment().iter().all(|m| *m == 0.0));
        assert!(s.second_moment().iter().all(|v| *v == 0.0));
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn two_steps_constant_gradient() {
        // m1 = 0.1 g, v1 = 0.001 g^2; m2 = 0.19 g, v2 = 0.001999 g^2.
        // Bias corrections 1 - 0.9^2 = 0.19 and 1 - 0.999^2 = 0.001999 make
        // both m_hat = g and v_hat = g^2, so each step moves by lr g / (|g| + eps).
        let g = -3.0;
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        let mut s = AdamState::new(cfg, 1);
        let mut p = [0.5];
        adam_step(&mut s, &mut p, &[g]);
        adam_step(&mut s, &mut p, &[g]);
        let step = 0.01 * g / (g.abs() + 1e-8);
        assert!((p[0] - (0.5 - 2.0 * step)).abs() < 1e-14);
        assert!((s.first_moment()[0] - 0.19 * g).abs() < 1e-14);
        assert!((s.second_moment()[0] - 0.001999 * g * g).abs() < 1e-14);
    }

    #[test]
    fn two_steps_varying_gradient() {
        let (g1, g2) = (1.0, -4.0);
        let cfg = AdamConfig::default();
        let mut s = AdamState::new(cfg, 1);
        let mut p = [0.0];
        adam_step(&mut s, &mut p, &[g1]);
        adam_step(&mut s, &mut p, &[g2]);
        let m2 = 0.9 * 0.1 * g1 + 0.1 * g2;
        let v2 = 0.999 * 0.001 * g1 * g1 + 0.001 * g2 * g2;
        let second = 0.005 * (m2 / 0.19) / ((v2 / 0.001999).sqrt() + 1e-8);
        let first = 0.005 * g1 / (g1.abs() + 1e-8);
        assert!((p[0] - (-first - second)).abs() < 1e-15);
    }

    #[test]
    #[should_panic]
    fn shape_mismatch_panics() {
        let mut s = AdamState::new(AdamConfig::default(), 2);
        let mut p = [0.0; 3];
        adam_step(&mut s, &mut p, &[0.0; 3]);
    }
}
