use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, config: AdamConfig) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(Tensor::zeros_like).collect();
        Self {
            config,
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    assert_eq!(params.len(), state.m.len(), "optimizer state matches parameters");
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((x, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]);
        let before = p.clone();
        let g = Tensor::zeros(&[1, 3]);
        let mut st = AdamState::new([&p], AdamConfig::default());
        adam_step(&mut [&mut p], &[g], &mut st, 0.1);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_matches_hand_formula() {
        // m = 0.1 g, v = 0.001 g²; m̂ = g, v̂ = g²; Δ = -lr g / (|g| + eps)
        let mut p = Tensor::matrix(1, 2, vec![1.0, 1.0]);
        let g = Tensor::matrix(1, 2, vec![0.5, -4.0]);
        let mut st = AdamState::new([&p], AdamConfig::default());
        adam_step(&mut [&mut p], &[g], &mut st, 0.01);
        let expected = [1.0 - 0.01 * 0.5 / (0.5 + 1e-8), 1.0 + 0.01 * 4.0 / (4.0 + 1e-8)];
        for (a, b) in p.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = Tensor::matrix(1, 2, vec![0.3, 0.7]);
            let mut st = AdamState::new([&p], AdamConfig::default());
            for i in 0..5 {
                let g = Tensor::matrix(1, 2, vec![i as f64 * 0.1, -0.2]);
                adam_step(&mut [&mut p], &[g], &mut st, 0.05);
            }
            p
        };
        assert_eq!(run(), run());
    }
}
