use crate::autodiff::Matrix;
use crate::model::{ModelParams, ModelWeights};

/// Adaptive-moment optimizer without weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u32,
    m: ModelWeights<Matrix<f32>>,
    v: ModelWeights<Matrix<f32>>,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        let zeros = params.map(|p| Matrix::zeros(p.rows(), p.cols()));
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    /// One bias-corrected update in place.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelWeights<Matrix<f32>>) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let lr = (self.lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for (((pi, gi), mi), vi) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *pi -= lr * *mi / (vi.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let config = ModelConfig {
            hidden_dim: 4,
            heads: 2,
            mlp_dim: 3,
            lstm_hidden: 2,
            transformer_depth: 1,
            ..Default::default()
        };
        let mut p = init_params(&config);
        let before = p.clone();
        let grads = p.map(|m| m.map(|_| 0.5));
        let mut adam = Adam::new(&p, 1e-2);
        adam.step(&mut p, &grads);
        for (a, b) in p.iter().zip(before.iter()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((y - x - 1e-2).abs() < 1e-6);
            }
        }
        assert_eq!(adam.steps(), 1);
    }
}
