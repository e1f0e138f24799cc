//! Adam with decoupled weight decay.

use super::tensor::Tensor;
use super::{NumericsError, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer state: per-parameter moment buffers plus the step counter,
/// which increases by exactly 1 per update.
pub struct AdamState {
    step: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(param_shapes: &[Vec<usize>], hyper: AdamHyper) -> AdamState {
        AdamState {
            step: 0,
            first_moment: param_shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            second_moment: param_shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            hyper,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One decoupled-weight-decay update over all parameters. `lr_scale`
    /// multiplies the base learning rate (warmup/decay schedules).
    /// Parameters and moments are replaced by fresh tensors.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr_scale: f64) -> Result<()> {
        if params.len() != self.first_moment.len() || params.len() != grads.len() {
            return Err(NumericsError::OptimizerMismatch {
                state: self.first_moment.len(),
                params: params.len(),
            });
        }
        let h = self.hyper;
        let lr = h.learning_rate * lr_scale;
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - h.beta1.powi(t);
        let bias2 = 1.0 - h.beta2.powi(t);

        for i in 0..params.len() {
            let p = &params[i];
            let g = &grads[i];
            if p.shape() != g.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let m_old = self.first_moment[i].data();
            let v_old = self.second_moment[i].data();
            let mut m_new = Vec::with_capacity(p.numel());
            let mut v_new = Vec::with_capacity(p.numel());
            let mut p_new = Vec::with_capacity(p.numel());
            for j in 0..p.numel() {
                let gj = g.data()[j];
                let m = h.beta1 * m_old[j] + (1.0 - h.beta1) * gj;
                let v = h.beta2 * v_old[j] + (1.0 - h.beta2) * gj * gj;
                let m_hat = m / bias1;
                let v_hat = v / bias2;
                let pj = p.data()[j];
                p_new.push(pj - lr * h.weight_decay * pj - lr * m_hat / (v_hat.sqrt() + h.epsilon));
                m_new.push(m);
                v_new.push(v);
            }
            self.first_moment[i] = Tensor::new(p.shape().to_vec(), m_new);
            self.second_moment[i] = Tensor::new(p.shape().to_vec(), v_new);
            params[i] = Tensor::new(p.shape().to_vec(), p_new);
        }
        Ok(())
    }
}
