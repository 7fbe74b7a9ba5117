//! Adam-style ascent over lists of tensors, shared by the dual solvers.

use crate::Tensor;

pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: usize,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl AdamState {
    pub fn new(shapes_like: &[Tensor], beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Tensor> = shapes_like
            .iter()
            .map(|t| Tensor::zeros(t.shape().to_vec()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    /// One bias-corrected ascent step in place.
    pub fn ascend(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params[i].data_mut();
            for j in 0..g.len() {
                let gj = g[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] += lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Linear interpolation over an iteration schedule; `t` counts from 1.
pub fn schedule(start: f64, end: f64, t: usize, total: usize) -> f64 {
    if total <= 1 {
        start
    } else {
        start + (end - start) * ((t - 1) as f64) / ((total - 1) as f64)
    }
}
