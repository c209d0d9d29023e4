//! Adam with L2 weight decay and the polynomial learning-rate schedule.

use crate::backbone::{Model, ModelGrads};

/// Polynomial decay: `lr0 * (1 - t/T)^0.9`. Hits `lr0` at t = 0 and 0 at
/// t = T.
pub fn poly_lr(lr0: f64, epoch: usize, total_epochs: usize) -> f64 {
    let t = epoch as f64 / total_epochs.max(1) as f64;
    lr0 * (1.0 - t).max(0.0).powf(0.9)
}

/// Adam keeping first/second moment buffers per tensor, in the model's
/// canonical tensor order. Weight decay is added to the raw gradient
/// before the moment updates.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &Model, weight_decay: f64) -> Adam {
        let shapes: Vec<usize> = model.flat_tensors().iter().map(|t| t.len()).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &ModelGrads, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let grad_tensors = grads.flat_tensors();
        let mut params = model.flat_tensors_mut();
        assert_eq!(grad_tensors.len(), params.len());
        for (ti, param) in params.iter_mut().enumerate() {
            let g_tensor = grad_tensors[ti];
            let m = &mut self.m[ti];
            let v = &mut self.v[ti];
            for (i, p) in param.iter_mut().enumerate() {
                let g = g_tensor[i] + self.weight_decay * *p;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *p -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
