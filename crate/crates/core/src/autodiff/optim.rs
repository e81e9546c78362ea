use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let m: Vec<Tensor> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. Parameters whose gradient is `None` are left untouched but
    /// still share the global step counter.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) {
        assert_eq!(grads.len(), params.len(), "one gradient slot per parameter");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = params.get_mut(super::ParamId(i));
            assert_eq!(p.shape(), g.shape(), "gradient shape");
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((w, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
                let mhat = *mj / bc1;
                let vhat = *vj / bc2;
                *w -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Cosine annealing from `lr0` at step 0 to 0 at `total`.
pub fn cosine_lr(step: usize, total: usize, lr0: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let frac = step.min(total) as f64 / total as f64;
    lr0 * (1.0 + (core::f64::consts::PI * frac).cos()) / 2.0
}
