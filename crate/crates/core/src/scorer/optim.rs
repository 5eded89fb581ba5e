//! Adam with an inverse-square-root learning-rate schedule.

use super::model::{round_f32, ScorerParams};
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Optimizer {
    lr: f64,
    warmup: usize,
    betas: (f64, f64),
    eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(params: &ScorerParams) -> Self {
        let cfg = params.config();
        Optimizer {
            lr: cfg.lr,
            warmup: cfg.warmup_steps,
            betas: cfg.adam_betas,
            eps: cfg.adam_eps,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Linear warmup to the peak rate, then decay with `1/√step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let w = self.warmup.max(1) as f64;
        let s = step.max(1) as f64;
        if s < w {
            self.lr * s / w
        } else {
            self.lr * (w / s).sqrt()
        }
    }

    pub fn update(&mut self, params: &mut ScorerParams, grads: &[Tensor]) {
        self.step += 1;
        let lr = self.lr_at(self.step);
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                let mhat = m.data[i] / c1;
                let vhat = v.data[i] / c2;
                p.data[i] = round_f32(p.data[i] - lr * mhat / (vhat.sqrt() + self.eps));
            }
        }
    }
}
