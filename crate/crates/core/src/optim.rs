//! Adam with linear warmup followed by linear decay.

use crate::encoder::{EncoderParams, Gradients, ParamTensors};
use crate::heads::HeadParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LinearSchedule {
    pub fn new(total_steps: usize, warmup_fraction: f64) -> Self {
        let warmup_steps = ((total_steps as f64) * warmup_fraction).round() as usize;
        LinearSchedule { warmup_steps, total_steps: total_steps.max(1) }
    }

    /// Learning-rate multiplier for 0-based `step`.
    pub fn factor(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            (step + 1) as f64 / self.warmup_steps as f64
        } else {
            let decay = self.total_steps.saturating_sub(self.warmup_steps).max(1);
            let done = step - self.warmup_steps;
            (1.0 - done as f64 / decay as f64).max(0.0)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, encoder: &EncoderParams, heads: &HeadParams) -> Self {
        let shapes: Vec<usize> = encoder.tensors().iter().chain(heads.tensors().iter()).map(|t| t.len()).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, encoder: &mut EncoderParams, heads: &mut HeadParams, grads: &Gradients, lr_factor: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let lr = self.lr * lr_factor;
        let params = encoder.tensors_mut().into_iter().chain(heads.tensors_mut());
        let gs = grads.encoder.tensors().into_iter().chain(grads.heads.tensors());
        for (((p, g), m), v) in params.zip(gs).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
