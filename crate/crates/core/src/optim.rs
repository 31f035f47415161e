//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::model::{Gradients, Model};
use crate::temporal::SlotKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW { cfg, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// One update over a list of tensors with matching gradients. Frozen
    /// tensors are skipped; decay (`p *= 1 - lr * wd`) only touches
    /// tensors marked for it.
    pub fn step_tensors(&mut self, params: Vec<(SlotKind, &mut Vec<f64>)>, grads: &[Vec<f64>]) {
        assert_eq!(params.len(), grads.len(), "one gradient per tensor");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let AdamWConfig { learning_rate: lr, weight_decay: wd, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step);
        let bc2 = 1.0 - beta2.powi(self.step);
        for (k, ((kind, p), g)) in params.into_iter().zip(grads).enumerate() {
            if !kind.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let decay = if kind.decay { 1.0 - lr * wd } else { 1.0 };
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] = p[i] * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &Gradients) {
        let params = model.slots_mut().into_iter().map(|(_, kind, t)| (kind, t)).collect();
        self.step_tensors(params, &grads.tensors);
    }
}
