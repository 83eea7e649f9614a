//! AdamW with decoupled weight decay.

use unmixsr_autodiff::Tensor;

use crate::error::{invalid, Result};
use crate::harness::config::TrainConfig;
use crate::nn::ModelParameters;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: ModelParameters,
    pub v: ModelParameters,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig, params: &ModelParameters) -> Self {
        let zeros = || {
            let mut z = ModelParameters::new();
            for (k, t) in params.iter() {
                z.insert(k.clone(), Tensor::zeros(t.shape())).expect("names are unique");
            }
            z
        };
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// `θ ← θ - lr·(m̂/(√v̂ + ε) + λθ)`. Missing gradients count as zero.
    pub fn update(&mut self, params: &mut ModelParameters, grads: &[(String, Tensor)]) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        for (name, g) in grads {
            let p = params.get_mut(name).ok_or_else(|| invalid(format!("unknown parameter {name}")))?;
            let m = self.m.get_mut(name).expect("moments mirror parameters");
            let v = self.v.get_mut(name).expect("moments mirror parameters");
            for (((pi, mi), vi), gi) in
                p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = (*mi / c1) / ((*vi / c2).sqrt() + self.eps) + self.weight_decay * *pi;
                *pi -= self.lr * update;
            }
        }
        Ok(())
    }
}
