//! Flat TOML run configuration with typed validation; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::ModelConfig;
use crate::scene_sim::{SceneSpec, BLUR_KERNEL_SIZE, BLUR_SIGMA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // model
    pub endmembers: usize,
    pub channels: usize,
    pub scales: usize,
    pub blocks_per_scale: usize,
    pub window: usize,
    pub omega: f64,
    pub pe_bands: usize,
    pub deform_kernel: usize,
    pub flow_down: usize,
    pub unmix: bool,
    pub cfda: bool,
    pub scaca: bool,
    pub scmf: bool,
    // optimization
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Linear warmup length in steps; 0 disables it.
    pub warmup_steps: usize,
    /// "constant" or "cosine" (decay to zero over the whole run).
    pub lr_schedule: String,
    /// Global gradient-norm clip; 0 disables it.
    pub grad_clip: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub seed: u64,
    pub loss: String,
    // data
    pub scale_factor: usize,
    pub bands: usize,
    pub scene_height: usize,
    pub scene_width: usize,
    pub scene_rank: usize,
    pub smoothness: f64,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub data_seed: u64,
    pub misregistration_px: f64,
    pub blur_kernel: usize,
    pub blur_sigma: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::tiny(16);
        Self {
            endmembers: m.endmembers,
            channels: m.channels,
            scales: m.scales,
            blocks_per_scale: m.blocks_per_scale,
            window: m.window,
            omega: m.omega,
            pe_bands: m.pe_bands,
            deform_kernel: m.deform_kernel,
            flow_down: m.flow_down,
            unmix: true,
            cfda: true,
            scaca: true,
            scmf: true,
            learning_rate: 1e-5,
            weight_decay: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            warmup_steps: 0,
            lr_schedule: "constant".into(),
            grad_clip: 0.0,
            batch_size: 1,
            epochs: 30,
            steps_per_epoch: 20,
            seed: 0,
            loss: "l1".into(),
            scale_factor: 4,
            bands: 16,
            scene_height: 64,
            scene_width: 64,
            scene_rank: 4,
            smoothness: 6.0,
            train_scenes: 4,
            test_scenes: 2,
            data_seed: 1000,
            misregistration_px: 8.0,
            blur_kernel: BLUR_KERNEL_SIZE,
            blur_sigma: BLUR_SIGMA,
        }
    }
}

/// Optimizer and schedule settings; the loss is always mean absolute error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: usize,
    pub cosine: bool,
    pub grad_clip: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub seed: u64,
    pub scale_factor: usize,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl TrainConfig {
    pub fn total_steps(&self) -> u64 {
        (self.epochs * self.steps_per_epoch) as u64
    }

    /// Learning rate used at (0-based) `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let mut lr = self.learning_rate;
        if self.warmup_steps > 0 && step < self.warmup_steps as u64 {
            lr *= (step + 1) as f64 / self.warmup_steps as f64;
        }
        if self.cosine {
            let t = (step as f64 / self.total_steps().max(1) as f64).min(1.0);
            lr *= 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        }
        lr
    }
}

impl RunConfig {
    /// Desk-scale smoke run: 200 steps on the default four scenes with a
    /// learning rate calibrated for that budget.
    pub fn smoke() -> Self {
        Self { learning_rate: 7e-4, epochs: 10, steps_per_epoch: 20, ..Self::default() }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate().map_err(|e| bad(e.to_string()))?;
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(bad("learning_rate and weight_decay must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(bad("Adam betas must lie in [0, 1) and adam_eps be positive"));
        }
        if self.batch_size == 0 || self.steps_per_epoch == 0 {
            return Err(bad("batch_size and steps_per_epoch must be at least 1"));
        }
        if self.lr_schedule != "constant" && self.lr_schedule != "cosine" {
            return Err(bad(format!("lr_schedule must be \"constant\" or \"cosine\", got {:?}", self.lr_schedule)));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(bad("grad_clip must be non-negative"));
        }
        if self.loss != "l1" {
            return Err(bad(format!("unsupported loss {:?}; only \"l1\"", self.loss)));
        }
        if self.train_scenes == 0 {
            return Err(bad("train_scenes must be at least 1"));
        }
        if self.scene_height % self.scale_factor != 0 || self.scene_width % self.scale_factor != 0 {
            return Err(bad("scene size must be divisible by scale_factor"));
        }
        if self.scene_rank == 0 || self.scene_rank > self.bands {
            return Err(bad("scene_rank must lie in 1..=bands"));
        }
        if !(self.misregistration_px >= 0.0) || !(self.smoothness > 0.0) || !(self.blur_sigma > 0.0) {
            return Err(bad("misregistration_px, smoothness and blur_sigma must be valid"));
        }
        Ok(())
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            endmembers: self.endmembers,
            bands: self.bands,
            ref_channels: 3,
            channels: self.channels,
            scales: self.scales,
            blocks_per_scale: self.blocks_per_scale,
            window: self.window,
            omega: self.omega,
            pe_bands: self.pe_bands,
            deform_kernel: self.deform_kernel,
            flow_down: self.flow_down,
            scale_factor: self.scale_factor,
            unmix: self.unmix,
            cfda: self.cfda,
            scaca: self.scaca,
            scmf: self.scmf,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            warmup_steps: self.warmup_steps,
            cosine: self.lr_schedule == "cosine",
            grad_clip: self.grad_clip,
            batch_size: self.batch_size,
            epochs: self.epochs,
            steps_per_epoch: self.steps_per_epoch,
            seed: self.seed,
            scale_factor: self.scale_factor,
        }
    }

    pub fn scene(&self, seed: u64) -> SceneSpec {
        SceneSpec {
            height: self.scene_height,
            width: self.scene_width,
            bands: self.bands,
            scene_rank: self.scene_rank,
            seed,
            smoothness: self.smoothness,
        }
    }
}
