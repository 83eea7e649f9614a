//! Seeded training and test pairs: HR cube, blurred and decimated LR cube,
//! and a misregistered RGB reference.

use serde::Serialize;

use crate::error::Result;
use crate::harness::config::RunConfig;
use crate::raster::{HsiCube, RgbImage};
use crate::scene_sim::{
    blur_downsample, misregister, project_to_rgb, synth_scene, MisregistrationSpec, SpectralResponse,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub seed: u64,
    pub hr: HsiCube,
    pub lr: HsiCube,
    pub reference: RgbImage,
}

/// Degradation settings recorded alongside checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub blur_kernel: usize,
    pub blur_sigma: f64,
    pub scale_factor: usize,
    pub misregistration_px: f64,
    pub data_seed: u64,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub scene_height: usize,
    pub scene_width: usize,
    pub bands: usize,
    pub scene_rank: usize,
    pub smoothness: f64,
    pub spectral_response: &'static str,
}

impl Provenance {
    pub fn of(cfg: &RunConfig) -> Self {
        Self {
            blur_kernel: cfg.blur_kernel,
            blur_sigma: cfg.blur_sigma,
            scale_factor: cfg.scale_factor,
            misregistration_px: cfg.misregistration_px,
            data_seed: cfg.data_seed,
            train_scenes: cfg.train_scenes,
            test_scenes: cfg.test_scenes,
            scene_height: cfg.scene_height,
            scene_width: cfg.scene_width,
            bands: cfg.bands,
            scene_rank: cfg.scene_rank,
            smoothness: cfg.smoothness,
            spectral_response: "default_rgb",
        }
    }
}

pub fn make_pair(cfg: &RunConfig, seed: u64) -> Result<Pair> {
    let hr = synth_scene(&cfg.scene(seed))?;
    let lr = blur_downsample(&hr, cfg.blur_kernel, cfg.blur_sigma, cfg.scale_factor)?;
    let rgb = project_to_rgb(&hr, &SpectralResponse::default_rgb(cfg.bands))?;
    let mis = MisregistrationSpec::at_level(cfg.misregistration_px, seed, hr.width(), hr.height());
    let reference = misregister(&rgb, &mis)?;
    Ok(Pair { seed, hr, lr, reference })
}

pub fn train_seeds(cfg: &RunConfig) -> Vec<u64> {
    (0..cfg.train_scenes as u64).map(|i| cfg.data_seed + i).collect()
}

/// Held-out seeds never overlap the training range.
pub fn test_seeds(cfg: &RunConfig) -> Vec<u64> {
    let base = cfg.data_seed + 1_000_000;
    (0..cfg.test_scenes as u64).map(|i| base + i).collect()
}

pub fn make_pairs(cfg: &RunConfig, seeds: &[u64]) -> Result<Vec<Pair>> {
    use rayon::prelude::*;
    seeds.par_iter().map(|&s| make_pair(cfg, s)).collect()
}
