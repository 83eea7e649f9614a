//! Per-scene and mean PSNR/SSIM/SAM for a checkpoint and the bicubic baseline.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::data::Pair;
use crate::metrics::{self, Db, MetricReport};
use crate::network;
use crate::raster::Raster;
use crate::spectral_codec;

pub const RESULTS_JSON: &str = "results.json";
pub const RESULTS_TABLE: &str = "results.txt";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub scene: String,
    pub method: String,
    #[serde(flatten)]
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub means: Vec<EvalRow>,
}

fn mean_row(method: &str, rows: &[&EvalRow]) -> EvalRow {
    let n = rows.len() as f64;
    let avg = |f: &dyn Fn(&MetricReport) -> f64| rows.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
    EvalRow {
        scene: "mean".into(),
        method: method.into(),
        metrics: MetricReport { psnr: Db(avg(&|m| m.psnr.0)), ssim: avg(&|m| m.ssim), sam: avg(&|m| m.sam) },
    }
}

impl EvalReport {
    /// Builds a report from `(scene, method, prediction, truth)` tuples;
    /// means are taken per method in first-appearance order.
    pub fn from_predictions(items: &[(String, String, Raster, Raster)]) -> Result<Self> {
        let rows: Vec<EvalRow> = items
            .par_iter()
            .map(|(scene, method, pred, truth)| {
                Ok(EvalRow { scene: scene.clone(), method: method.clone(), metrics: metrics::report(pred, truth)? })
            })
            .collect::<Result<_>>()?;
        let mut methods: Vec<&str> = Vec::new();
        for r in &rows {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
        }
        let means = methods
            .iter()
            .map(|m| mean_row(m, &rows.iter().filter(|r| r.method == *m).collect::<Vec<_>>()))
            .collect();
        Ok(Self { rows, means })
    }

    pub fn mean(&self, method: &str) -> Option<&MetricReport> {
        self.means.iter().find(|r| r.method == method).map(|r| &r.metrics)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:<10} {:>10} {:>8} {:>8}", "scene", "method", "PSNR", "SSIM", "SAM");
        for r in self.rows.iter().chain(&self.means) {
            let _ = writeln!(
                s,
                "{:<12} {:<10} {:>10} {:>8.4} {:>8.4}",
                r.scene, r.method, r.metrics.psnr.to_string(), r.metrics.ssim, r.metrics.sam
            );
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(RESULTS_JSON), self.to_json())?;
        std::fs::write(dir.join(RESULTS_TABLE), self.to_table())?;
        Ok(())
    }
}

/// Rows for the model and for bicubic upsampling on every pair; predictions
/// are clamped to `[0, 1]` as at export.
pub fn evaluate(ck: &Checkpoint, pairs: &[Pair]) -> Result<EvalReport> {
    let cfg = &ck.config;
    let mut items = Vec::with_capacity(2 * pairs.len());
    for p in pairs {
        if p.lr.bands() != cfg.bands || p.hr.height() != p.lr.height() * cfg.scale_factor {
            return Err(invalid(format!(
                "scene {} ({} bands, ×{}) is incompatible with the checkpoint ({} bands, ×{})",
                p.seed,
                p.lr.bands(),
                p.hr.height() / p.lr.height().max(1),
                cfg.bands,
                cfg.scale_factor
            )));
        }
    }
    let preds: Vec<(Raster, Raster)> = pairs
        .par_iter()
        .map(|p| {
            let y = network::forward(&p.lr, &p.reference, &ck.params, cfg)?.raster().clamped(0.0, 1.0);
            let up = spectral_codec::upsample(&p.lr, cfg.scale_factor)?.raster().clamped(0.0, 1.0);
            Ok((y, up))
        })
        .collect::<Result<_>>()?;
    for (p, (y, up)) in pairs.iter().zip(preds) {
        let scene = format!("scene{}", p.seed);
        items.push((scene.clone(), "model".to_string(), y, p.hr.raster().clone()));
        items.push((scene, "bicubic".to_string(), up, p.hr.raster().clone()));
    }
    EvalReport::from_predictions(&items)
}
