//! Deterministic training loop: L1 loss, AdamW, a JSONL log, a checkpoint
//! after every epoch and resumption from any such checkpoint.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use unmixsr_autodiff::{Graph, Tensor};

use crate::error::{invalid, Error, Result};
use crate::harness::checkpoint::{Checkpoint, TrainState};
use crate::harness::config::RunConfig;
use crate::harness::data::{self, Pair, Provenance};
use crate::harness::optim::AdamW;
use crate::metrics;
use crate::network::{self, ModelConfig};
use crate::nn::ModelParameters;
use crate::spectral_codec;

pub const LOG_FILE: &str = "train_log.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bckp";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

/// Mean absolute error of the model output on one pair, with gradients for
/// every parameter.
pub fn loss_and_grads(
    params: &ModelParameters,
    cfg: &ModelConfig,
    pair: &Pair,
) -> Result<(f64, Vec<(String, Tensor)>)> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let out = network::forward_graph(&mut g, &bound, cfg, &pair.lr, &pair.reference)?;
    let gt = g.constant(pair.hr.to_tensor());
    let loss = g.l1_loss(out.y, gt);
    let value = g.value(loss).data()[0];
    let grads = g.backward(loss);
    let list = bound
        .iter()
        .map(|(name, &v)| (name.clone(), grads.get_or_zeros(v, g.value(v))))
        .collect();
    Ok((value, list))
}

/// Batch-mean loss and gradients; items run in parallel and are reduced in
/// batch order so the result does not depend on scheduling.
pub fn batch_loss_and_grads(
    params: &ModelParameters,
    cfg: &ModelConfig,
    batch: &[&Pair],
) -> Result<(f64, Vec<(String, Tensor)>)> {
    let parts: Vec<(f64, Vec<(String, Tensor)>)> =
        batch.par_iter().map(|p| loss_and_grads(params, cfg, p)).collect::<Result<_>>()?;
    let n = parts.len() as f64;
    let mut iter = parts.into_iter();
    let (mut loss, mut grads) = iter.next().ok_or_else(|| invalid("empty batch"))?;
    for (l, gs) in iter {
        loss += l;
        for ((_, acc), (_, gi)) in grads.iter_mut().zip(&gs) {
            acc.add_assign(gi);
        }
    }
    if n > 1.0 {
        loss /= n;
        for (_, gi) in grads.iter_mut() {
            *gi = gi.map(|v| v / n);
        }
    }
    Ok((loss, grads))
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
pub fn clip_global_norm(mut grads: Vec<(String, Tensor)>, max_norm: f64) -> Vec<(String, Tensor)> {
    if max_norm <= 0.0 {
        return grads;
    }
    let norm = grads.iter().flat_map(|(_, g)| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            *g = g.map(|v| v * s);
        }
    }
    grads
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogRecord {
    Start { step: u64, epoch: usize, parameters: usize, resumed: bool },
    Step { epoch: usize, step: u64, loss: f64 },
    Epoch { epoch: usize, step: u64, mean_loss: f64, heldout_psnr: Option<f64>, bicubic_psnr: Option<f64> },
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub out_dir: PathBuf,
    pub resume: Option<PathBuf>,
    /// Stop after this many completed epochs (simulates an interruption).
    pub stop_after_epochs: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// `(global step, loss)` for every step run by this invocation.
    pub losses: Vec<(u64, f64)>,
    pub checkpoint: Checkpoint,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
}

struct Log {
    w: BufWriter<File>,
}

impl Log {
    fn open(path: &Path, append: bool) -> Result<Self> {
        let f = OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(path)?;
        Ok(Self { w: BufWriter::new(f) })
    }

    fn record(&mut self, r: &LogRecord) -> Result<()> {
        serde_json::to_writer(&mut self.w, r).map_err(|e| Error::Io(e.into()))?;
        self.w.write_all(b"\n")?;
        Ok(())
    }
}

/// Mean PSNR of the model and of bicubic upsampling over `pairs`.
pub fn heldout_psnr(params: &ModelParameters, cfg: &ModelConfig, pairs: &[Pair]) -> Result<(f64, f64)> {
    let rows: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|p| {
            let y = network::forward(&p.lr, &p.reference, params, cfg)?.raster().clamped(0.0, 1.0);
            let up = spectral_codec::upsample(&p.lr, cfg.scale_factor)?.raster().clamped(0.0, 1.0);
            Ok((metrics::psnr(&y, &p.hr, 1.0)?.0, metrics::psnr(&up, &p.hr, 1.0)?.0))
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    Ok((rows.iter().map(|r| r.0).sum::<f64>() / n, rows.iter().map(|r| r.1).sum::<f64>() / n))
}

fn dump_diagnostics(dir: &Path, step: u64, epoch: usize, loss: f64, params: &ModelParameters, grads: &[(String, Tensor)]) {
    let norms = |it: &mut dyn Iterator<Item = (&String, &Tensor)>| -> serde_json::Map<String, serde_json::Value> {
        it.map(|(n, t)| {
            let s = t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            (n.clone(), serde_json::json!(if s.is_finite() { s.to_string() } else { "non-finite".into() }))
        })
        .collect()
    };
    let report = serde_json::json!({
        "step": step,
        "epoch": epoch,
        "loss": loss.to_string(),
        "param_norms": norms(&mut params.iter()),
        "grad_norms": norms(&mut grads.iter().map(|(n, t)| (n, t))),
    });
    let _ = std::fs::write(dir.join(DIAGNOSTICS_FILE), serde_json::to_vec_pretty(&report).unwrap_or_default());
}

pub fn train(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainReport> {
    cfg.validate()?;
    let model_cfg = cfg.model();
    let tcfg = cfg.train();
    std::fs::create_dir_all(&opts.out_dir)?;
    let log_path = opts.out_dir.join(LOG_FILE);
    let ckpt_path = opts.out_dir.join(CHECKPOINT_FILE);

    let (mut params, mut opt, mut state) = match &opts.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.config != model_cfg {
                return Err(invalid("checkpoint model config differs from the run config"));
            }
            let mut opt = ck.optimizer.ok_or_else(|| invalid("checkpoint has no optimizer state"))?;
            opt.weight_decay = tcfg.weight_decay;
            (ck.params, opt, ck.state)
        }
        None => {
            let p = network::build(&model_cfg, tcfg.seed)?;
            let opt = AdamW::new(&tcfg, &p);
            (p, opt, TrainState::default())
        }
    };

    let train_pairs = data::make_pairs(cfg, &data::train_seeds(cfg))?;
    let test_pairs = data::make_pairs(cfg, &data::test_seeds(cfg))?;
    let provenance = serde_json::to_value(Provenance::of(cfg)).expect("provenance serializes");

    let mut log = Log::open(&log_path, opts.resume.is_some())?;
    log.record(&LogRecord::Start {
        step: state.step,
        epoch: state.epochs_done,
        parameters: params.num_params(),
        resumed: opts.resume.is_some(),
    })?;

    let mut losses = Vec::new();
    let n = train_pairs.len() as u64;
    let bs = tcfg.batch_size as u64;
    let last_epoch = opts.stop_after_epochs.map_or(tcfg.epochs, |e| e.min(tcfg.epochs));
    while state.epochs_done < last_epoch {
        let epoch = state.epochs_done;
        let mut epoch_loss = 0.0;
        for _ in 0..tcfg.steps_per_epoch {
            let batch: Vec<&Pair> =
                (0..bs).map(|i| &train_pairs[((state.step * bs + i) % n) as usize]).collect();
            let (loss, grads) = batch_loss_and_grads(&params, &model_cfg, &batch)?;
            if !loss.is_finite() || grads.iter().any(|(_, g)| !g.is_finite()) {
                log.record(&LogRecord::Step { epoch, step: state.step, loss: f64::NAN })?;
                log.w.flush()?;
                dump_diagnostics(&opts.out_dir, state.step, epoch, loss, &params, &grads);
                return Err(Error::Numerical(format!(
                    "non-finite loss or gradient at step {}; diagnostics in {}",
                    state.step,
                    opts.out_dir.join(DIAGNOSTICS_FILE).display()
                )));
            }
            let grads = clip_global_norm(grads, tcfg.grad_clip);
            opt.lr = tcfg.lr_at(state.step);
            opt.update(&mut params, &grads)?;
            log.record(&LogRecord::Step { epoch, step: state.step, loss })?;
            losses.push((state.step, loss));
            epoch_loss += loss;
            state.step += 1;
        }
        state.epochs_done += 1;
        let (heldout, bicubic) = if test_pairs.is_empty() {
            (None, None)
        } else {
            let (m, b) = heldout_psnr(&params, &model_cfg, &test_pairs)?;
            (Some(m), Some(b))
        };
        log.record(&LogRecord::Epoch {
            epoch,
            step: state.step,
            mean_loss: epoch_loss / tcfg.steps_per_epoch as f64,
            heldout_psnr: heldout,
            bicubic_psnr: bicubic,
        })?;
        log.w.flush()?;
        Checkpoint {
            config: model_cfg.clone(),
            params: params.clone(),
            state: state.clone(),
            provenance: provenance.clone(),
            optimizer: Some(opt.clone()),
        }
        .save(&ckpt_path)?;
    }
    log.w.flush()?;
    let checkpoint = Checkpoint { config: model_cfg, params, state, provenance, optimizer: Some(opt) };
    if losses.is_empty() {
        checkpoint.save(&ckpt_path)?;
    }
    Ok(TrainReport { losses, checkpoint, checkpoint_path: ckpt_path, log_path })
}
