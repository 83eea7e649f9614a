//! `BCKP` checkpoint: magic, format version and header length (u32 LE), a
//! JSON header with the model config, training state, provenance and tensor
//! index, then every tensor as f64 LE. Optimizer moments follow the
//! parameters when present.

use std::path::Path;

use serde::{Deserialize, Serialize};
use unmixsr_autodiff::Tensor;

use crate::error::{Error, Result};
use crate::harness::optim::AdamW;
use crate::network::ModelConfig;
use crate::nn::ModelParameters;

pub const MAGIC: &[u8; 4] = b"BCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainState {
    pub epochs_done: usize,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParameters,
    pub state: TrainState,
    pub provenance: serde_json::Value,
    pub optimizer: Option<AdamW>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    state: TrainState,
    provenance: serde_json::Value,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerHeader>,
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, message: message.into() }
}

fn push_tensors(out: &mut Vec<u8>, p: &ModelParameters) {
    for (_, t) in p.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            state: self.state.clone(),
            provenance: self.provenance.clone(),
            tensors: self.params.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                lr: o.lr,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
                weight_decay: o.weight_decay,
                step: o.step,
            }),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        push_tensors(&mut out, &self.params);
        if let Some(o) = &self.optimizer {
            push_tensors(&mut out, &o.m);
            push_tensors(&mut out, &o.v);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(format_err(bytes.len(), format!("header needs 12 bytes, found {}", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(format_err(0, "bad magic, expected \"BCKP\""));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(format_err(4, format!("unsupported checkpoint version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = 12 + hlen;
        if bytes.len() < body {
            return Err(format_err(12, format!("header expected {hlen} bytes, found {}", bytes.len() - 12)));
        }
        let header: Header =
            serde_json::from_slice(&bytes[12..body]).map_err(|e| format_err(12, format!("bad header: {e}")))?;
        let count: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        let sets = if header.optimizer.is_some() { 3 } else { 1 };
        let expected = count * 8 * sets;
        let actual = bytes.len() - body;
        if actual != expected {
            return Err(format_err(
                body + actual.min(expected),
                format!("payload expected {expected} bytes, found {actual}"),
            ));
        }
        let mut cursor = body;
        let mut read_set = || -> Result<ModelParameters> {
            let mut p = ModelParameters::new();
            for t in &header.tensors {
                let n: usize = t.shape.iter().product();
                let data = bytes[cursor..cursor + 8 * n]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                p.insert(t.name.clone(), Tensor::new(&t.shape, data))
                    .map_err(|e| format_err(cursor, e.to_string()))?;
                cursor += 8 * n;
            }
            Ok(p)
        };
        let params = read_set()?;
        let optimizer = match &header.optimizer {
            Some(o) => {
                let m = read_set()?;
                let v = read_set()?;
                Some(AdamW {
                    lr: o.lr,
                    beta1: o.beta1,
                    beta2: o.beta2,
                    eps: o.eps,
                    weight_decay: o.weight_decay,
                    step: o.step,
                    m,
                    v,
                })
            }
            None => None,
        };
        header.config.validate()?;
        Ok(Self { config: header.config, params, state: header.state, provenance: header.provenance, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // Write-then-rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.encode())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}
