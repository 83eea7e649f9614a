//! The end-to-end model: unmix the upsampled cube, extract abundance and
//! reference features, align the reference, refine through a multi-scale
//! encoder-decoder, and mix the predicted residual abundance back to bands.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use unmixsr_autodiff::{Graph, Tensor, Var};

use crate::cfda::{self, CfdaConfig};
use crate::error::{invalid, Result};
use crate::nn::{self, Bound, Init, ModelParameters, ParamBuilder};
use crate::raster::{HsiCube, RgbImage};
use crate::scaca;
use crate::scmf;
use crate::spectral_codec::{self, AbundanceMap, EndmemberMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Endmember rank K.
    pub endmembers: usize,
    /// Spectral bands B of the cubes the model is built for.
    pub bands: usize,
    pub ref_channels: usize,
    /// Base channel width C.
    pub channels: usize,
    pub scales: usize,
    pub blocks_per_scale: usize,
    /// Attention window M.
    pub window: usize,
    pub omega: f64,
    pub pe_bands: usize,
    pub deform_kernel: usize,
    pub flow_down: usize,
    pub scale_factor: usize,
    pub unmix: bool,
    pub cfda: bool,
    pub scaca: bool,
    pub scmf: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            endmembers: 8,
            bands: 31,
            ref_channels: 3,
            channels: 64,
            scales: 3,
            blocks_per_scale: 2,
            window: 8,
            omega: 2.0,
            pe_bands: 4,
            deform_kernel: 3,
            flow_down: 4,
            scale_factor: 4,
            unmix: true,
            cfda: true,
            scaca: true,
            scmf: true,
        }
    }
}

impl ModelConfig {
    /// Small configuration for tests and desk-scale smoke runs.
    pub fn tiny(bands: usize) -> Self {
        Self { endmembers: 4, bands, channels: 16, window: 4, pe_bands: 2, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("endmembers", self.endmembers),
            ("bands", self.bands),
            ("ref_channels", self.ref_channels),
            ("channels", self.channels),
            ("scales", self.scales),
            ("window", self.window),
            ("pe_bands", self.pe_bands),
            ("deform_kernel", self.deform_kernel),
            ("scale_factor", self.scale_factor),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(invalid(format!("{name} must be positive")));
        }
        if self.unmix && self.endmembers > self.bands {
            return Err(invalid(format!(
                "endmembers {} exceed bands {}",
                self.endmembers, self.bands
            )));
        }
        if self.deform_kernel % 2 == 0 {
            return Err(invalid("deform_kernel must be odd"));
        }
        if self.flow_down < 2 || !self.flow_down.is_power_of_two() {
            return Err(invalid("flow_down must be a power of two ≥ 2"));
        }
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            return Err(invalid("omega must be positive"));
        }
        Ok(())
    }

    /// Channel count of the abundance the network refines.
    pub fn rank(&self) -> usize {
        if self.unmix {
            self.endmembers
        } else {
            self.bands
        }
    }

    pub fn width(&self, scale: usize) -> usize {
        self.channels << scale
    }

    pub fn cfda_config(&self) -> CfdaConfig {
        CfdaConfig {
            channels: self.channels,
            down: self.flow_down,
            omega: self.omega,
            pe_bands: self.pe_bands,
            kernel: self.deform_kernel,
        }
    }
}

/// Deterministic initialization. Flow, refinement, offset, gate and output
/// heads start at zero so the untrained model reproduces the upsampled cube.
pub fn build(config: &ModelConfig, seed: u64) -> Result<ModelParameters> {
    config.validate()?;
    let mut b = ParamBuilder::new(seed);
    init_all(&mut b, config)?;
    Ok(b.finish())
}

/// Like [`build`] but every zero-initialized tensor is drawn in `±scale`.
pub fn build_randomized(config: &ModelConfig, seed: u64, scale: f64) -> Result<ModelParameters> {
    config.validate()?;
    let mut b = ParamBuilder::randomized(seed, scale);
    init_all(&mut b, config)?;
    Ok(b.finish())
}

fn init_all(b: &mut ParamBuilder, cfg: &ModelConfig) -> Result<()> {
    let c = cfg.channels;
    nn::init_stem(b, "stem.a", cfg.rank(), c)?;
    nn::init_stem(b, "stem.r", cfg.ref_channels, c)?;
    if cfg.cfda {
        cfda::init(b, "cfda", &cfg.cfda_config())?;
    } else {
        b.linear("align", 2 * c, c, true, Init::Kaiming)?;
    }
    for s in 0..cfg.scales {
        let cs = cfg.width(s);
        if s > 0 {
            b.conv(&format!("enc{s}.down"), 3, cfg.width(s - 1), cs, Init::Kaiming)?;
            b.conv(&format!("enc{s}.rdown"), 3, cfg.width(s - 1), cs, Init::Kaiming)?;
        }
        for i in 0..cfg.blocks_per_scale {
            let name = format!("enc{s}.b{i}");
            if cfg.scaca {
                scaca::init_block(b, &name, cs, cfg.window)?;
            } else {
                b.conv(&format!("{name}.0"), 3, 2 * cs, cs, Init::Kaiming)?;
                b.conv(&format!("{name}.1"), 3, cs, cs, Init::Zeros)?;
            }
        }
    }
    for s in (0..cfg.scales - 1).rev() {
        let cs = cfg.width(s);
        b.conv(&format!("dec{s}.up"), 3, cfg.width(s + 1), cs, Init::Kaiming)?;
        if cfg.scmf {
            scmf::init(b, &format!("dec{s}.scmf"), cs)?;
        }
        nn::init_res_block(b, &format!("dec{s}.res"), cs)?;
    }
    b.conv("head", 3, c, cfg.rank(), Init::Zeros)
}

/// Spectral decomposition feeding the network: `(E, A = EᵀX↑, X↑)`.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub x_up: HsiCube,
    pub endmembers: EndmemberMatrix,
    pub abundance: AbundanceMap,
}

pub fn decompose(x_lr: &HsiCube, cfg: &ModelConfig) -> Result<Decomposition> {
    if x_lr.bands() != cfg.bands {
        return Err(invalid(format!("model expects {} bands, cube has {}", cfg.bands, x_lr.bands())));
    }
    let x_up = spectral_codec::upsample(x_lr, cfg.scale_factor)?;
    let (endmembers, abundance) = if cfg.unmix {
        let (e, a, _) = spectral_codec::svd_unmix(&x_up, cfg.endmembers)?;
        (e, a)
    } else {
        (EndmemberMatrix::identity(cfg.bands), AbundanceMap(x_up.raster().clone()))
    };
    Ok(Decomposition { x_up, endmembers, abundance })
}

#[derive(Debug, Clone)]
pub struct GraphOutputs {
    pub y: Var,
    pub a_hat: Var,
    pub decomposition: Decomposition,
}

fn check_inputs(x_lr: &HsiCube, i_ref: &RgbImage, cfg: &ModelConfig) -> Result<()> {
    let (h, w) = (x_lr.height() * cfg.scale_factor, x_lr.width() * cfg.scale_factor);
    if i_ref.height() != h || i_ref.width() != w {
        return Err(invalid(format!(
            "reference is {}x{}, expected {h}x{w} for scale {}",
            i_ref.height(),
            i_ref.width(),
            cfg.scale_factor
        )));
    }
    if i_ref.channels() != cfg.ref_channels {
        return Err(invalid(format!(
            "reference has {} channels, model expects {}",
            i_ref.channels(),
            cfg.ref_channels
        )));
    }
    let m = 1 << (cfg.scales - 1);
    if h % m != 0 || w % m != 0 {
        return Err(invalid(format!("output size {h}x{w} must be divisible by {m}")));
    }
    Ok(())
}

/// Predicts the residual abundance `Â` from `A` and the reference.
pub fn abundance_residual(g: &mut Graph, p: &Bound, cfg: &ModelConfig, a: Var, r: Var) -> Result<Var> {
    let f0 = nn::stem(g, p, "stem.a", a);
    let r0 = nn::stem(g, p, "stem.r", r);
    let mut refs = if cfg.cfda {
        cfda::forward(g, p, "cfda", &cfg.cfda_config(), f0, r0)?.aggregated
    } else {
        let cat = g.concat_last(&[f0, r0]);
        nn::linear(g, p, "align", cat)
    };
    let mut f = f0;
    let mut skips = Vec::with_capacity(cfg.scales);
    for s in 0..cfg.scales {
        if s > 0 {
            f = nn::conv(g, p, &format!("enc{s}.down"), f, 2);
            refs = nn::conv(g, p, &format!("enc{s}.rdown"), refs, 2);
        }
        for i in 0..cfg.blocks_per_scale {
            let name = format!("enc{s}.b{i}");
            f = if cfg.scaca {
                scaca::scaca_block(g, p, &name, f, refs, cfg.window)?.out
            } else {
                let cat = g.concat_last(&[f, refs]);
                let h = nn::conv(g, p, &format!("{name}.0"), cat, 1);
                let h = nn::lrelu(g, h);
                let h = nn::conv(g, p, &format!("{name}.1"), h, 1);
                g.add(f, h)
            };
        }
        skips.push(f);
    }
    for s in (0..cfg.scales - 1).rev() {
        let up = g.upsample_nearest(f, 2);
        let up = nn::conv(g, p, &format!("dec{s}.up"), up, 1);
        let up = nn::lrelu(g, up);
        let fused = if cfg.scmf {
            scmf::scmf_fuse(g, p, &format!("dec{s}.scmf"), skips[s], up)?.out
        } else {
            g.add(skips[s], up)
        };
        f = nn::res_block(g, p, &format!("dec{s}.res"), fused);
    }
    Ok(nn::conv(g, p, "head", f, 1))
}

/// Builds `Y = E·Â + X↑` on the graph.
pub fn forward_graph(
    g: &mut Graph,
    p: &Bound,
    cfg: &ModelConfig,
    x_lr: &HsiCube,
    i_ref: &RgbImage,
) -> Result<GraphOutputs> {
    check_inputs(x_lr, i_ref, cfg)?;
    let dec = decompose(x_lr, cfg)?;
    let a = g.constant(dec.abundance.raster().to_tensor());
    let r = g.constant(i_ref.to_tensor());
    let a_hat = abundance_residual(g, p, cfg, a, r)?;
    let k = dec.endmembers.rank();
    let et = g.constant(Tensor::new(&[k, cfg.bands], dec.endmembers.transposed()));
    let y_res = g.matmul(a_hat, et);
    let x_up = g.constant(dec.x_up.to_tensor());
    let y = g.add(y_res, x_up);
    Ok(GraphOutputs { y, a_hat, decomposition: dec })
}

/// Inference: `Y = mix(E, Â) + X↑` with `E` taken unchanged from the unmixing.
pub fn forward(x_lr: &HsiCube, i_ref: &RgbImage, params: &ModelParameters, cfg: &ModelConfig) -> Result<HsiCube> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let out = forward_graph(&mut g, &bound, cfg, x_lr, i_ref)?;
    let a_hat = AbundanceMap(crate::raster::Raster::from_tensor(g.value(out.a_hat))?);
    let y_res = spectral_codec::mix(&out.decomposition.endmembers, &a_hat)?;
    spectral_codec::reconstruct(&y_res, &out.decomposition.x_up, false)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub parameters: usize,
    /// Parameters held in 4-D convolution kernels.
    pub conv_parameters: usize,
    pub tensors: usize,
    /// Parameter count per top-level component.
    pub by_component: BTreeMap<String, usize>,
    /// Multiply-accumulates of one forward pass at `probe_size`.
    pub macs: u64,
    pub probe_size: [usize; 2],
}

/// Parameter totals and a MAC tally from a forward pass on a zero input of
/// `lr_size` (low-resolution pixels).
pub fn summarize(cfg: &ModelConfig, lr_size: [usize; 2]) -> Result<ModelSummary> {
    let params = build(cfg, 0)?;
    let mut by_component = BTreeMap::new();
    let mut conv_parameters = 0;
    for (name, t) in params.iter() {
        let top = name.split('.').next().unwrap_or(name).to_string();
        *by_component.entry(top).or_insert(0) += t.numel();
        if t.rank() == 4 {
            conv_parameters += t.numel();
        }
    }
    let (h, w) = (lr_size[0], lr_size[1]);
    let s = cfg.scale_factor;
    let x = HsiCube::new(h, w, cfg.bands, (0..h * w * cfg.bands).map(|i| 0.1 + (i % 7) as f64 * 0.1).collect())?;
    let r = RgbImage::new(h * s, w * s, cfg.ref_channels, vec![0.5; h * s * w * s * cfg.ref_channels])?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    forward_graph(&mut g, &bound, cfg, &x, &r)?;
    Ok(ModelSummary {
        parameters: params.num_params(),
        conv_parameters,
        tensors: params.len(),
        by_component,
        macs: g.macs(),
        probe_size: lr_size,
    })
}
