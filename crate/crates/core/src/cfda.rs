//! Coarse-to-fine deformable aggregation of an unregistered reference
//! feature onto the abundance feature grid.

use unmixsr_autodiff::{gemm, Graph, Tensor, Var};

use crate::error::{invalid, Result};
use crate::nn::{self, Bound, Init, ParamBuilder};
use crate::raster::Raster;
use crate::warp_and_encode::{positional_encode_var, warp_var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfdaConfig {
    pub channels: usize,
    /// Average-pooling factor of the coarse flow predictor.
    pub down: usize,
    pub omega: f64,
    pub pe_bands: usize,
    /// Deformable kernel size k (odd).
    pub kernel: usize,
}

impl CfdaConfig {
    pub fn taps(&self) -> usize {
        self.kernel * self.kernel
    }
}

/// Per-pixel sampling offsets (`2k²` channels, pairs of dx, dy per tap) and
/// modulation masks (`k²` channels).
#[derive(Debug, Clone, PartialEq)]
pub struct DeformParams {
    pub offsets: Raster,
    pub masks: Raster,
    /// Raw `3k²`-channel residual predicted by the refinement head.
    pub delta: Option<Raster>,
}

/// Handles to every intermediate of one aggregation pass.
#[derive(Debug, Clone, Copy)]
pub struct CfdaOutputs {
    pub aggregated: Var,
    pub coarse_flow: Var,
    pub flow: Var,
    pub similarity: Var,
    pub delta: Var,
    pub offsets: Var,
    pub masks: Var,
}

pub fn init(b: &mut ParamBuilder, name: &str, cfg: &CfdaConfig) -> Result<()> {
    if cfg.kernel % 2 == 0 || cfg.down < 2 || !cfg.down.is_power_of_two() {
        return Err(invalid("deformable kernel must be odd and down a power of two ≥ 2"));
    }
    let c = cfg.channels;
    b.conv(&format!("{name}.coarse"), 3, 2 * c, 2, Init::Zeros)?;
    b.conv(&format!("{name}.refine"), 3, 2 * c, 3, Init::Zeros)?;
    b.conv(&format!("{name}.re1"), 3, 2 * c + 4 * cfg.pe_bands, c, Init::Kaiming)?;
    b.conv(&format!("{name}.re2"), 3, c, 3 * cfg.taps(), Init::Zeros)?;
    b.conv(&format!("{name}.dcn"), cfg.kernel, c, c, Init::Kaiming)
}

fn same_shape(g: &Graph, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) || g.shape(a).len() != 3 {
        return Err(invalid(format!(
            "feature shapes differ: {:?} vs {:?}",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

/// Predicts a 2-channel flow at `1/down` resolution from pooled features and
/// resizes it bilinearly to full resolution.
pub fn coarse_flow(g: &mut Graph, p: &Bound, name: &str, f: Var, f_ref: Var, down: usize) -> Result<Var> {
    same_shape(g, f, f_ref)?;
    let (h, w) = (g.shape(f)[0], g.shape(f)[1]);
    let fd = g.avg_pool(f, down);
    let rd = g.avg_pool(f_ref, down);
    let cat = g.concat_last(&[fd, rd]);
    let low = nn::conv(g, p, &format!("{name}.coarse"), cat, 1);
    Ok(g.resize_bilinear(low, h, w))
}

/// Warps the reference by the coarse flow and predicts a residual flow and
/// similarity logits; returns `(F_flow, F_sim)`.
pub fn refine_flow_similarity(
    g: &mut Graph,
    p: &Bound,
    name: &str,
    f: Var,
    f_ref: Var,
    c_flow: Var,
) -> Result<(Var, Var)> {
    same_shape(g, f, f_ref)?;
    let warped = warp_var(g, f_ref, c_flow)?;
    let cat = g.concat_last(&[f, warped]);
    let out = nn::conv(g, p, &format!("{name}.refine"), cat, 1);
    let delta = g.slice_last(out, 0, 2);
    let logit = g.slice_last(out, 2, 1);
    let flow = g.add(c_flow, delta);
    let sim = g.sigmoid(logit);
    Ok((flow, sim))
}

/// Returns `(ΔP, O, M)` with `O = F_flow (per tap) + tanh(ΔP_o)` and
/// `M = sigmoid(F_sim ⊙ ΔP_m)`.
#[allow(clippy::too_many_arguments)]
pub fn subpixel_refine(
    g: &mut Graph,
    p: &Bound,
    name: &str,
    cfg: &CfdaConfig,
    f: Var,
    f_ref: Var,
    flow: Var,
    sim: Var,
) -> Result<(Var, Var, Var)> {
    same_shape(g, f, f_ref)?;
    let taps = cfg.taps();
    let pe = positional_encode_var(g, flow, cfg.omega, cfg.pe_bands);
    let warped = warp_var(g, f_ref, flow)?;
    let cat = g.concat_last(&[f, warped, pe]);
    let h = nn::conv(g, p, &format!("{name}.re1"), cat, 1);
    let h = nn::lrelu(g, h);
    let delta = nn::conv(g, p, &format!("{name}.re2"), h, 1);
    let dpo = g.slice_last(delta, 0, 2 * taps);
    let dpm = g.slice_last(delta, 2 * taps, taps);
    let tiled = g.concat_last(&vec![flow; taps]);
    let bounded = g.tanh(dpo);
    let offsets = g.add(tiled, bounded);
    let gated = g.mul(sim, dpm);
    let masks = g.sigmoid(gated);
    Ok((delta, offsets, masks))
}

struct DeformGeom {
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    k: usize,
}

impl DeformGeom {
    fn taps(&self) -> usize {
        self.k * self.k
    }

    /// Sample point of tap `j` at pixel `(y, x)`.
    fn point(&self, off: &[f64], y: usize, x: usize, j: usize) -> (f64, f64) {
        let half = (self.k / 2) as f64;
        let (ky, kx) = ((j / self.k) as f64, (j % self.k) as f64);
        let o = (y * self.w + x) * 2 * self.taps() + 2 * j;
        (y as f64 + ky - half + off[o + 1], x as f64 + kx - half + off[o])
    }
}

/// Zero-padded bilinear footprint: up to four `(pixel, weight, dwy, dwx)`.
fn footprint(h: usize, w: usize, sy: f64, sx: f64) -> [(Option<usize>, f64, f64, f64); 4] {
    let (fy, fx) = (sy.floor(), sx.floor());
    let (ty, tx) = (sy - fy, sx - fx);
    let at = |yy: f64, xx: f64| {
        if yy >= 0.0 && xx >= 0.0 && (yy as usize) < h && (xx as usize) < w {
            Some(yy as usize * w + xx as usize)
        } else {
            None
        }
    };
    [
        (at(fy, fx), (1.0 - ty) * (1.0 - tx), -(1.0 - tx), -(1.0 - ty)),
        (at(fy, fx + 1.0), (1.0 - ty) * tx, -tx, 1.0 - ty),
        (at(fy + 1.0, fx), ty * (1.0 - tx), 1.0 - tx, -ty),
        (at(fy + 1.0, fx + 1.0), ty * tx, tx, ty),
    ]
}

/// Unmodulated samples `[HW, k², Cin]`.
fn sample_columns(geom: &DeformGeom, f: &[f64], off: &[f64]) -> Vec<f64> {
    let (taps, cin) = (geom.taps(), geom.cin);
    let mut cols = vec![0.0; geom.h * geom.w * taps * cin];
    for y in 0..geom.h {
        for x in 0..geom.w {
            for j in 0..taps {
                let (sy, sx) = geom.point(off, y, x, j);
                let base = ((y * geom.w + x) * taps + j) * cin;
                for (idx, wt, _, _) in footprint(geom.h, geom.w, sy, sx) {
                    if let (Some(i), true) = (idx, wt != 0.0) {
                        for c in 0..cin {
                            cols[base + c] += wt * f[i * cin + c];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn modulate(geom: &DeformGeom, cols: &[f64], masks: &[f64]) -> Vec<f64> {
    let cin = geom.cin;
    cols.iter().enumerate().map(|(i, v)| v * masks[i / cin]).collect()
}

fn deform_forward(geom: &DeformGeom, f: &[f64], off: &[f64], masks: &[f64], w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let hw = geom.h * geom.w;
    let kk = geom.taps() * geom.cin;
    let cols = modulate(geom, &sample_columns(geom, f, off), masks);
    let mut out = match b {
        Some(b) => (0..hw).flat_map(|_| b.iter().copied()).collect(),
        None => vec![0.0; hw * geom.cout],
    };
    gemm(hw, kk, geom.cout, &cols, false, w, false, &mut out, 1.0);
    out
}

fn check_deform(fs: &[usize], os: &[usize], ms: &[usize], ws: &[usize]) -> Result<DeformGeom> {
    if fs.len() != 3 || ws.len() != 4 || ws[0] != ws[1] {
        return Err(invalid(format!("bad deform conv shapes: input {fs:?}, weight {ws:?}")));
    }
    let (h, w, cin) = (fs[0], fs[1], fs[2]);
    let k = ws[0];
    if ws[2] != cin {
        return Err(invalid(format!("weight expects {} input channels, feature has {cin}", ws[2])));
    }
    if os != [h, w, 2 * k * k] || ms != [h, w, k * k] {
        return Err(invalid(format!(
            "offsets {os:?} / masks {ms:?} do not match {h}x{w} with {} taps",
            k * k
        )));
    }
    Ok(DeformGeom { h, w, cin, cout: ws[3], k })
}

/// `out(p) = b + Σ_j w_j · M_j(p) · f_ref(p + g_j + O_j(p))`, bilinear with
/// zero padding outside the image.
pub fn modulated_deform_conv(
    f_ref: &Raster,
    params: &DeformParams,
    weight: &Tensor,
    bias: Option<&Tensor>,
) -> Result<Raster> {
    let geom = check_deform(&f_ref.shape(), &params.offsets.shape(), &params.masks.shape(), weight.shape())?;
    let out = deform_forward(
        &geom,
        f_ref.data(),
        params.offsets.data(),
        params.masks.data(),
        weight.data(),
        bias.map(Tensor::data),
    );
    Raster::new(geom.h, geom.w, geom.cout, out)
}

/// Graph op for [`modulated_deform_conv`], differentiable w.r.t. the
/// feature, offsets, masks, weight and bias.
pub fn modulated_deform_conv_var(
    g: &mut Graph,
    f_ref: Var,
    offsets: Var,
    masks: Var,
    weight: Var,
    bias: Option<Var>,
) -> Result<Var> {
    let geom = check_deform(g.shape(f_ref), g.shape(offsets), g.shape(masks), g.shape(weight))?;
    let value = deform_forward(
        &geom,
        g.value(f_ref).data(),
        g.value(offsets).data(),
        g.value(masks).data(),
        g.value(weight).data(),
        bias.map(|b| g.value(b).data()),
    );
    g.add_macs((geom.h * geom.w * geom.taps() * geom.cin * geom.cout) as u64);
    let mut parents = vec![f_ref, offsets, masks, weight];
    parents.extend(bias);
    let has_bias = bias.is_some();
    Ok(g.custom(
        &parents,
        Tensor::new(&[geom.h, geom.w, geom.cout], value),
        Box::new(move |grad, ps, _| {
            let geom = DeformGeom {
                h: ps[0].shape()[0],
                w: ps[0].shape()[1],
                cin: ps[0].shape()[2],
                cout: ps[3].shape()[3],
                k: ps[3].shape()[0],
            };
            let (f, off, m, w) = (ps[0].data(), ps[1].data(), ps[2].data(), ps[3].data());
            let (hw, taps, cin, cout) = (geom.h * geom.w, geom.taps(), geom.cin, geom.cout);
            let kk = taps * cin;
            let raw = sample_columns(&geom, f, off);
            let cols = modulate(&geom, &raw, m);
            let gd = grad.data();

            let mut gw = vec![0.0; kk * cout];
            gemm(kk, hw, cout, &cols, true, gd, false, &mut gw, 0.0);
            let mut gcol = vec![0.0; hw * kk];
            gemm(hw, cout, kk, gd, false, w, true, &mut gcol, 0.0);

            let mut gf = vec![0.0; f.len()];
            let mut goff = vec![0.0; off.len()];
            let mut gm = vec![0.0; m.len()];
            for y in 0..geom.h {
                for x in 0..geom.w {
                    let p = y * geom.w + x;
                    for j in 0..taps {
                        let base = (p * taps + j) * cin;
                        let mask = m[p * taps + j];
                        let gc = &gcol[base..base + cin];
                        gm[p * taps + j] = gc.iter().zip(&raw[base..base + cin]).map(|(a, b)| a * b).sum();
                        let (sy, sx) = geom.point(off, y, x, j);
                        let (mut gy, mut gx) = (0.0, 0.0);
                        for (idx, wt, dwy, dwx) in footprint(geom.h, geom.w, sy, sx) {
                            let Some(i) = idx else { continue };
                            let mut dot = 0.0;
                            for c in 0..cin {
                                gf[i * cin + c] += gc[c] * mask * wt;
                                dot += gc[c] * f[i * cin + c];
                            }
                            gy += mask * dot * dwy;
                            gx += mask * dot * dwx;
                        }
                        let o = p * 2 * taps + 2 * j;
                        goff[o] = gx;
                        goff[o + 1] = gy;
                    }
                }
            }
            let mut out = vec![
                Some(Tensor::new(ps[0].shape(), gf)),
                Some(Tensor::new(ps[1].shape(), goff)),
                Some(Tensor::new(ps[2].shape(), gm)),
                Some(Tensor::new(ps[3].shape(), gw)),
            ];
            if has_bias {
                let mut gb = vec![0.0; cout];
                for row in gd.chunks(cout) {
                    for (a, b) in gb.iter_mut().zip(row) {
                        *a += b;
                    }
                }
                out.push(Some(Tensor::new(&[cout], gb)));
            }
            out
        }),
    ))
}

/// Full aggregation: coarse flow, refinement, sub-pixel offsets and masks,
/// then modulated deformable convolution of the reference feature.
pub fn forward(g: &mut Graph, p: &Bound, name: &str, cfg: &CfdaConfig, f: Var, f_ref: Var) -> Result<CfdaOutputs> {
    let coarse = coarse_flow(g, p, name, f, f_ref, cfg.down)?;
    let (flow, sim) = refine_flow_similarity(g, p, name, f, f_ref, coarse)?;
    let (delta, offsets, masks) = subpixel_refine(g, p, name, cfg, f, f_ref, flow, sim)?;
    let w = p.var(&format!("{name}.dcn.w"));
    let b = p.var(&format!("{name}.dcn.b"));
    let aggregated = modulated_deform_conv_var(g, f_ref, offsets, masks, w, Some(b))?;
    Ok(CfdaOutputs { aggregated, coarse_flow: coarse, flow, similarity: sim, delta, offsets, masks })
}
