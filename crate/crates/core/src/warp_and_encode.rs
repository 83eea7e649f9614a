//! Flow-driven bilinear warping and sine/cosine encoding of sub-pixel flow.

use unmixsr_autodiff::{Graph, Tensor, Var};

use crate::error::{invalid, Result};
use crate::raster::Raster;

/// H×W×2 displacement, channel 0 = dx (columns), channel 1 = dy (rows).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField(Raster);

impl FlowField {
    pub fn new(r: Raster) -> Result<Self> {
        if r.channels() != 2 {
            return Err(invalid(format!("flow needs 2 channels, got {}", r.channels())));
        }
        Ok(Self(r))
    }

    pub fn uniform(height: usize, width: usize, dx: f64, dy: f64) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| [dx, dy]).collect();
        Self::new(Raster::new(height, width, 2, data)?)
    }

    pub fn raster(&self) -> &Raster {
        &self.0
    }

    pub fn into_raster(self) -> Raster {
        self.0
    }
}

/// H×W×1 confidence map with values strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMap(Raster);

impl SimilarityMap {
    pub fn new(r: Raster) -> Result<Self> {
        if r.channels() != 1 {
            return Err(invalid("similarity map must have one channel"));
        }
        if r.data().iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(invalid("similarity values must lie in (0, 1)"));
        }
        Ok(Self(r))
    }

    pub fn raster(&self) -> &Raster {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncoding {
    pub data: Raster,
    pub omega: f64,
    pub n_bands: usize,
}

/// Output pixel `p` takes the bilinear sample of `f` at `p + flow(p)`,
/// with replicated borders.
pub fn bilinear_warp(f: &Raster, flow: &FlowField) -> Result<Raster> {
    let fl = flow.raster();
    if fl.height() != f.height() || fl.width() != f.width() {
        return Err(invalid(format!(
            "flow {}x{} does not match feature {}x{}",
            fl.height(),
            fl.width(),
            f.height(),
            f.width()
        )));
    }
    let out = warp_forward(&f.to_tensor(), &fl.to_tensor());
    Raster::from_tensor(&out)
}

/// Component-wise `x - floor(x)`, in `[0, 1)`.
pub fn fractional_flow(flow: &FlowField) -> FlowField {
    let data = flow.raster().data().iter().map(|v| v - v.floor()).collect();
    let r = flow.raster();
    FlowField(Raster::new(r.height(), r.width(), 2, data).expect("shape preserved"))
}

/// Channels `[sin(γ), cos(γ)]` with `γ = [ω¹dx, ω¹dy, ω²dx, ω²dy, …, ωᴺdy]`.
pub fn positional_encode(d_f: &FlowField, omega: f64, n: usize) -> Result<PositionalEncoding> {
    if n == 0 {
        return Err(invalid("positional encoding needs at least one frequency"));
    }
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(invalid("omega must be positive"));
    }
    let r = d_f.raster();
    let freqs: Vec<f64> = (1..=n).map(|i| omega.powi(i as i32)).collect();
    let mut data = Vec::with_capacity(r.pixels() * 4 * n);
    for p in r.data().chunks(2) {
        let gamma: Vec<f64> = freqs.iter().flat_map(|w| [w * p[0], w * p[1]]).collect();
        data.extend(gamma.iter().map(|g| g.sin()));
        data.extend(gamma.iter().map(|g| g.cos()));
    }
    Ok(PositionalEncoding { data: Raster::new(r.height(), r.width(), 4 * n, data)?, omega, n_bands: n })
}

/// Differentiable counterpart of [`positional_encode`] applied to the
/// fractional part of `flow`.
pub fn positional_encode_var(g: &mut Graph, flow: Var, omega: f64, n: usize) -> Var {
    let d_f = g.frac(flow);
    let gamma: Vec<Var> = (1..=n).map(|i| g.scale(d_f, omega.powi(i as i32))).collect();
    let gamma = g.concat_last(&gamma);
    let s = g.sin(gamma);
    let c = g.cos(gamma);
    g.concat_last(&[s, c])
}

/// Bilinear corner indices and weights for one sample point, borders replicated.
#[derive(Clone, Copy)]
struct Corners {
    i00: usize,
    i01: usize,
    i10: usize,
    i11: usize,
    tx: f64,
    ty: f64,
}

fn corners(h: usize, w: usize, y: f64, x: f64) -> Corners {
    let (fy, fx) = (y.floor(), x.floor());
    let cl = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
    let (y0, y1) = (cl(fy, h), cl(fy + 1.0, h));
    let (x0, x1) = (cl(fx, w), cl(fx + 1.0, w));
    Corners { i00: y0 * w + x0, i01: y0 * w + x1, i10: y1 * w + x0, i11: y1 * w + x1, tx: x - fx, ty: y - fy }
}

fn warp_forward(f: &Tensor, flow: &Tensor) -> Tensor {
    let (h, w, c) = (f.shape()[0], f.shape()[1], f.shape()[2]);
    let (fd, fl) = (f.data(), flow.data());
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let k = corners(h, w, y as f64 + fl[2 * p + 1], x as f64 + fl[2 * p]);
            let (a, b) = (1.0 - k.tx, k.tx);
            let (u, v) = (1.0 - k.ty, k.ty);
            for ch in 0..c {
                out[p * c + ch] = u * (a * fd[k.i00 * c + ch] + b * fd[k.i01 * c + ch])
                    + v * (a * fd[k.i10 * c + ch] + b * fd[k.i11 * c + ch]);
            }
        }
    }
    Tensor::new(&[h, w, c], out)
}

/// Graph op for [`bilinear_warp`], differentiable w.r.t. features and flow.
pub fn warp_var(g: &mut Graph, f: Var, flow: Var) -> Result<Var> {
    let (fs, ls) = (g.shape(f).to_vec(), g.shape(flow).to_vec());
    if fs.len() != 3 || ls.len() != 3 || ls[2] != 2 || fs[..2] != ls[..2] {
        return Err(invalid(format!("warp shape mismatch: features {fs:?}, flow {ls:?}")));
    }
    let value = warp_forward(g.value(f), g.value(flow));
    Ok(g.custom(
        &[f, flow],
        value,
        Box::new(|grad, parents, _| {
            let (fv, fl) = (parents[0], parents[1]);
            let (h, w, c) = (fv.shape()[0], fv.shape()[1], fv.shape()[2]);
            let (fd, fld, gd) = (fv.data(), fl.data(), grad.data());
            let mut gf = vec![0.0; fd.len()];
            let mut gflow = vec![0.0; fld.len()];
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    let k = corners(h, w, y as f64 + fld[2 * p + 1], x as f64 + fld[2 * p]);
                    let (a, b) = (1.0 - k.tx, k.tx);
                    let (u, v) = (1.0 - k.ty, k.ty);
                    let (mut gx, mut gy) = (0.0, 0.0);
                    for ch in 0..c {
                        let go = gd[p * c + ch];
                        let (v00, v01) = (fd[k.i00 * c + ch], fd[k.i01 * c + ch]);
                        let (v10, v11) = (fd[k.i10 * c + ch], fd[k.i11 * c + ch]);
                        gf[k.i00 * c + ch] += go * u * a;
                        gf[k.i01 * c + ch] += go * u * b;
                        gf[k.i10 * c + ch] += go * v * a;
                        gf[k.i11 * c + ch] += go * v * b;
                        gx += go * (u * (v01 - v00) + v * (v11 - v10));
                        gy += go * (a * (v10 - v00) + b * (v11 - v01));
                    }
                    gflow[2 * p] = gx;
                    gflow[2 * p + 1] = gy;
                }
            }
            vec![Some(Tensor::new(fv.shape(), gf)), Some(Tensor::new(fl.shape(), gflow))]
        }),
    ))
}
