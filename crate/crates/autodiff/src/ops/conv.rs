//! Channel-last (H×W×C) convolutions, pooling and resampling.

use std::rc::Rc;

use crate::gemm::gemm;
use crate::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(h: usize, w: usize, cin: usize, k: usize, stride: usize, pad: usize) -> Self {
        assert!(stride >= 1 && k >= 1, "bad conv geometry");
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "conv kernel larger than padded input");
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Self { h, w, cin, k, stride, pad, ho, wo }
    }

    fn patch(&self) -> usize {
        self.k * self.k * self.cin
    }

    /// Source row/col for output `o` and tap `t`, `None` when in the zero pad.
    #[inline]
    fn src(&self, o: usize, t: usize, limit: usize) -> Option<usize> {
        let s = (o * self.stride + t) as isize - self.pad as isize;
        (s >= 0 && (s as usize) < limit).then_some(s as usize)
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let patch = g.patch();
    let mut cols = vec![0.0; g.ho * g.wo * patch];
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &mut cols[(oy * g.wo + ox) * patch..(oy * g.wo + ox + 1) * patch];
            for ky in 0..g.k {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for kx in 0..g.k {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let dst = (ky * g.k + kx) * g.cin;
                    let src = (iy * g.w + ix) * g.cin;
                    row[dst..dst + g.cin].copy_from_slice(&x[src..src + g.cin]);
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let patch = g.patch();
    let mut x = vec![0.0; g.h * g.w * g.cin];
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &cols[(oy * g.wo + ox) * patch..(oy * g.wo + ox + 1) * patch];
            for ky in 0..g.k {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for kx in 0..g.k {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let s = (ky * g.k + kx) * g.cin;
                    let d = (iy * g.w + ix) * g.cin;
                    for (dst, v) in x[d..d + g.cin].iter_mut().zip(&row[s..s + g.cin]) {
                        *dst += v;
                    }
                }
            }
        }
    }
    x
}

impl Graph {
    /// Dense 2-D convolution with zero padding.
    ///
    /// `x: [H, W, Cin]`, `w: [k, k, Cin, Cout]`, optional `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 3, "conv2d input must be H×W×C");
        assert!(ws.len() == 4 && ws[0] == ws[1], "conv2d weight must be k×k×Cin×Cout");
        assert_eq!(ws[2], xs[2], "conv2d channel mismatch: input {:?} weight {:?}", xs, ws);
        let (k, cout) = (ws[0], ws[3]);
        if let Some(b) = b {
            assert_eq!(self.value(b).numel(), cout, "conv2d bias size");
        }
        let geom = ConvGeom::new(xs[0], xs[1], xs[2], k, stride, pad);
        let m = geom.ho * geom.wo;
        let patch = geom.patch();
        let cols = im2col(self.value(x).data(), &geom);
        let mut out = vec![0.0; m * cout];
        if let Some(b) = b {
            let bd = self.value(b).data();
            for row in out.chunks_mut(cout) {
                row.copy_from_slice(bd);
            }
        }
        gemm(m, patch, cout, &cols, false, self.value(w).data(), false, &mut out, 1.0);
        self.add_macs((m * patch * cout) as u64);
        let value = Tensor::new(&[geom.ho, geom.wo, cout], out);
        let mut parents = vec![x, w];
        parents.extend(b);
        self.custom(
            &parents,
            value,
            Box::new(move |g, p, _| {
                let (xv, wv) = (p[0], p[1]);
                let gd = g.data();
                let cols = im2col(xv.data(), &geom);
                let mut gw = vec![0.0; patch * cout];
                gemm(patch, m, cout, &cols, true, gd, false, &mut gw, 0.0);
                let mut gcols = vec![0.0; m * patch];
                gemm(m, cout, patch, gd, false, wv.data(), true, &mut gcols, 0.0);
                let gx = col2im(&gcols, &geom);
                let mut res =
                    vec![Some(Tensor::new(xv.shape(), gx)), Some(Tensor::new(wv.shape(), gw))];
                if p.len() == 3 {
                    let mut gb = vec![0.0; cout];
                    for row in gd.chunks(cout) {
                        for (a, v) in gb.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    res.push(Some(Tensor::new(p[2].shape(), gb)));
                }
                res
            }),
        )
    }

    /// Depth-wise k×k convolution, stride 1, zero "same" padding.
    ///
    /// `x: [H, W, C]`, `w: [k, k, C]`, optional `b: [C]`.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert!(ws.len() == 3 && ws[0] == ws[1] && ws[0] % 2 == 1, "dw weight must be k×k×C, k odd");
        assert_eq!(ws[2], xs[2], "dw channel mismatch");
        let (h, wd, c, k) = (xs[0], xs[1], xs[2], ws[0]);
        let pad = k / 2;
        let xdat = self.value(x).data();
        let wdat = self.value(w).data();
        let mut out = vec![0.0; h * wd * c];
        if let Some(b) = b {
            let bd = self.value(b).data();
            for row in out.chunks_mut(c) {
                row.copy_from_slice(bd);
            }
        }
        for y in 0..h {
            for xx in 0..wd {
                let o = (y * wd + xx) * c;
                for ky in 0..k {
                    let iy = y as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = xx as isize + kx as isize - pad as isize;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        let src = ((iy as usize) * wd + ix as usize) * c;
                        let wo = (ky * k + kx) * c;
                        for ch in 0..c {
                            out[o + ch] += wdat[wo + ch] * xdat[src + ch];
                        }
                    }
                }
            }
        }
        self.add_macs((h * wd * c * k * k) as u64);
        let value = Tensor::new(&xs, out);
        let mut parents = vec![x, w];
        parents.extend(b);
        self.custom(
            &parents,
            value,
            Box::new(move |g, p, _| {
                let (xd, wdat, gd) = (p[0].data(), p[1].data(), g.data());
                let mut gx = vec![0.0; xd.len()];
                let mut gw = vec![0.0; wdat.len()];
                for y in 0..h {
                    for xx in 0..wd {
                        let o = (y * wd + xx) * c;
                        for ky in 0..k {
                            let iy = y as isize + ky as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = xx as isize + kx as isize - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                let src = ((iy as usize) * wd + ix as usize) * c;
                                let wo = (ky * k + kx) * c;
                                for ch in 0..c {
                                    gx[src + ch] += gd[o + ch] * wdat[wo + ch];
                                    gw[wo + ch] += gd[o + ch] * xd[src + ch];
                                }
                            }
                        }
                    }
                }
                let mut res =
                    vec![Some(Tensor::new(p[0].shape(), gx)), Some(Tensor::new(p[1].shape(), gw))];
                if p.len() == 3 {
                    let mut gb = vec![0.0; c];
                    for row in gd.chunks(c) {
                        for (a, v) in gb.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    res.push(Some(Tensor::new(p[2].shape(), gb)));
                }
                res
            }),
        )
    }

    /// Average pooling with `factor×factor` windows; a partial window at the
    /// bottom/right edge averages only the pixels it covers.
    pub fn avg_pool(&mut self, x: Var, factor: usize) -> Var {
        assert!(factor >= 1, "pool factor must be positive");
        let xs = self.shape(x).to_vec();
        let (h, w, c) = (xs[0], xs[1], xs[2]);
        let (oh, ow) = (h.div_ceil(factor), w.div_ceil(factor));
        let xd = self.value(x).data();
        let mut out = vec![0.0; oh * ow * c];
        let count = move |o: usize, n: usize| (n - o * factor).min(factor);
        for y in 0..h {
            for xx in 0..w {
                let (oy, ox) = (y / factor, xx / factor);
                let inv = 1.0 / (count(oy, h) * count(ox, w)) as f64;
                for ch in 0..c {
                    out[(oy * ow + ox) * c + ch] += xd[(y * w + xx) * c + ch] * inv;
                }
            }
        }
        let value = Tensor::new(&[oh, ow, c], out);
        self.custom(
            &[x],
            value,
            Box::new(move |g, p, _| {
                let gd = g.data();
                let mut gx = vec![0.0; h * w * c];
                for y in 0..h {
                    for xx in 0..w {
                        let (oy, ox) = (y / factor, xx / factor);
                        let inv = 1.0 / (count(oy, h) * count(ox, w)) as f64;
                        for ch in 0..c {
                            gx[(y * w + xx) * c + ch] = gd[(oy * ow + ox) * c + ch] * inv;
                        }
                    }
                }
                vec![Some(Tensor::new(p[0].shape(), gx))]
            }),
        )
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let (h, w, c) = (xs[0], xs[1], xs[2]);
        let (oh, ow) = (h * factor, w * factor);
        let mut idx = Vec::with_capacity(oh * ow * c);
        for y in 0..oh {
            for xx in 0..ow {
                for ch in 0..c {
                    idx.push(((y / factor) * w + xx / factor) * c + ch);
                }
            }
        }
        self.gather(x, Rc::new(idx), &[oh, ow, c])
    }

    /// Bilinear resize with half-pixel centres and edge clamping.
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let (h, w, c) = (xs[0], xs[1], xs[2]);
        let ty = Rc::new(resize_taps(h, out_h));
        let tx = Rc::new(resize_taps(w, out_w));
        let xd = self.value(x).data();
        let mut out = vec![0.0; out_h * out_w * c];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let o = (oy * out_w + ox) * c;
                let wts = [
                    ((y0 * w + x0) * c, (1.0 - fy) * (1.0 - fx)),
                    ((y0 * w + x1) * c, (1.0 - fy) * fx),
                    ((y1 * w + x0) * c, fy * (1.0 - fx)),
                    ((y1 * w + x1) * c, fy * fx),
                ];
                for (src, wt) in wts {
                    for ch in 0..c {
                        out[o + ch] += wt * xd[src + ch];
                    }
                }
            }
        }
        let value = Tensor::new(&[out_h, out_w, c], out);
        self.custom(
            &[x],
            value,
            Box::new(move |g, p, _| {
                let gd = g.data();
                let mut gx = vec![0.0; h * w * c];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let o = (oy * out_w + ox) * c;
                        let wts = [
                            ((y0 * w + x0) * c, (1.0 - fy) * (1.0 - fx)),
                            ((y0 * w + x1) * c, (1.0 - fy) * fx),
                            ((y1 * w + x0) * c, fy * (1.0 - fx)),
                            ((y1 * w + x1) * c, fy * fx),
                        ];
                        for (src, wt) in wts {
                            for ch in 0..c {
                                gx[src + ch] += wt * gd[o + ch];
                            }
                        }
                    }
                }
                vec![Some(Tensor::new(p[0].shape(), gx))]
            }),
        )
    }

    /// Global average pooling `[H, W, C] -> [1, 1, C]`.
    pub fn spatial_mean(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let c = xs[2];
        let n = (xs[0] * xs[1]) as f64;
        let mut out = vec![0.0; c];
        for row in self.value(x).data().chunks(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= n;
        }
        let value = Tensor::new(&[1, 1, c], out);
        self.custom(
            &[x],
            value,
            Box::new(move |g, p, _| {
                let gd = g.data();
                let mut gx = vec![0.0; p[0].numel()];
                for row in gx.chunks_mut(c) {
                    for (o, v) in row.iter_mut().zip(gd) {
                        *o = v / n;
                    }
                }
                vec![Some(Tensor::new(p[0].shape(), gx))]
            }),
        )
    }
}

/// Per output index: `(lo, hi, frac)` source taps of a half-pixel linear resize.
fn resize_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (s.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            let f = if hi == lo { 0.0 } else { s - lo as f64 };
            (lo, hi, f)
        })
        .collect()
}
