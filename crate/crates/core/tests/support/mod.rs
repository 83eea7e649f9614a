//! Brute-force reference implementations used as test oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unmixsr_autodiff::Tensor;
use unmixsr_core::nn::ModelParameters;
use unmixsr_core::Raster;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_raster(r: &mut ChaCha8Rng, h: usize, w: usize, c: usize, lo: f64, hi: f64) -> Raster {
    Raster::new(h, w, c, (0..h * w * c).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

pub fn rand_tensor(r: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(-scale..scale)).collect())
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- linear algebra

/// Singular values (descending) of the `pixels × bands` matrix of `x`,
/// from a cyclic Jacobi eigen-decomposition of the Gram matrix.
pub fn singular_values(x: &Raster) -> Vec<f64> {
    let b = x.channels();
    let mut g = vec![0.0; b * b];
    for px in x.data().chunks(b) {
        for i in 0..b {
            for j in 0..b {
                g[i * b + j] += px[i] * px[j];
            }
        }
    }
    for _sweep in 0..100 {
        let off: f64 = (0..b).flat_map(|i| (0..b).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| g[i * b + j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..b {
            for q in p + 1..b {
                let apq = g[p * b + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (g[q * b + q] - g[p * b + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..b {
                    let (gkp, gkq) = (g[k * b + p], g[k * b + q]);
                    g[k * b + p] = c * gkp - s * gkq;
                    g[k * b + q] = s * gkp + c * gkq;
                }
                for k in 0..b {
                    let (gpk, gqk) = (g[p * b + k], g[q * b + k]);
                    g[p * b + k] = c * gpk - s * gqk;
                    g[q * b + k] = s * gpk + c * gqk;
                }
            }
        }
    }
    let mut sv: Vec<f64> = (0..b).map(|i| g[i * b + i].max(0.0).sqrt()).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

pub fn frobenius(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------- resampling

fn keys(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        1.5 * t.powi(3) - 2.5 * t * t + 1.0
    } else if t < 2.0 {
        -0.5 * t.powi(3) + 2.5 * t * t - 4.0 * t + 2.0
    } else {
        0.0
    }
}

/// Direct 16-tap bicubic evaluation per output pixel.
pub fn bicubic(x: &Raster, oh: usize, ow: usize) -> Raster {
    let (h, w, c) = (x.height(), x.width(), x.channels());
    let mut out = Raster::filled(oh, ow, c, 0.0).unwrap();
    for oy in 0..oh {
        let sy = (oy as f64 + 0.5) * h as f64 / oh as f64 - 0.5;
        for ox in 0..ow {
            let sx = (ox as f64 + 0.5) * w as f64 / ow as f64 - 0.5;
            for ch in 0..c {
                let mut acc = 0.0;
                for iy in (sy.floor() as isize - 1)..=(sy.floor() as isize + 2) {
                    for ix in (sx.floor() as isize - 1)..=(sx.floor() as isize + 2) {
                        let wt = keys(sy - iy as f64) * keys(sx - ix as f64);
                        let cy = iy.clamp(0, h as isize - 1) as usize;
                        let cx = ix.clamp(0, w as isize - 1) as usize;
                        acc += wt * x.get(cy, cx, ch);
                    }
                }
                out.set(oy, ox, ch, acc);
            }
        }
    }
    out
}

/// Bilinear sample at `(sy, sx)`; out-of-range corners read `outside`
/// (`None` replicates the nearest border pixel).
pub fn bilinear_at(x: &Raster, sy: f64, sx: f64, ch: usize, outside: Option<f64>) -> f64 {
    let (h, w) = (x.height() as isize, x.width() as isize);
    let (y0, x0) = (sy.floor() as isize, sx.floor() as isize);
    let mut acc = 0.0;
    for yy in [y0, y0 + 1] {
        for xx in [x0, x0 + 1] {
            let wt = (1.0 - (sy - yy as f64).abs()) * (1.0 - (sx - xx as f64).abs());
            if wt == 0.0 {
                continue;
            }
            let inside = yy >= 0 && xx >= 0 && yy < h && xx < w;
            let v = match (inside, outside) {
                (true, _) => x.get(yy as usize, xx as usize, ch),
                (false, Some(v)) => v,
                (false, None) => x.get(yy.clamp(0, h - 1) as usize, xx.clamp(0, w - 1) as usize, ch),
            };
            acc += wt * v;
        }
    }
    acc
}

/// `out(y, x) = f(y + dy, x + dx)` with replicated borders; flow channel 0 is dx.
pub fn warp(f: &Raster, flow: &Raster) -> Raster {
    let mut out = Raster::filled(f.height(), f.width(), f.channels(), 0.0).unwrap();
    for y in 0..f.height() {
        for x in 0..f.width() {
            let (dx, dy) = (flow.get(y, x, 0), flow.get(y, x, 1));
            for ch in 0..f.channels() {
                out.set(y, x, ch, bilinear_at(f, y as f64 + dy, x as f64 + dx, ch, None));
            }
        }
    }
    out
}

// ---------------------------------------------------------------- convolution

/// Zero-padded "same" convolution with a `[k, k, cin, cout]` kernel.
pub fn conv(f: &Raster, w: &Tensor, b: Option<&Tensor>) -> Raster {
    let s = w.shape();
    let (k, cin, cout) = (s[0], s[2], s[3]);
    let half = (k / 2) as isize;
    let (h, wd) = (f.height() as isize, f.width() as isize);
    let mut out = Raster::filled(f.height(), f.width(), cout, 0.0).unwrap();
    for y in 0..h {
        for x in 0..wd {
            for co in 0..cout {
                let mut acc = b.map_or(0.0, |b| b.data()[co]);
                for ky in 0..k {
                    for kx in 0..k {
                        let (yy, xx) = (y + ky as isize - half, x + kx as isize - half);
                        if yy < 0 || xx < 0 || yy >= h || xx >= wd {
                            continue;
                        }
                        for ci in 0..cin {
                            acc += w.data()[((ky * k + kx) * cin + ci) * cout + co] * f.get(yy as usize, xx as usize, ci);
                        }
                    }
                }
                out.set(y as usize, x as usize, co, acc);
            }
        }
    }
    out
}

/// Per-pixel gather form of modulated deformable convolution: tap `j = ky·k + kx`
/// samples at `p + (ky - k/2, kx - k/2) + (O[2j+1], O[2j])` with zero padding,
/// scaled by `M[j]`.
pub fn deform_conv(f: &Raster, offsets: &Raster, masks: &Raster, w: &Tensor, b: Option<&Tensor>) -> Raster {
    let s = w.shape();
    let (k, cin, cout) = (s[0], s[2], s[3]);
    let half = (k / 2) as f64;
    let mut out = Raster::filled(f.height(), f.width(), cout, 0.0).unwrap();
    for y in 0..f.height() {
        for x in 0..f.width() {
            let mut sampled = vec![0.0; k * k * cin];
            for ky in 0..k {
                for kx in 0..k {
                    let j = ky * k + kx;
                    let sy = y as f64 + ky as f64 - half + offsets.get(y, x, 2 * j + 1);
                    let sx = x as f64 + kx as f64 - half + offsets.get(y, x, 2 * j);
                    for ci in 0..cin {
                        sampled[j * cin + ci] = masks.get(y, x, j) * bilinear_at(f, sy, sx, ci, Some(0.0));
                    }
                }
            }
            for co in 0..cout {
                let mut acc = b.map_or(0.0, |b| b.data()[co]);
                for (i, v) in sampled.iter().enumerate() {
                    acc += w.data()[i * cout + co] * v;
                }
                out.set(y, x, co, acc);
            }
        }
    }
    out
}

// ---------------------------------------------------------------- dense layers on row vectors

pub fn param<'a>(p: &'a ModelParameters, name: &str) -> &'a [f64] {
    p.get(name).unwrap_or_else(|| panic!("missing {name}")).data()
}

/// `rows × cin` times `[cin, cout]`, plus an optional bias.
pub fn dense(x: &[f64], cin: usize, w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let cout = w.len() / cin;
    x.chunks(cin)
        .flat_map(|row| {
            (0..cout).map(move |o| b.map_or(0.0, |b| b[o]) + (0..cin).map(|i| row[i] * w[i * cout + o]).sum::<f64>())
        })
        .collect()
}

pub fn layer_norm(x: &[f64], c: usize, g: &[f64], b: &[f64]) -> Vec<f64> {
    x.chunks(c)
        .flat_map(|row| {
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / c as f64;
            let sd = (var + 1e-5).sqrt();
            (0..c).map(move |j| (row[j] - mu) / sd * g[j] + b[j])
        })
        .collect()
}

pub fn gelu(v: f64) -> f64 {
    0.5 * v * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v.powi(3))).tanh())
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Depth-wise zero-padded convolution with a `[k, k, c]` kernel.
pub fn dwconv(x: &[f64], h: usize, w: usize, c: usize, k: &[f64], b: &[f64]) -> Vec<f64> {
    let ks = ((k.len() / c) as f64).sqrt() as usize;
    let half = (ks / 2) as isize;
    let mut out = vec![0.0; h * w * c];
    for y in 0..h as isize {
        for xx in 0..w as isize {
            for ch in 0..c {
                let mut acc = b[ch];
                for ky in 0..ks as isize {
                    for kx in 0..ks as isize {
                        let (sy, sx) = (y + ky - half, xx + kx - half);
                        if sy >= 0 && sx >= 0 && sy < h as isize && sx < w as isize {
                            acc += k[((ky * ks as isize + kx) as usize) * c + ch] * x[(sy as usize * w + sx as usize) * c + ch];
                        }
                    }
                }
                out[(y as usize * w + xx as usize) * c + ch] = acc;
            }
        }
    }
    out
}

pub fn ffn(p: &ModelParameters, name: &str, x: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let a = dense(x, c, param(p, &format!("{name}.in.w")), Some(param(p, &format!("{name}.in.b"))));
    let a: Vec<f64> = a.into_iter().map(gelu).collect();
    let a = dwconv(&a, h, w, 2 * c, param(p, &format!("{name}.dw.w")), param(p, &format!("{name}.dw.b")));
    let a: Vec<f64> = a.into_iter().map(gelu).collect();
    dense(&a, 2 * c, param(p, &format!("{name}.out.w")), Some(param(p, &format!("{name}.out.b"))))
}

/// `F + FFN(proj(softmax(QKᵀ/√C + B) V))` evaluated window by window with
/// all-ones modulation; `h` and `w` must be multiples of `m`. Returns the
/// output and every attention row.
pub fn dense_window_attention(p: &ModelParameters, name: &str, f: &Raster, m: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (h, w, c) = (f.height(), f.width(), f.channels());
    assert!(h % m == 0 && w % m == 0);
    let ln = layer_norm(f.data(), c, param(p, &format!("{name}.ln.g")), param(p, &format!("{name}.ln.b")));
    let q = dense(&ln, c, param(p, &format!("{name}.q.w")), None);
    let k = dense(&ln, c, param(p, &format!("{name}.k.w")), None);
    let v = dense(&ln, c, param(p, &format!("{name}.v.w")), None);
    let table = param(p, &format!("{name}.rpb"));
    let side = 2 * m - 1;
    let mut z = vec![0.0; h * w * c];
    let mut rows = Vec::new();
    for wy in (0..h).step_by(m) {
        for wx in (0..w).step_by(m) {
            let pix: Vec<(usize, usize)> = (0..m).flat_map(|ty| (0..m).map(move |tx| (wy + ty, wx + tx))).collect();
            for &(yi, xi) in &pix {
                let i = yi * w + xi;
                let scores: Vec<f64> = pix
                    .iter()
                    .map(|&(yj, xj)| {
                        let j = yj * w + xj;
                        let dot: f64 = (0..c).map(|ch| q[i * c + ch] * k[j * c + ch]).sum();
                        let dy = (yi as isize - yj as isize + m as isize - 1) as usize;
                        let dx = (xi as isize - xj as isize + m as isize - 1) as usize;
                        dot / (c as f64).sqrt() + table[dy * side + dx]
                    })
                    .collect();
                let a = softmax(&scores);
                for (t, &(yj, xj)) in pix.iter().enumerate() {
                    let j = yj * w + xj;
                    for ch in 0..c {
                        z[i * c + ch] += a[t] * v[j * c + ch];
                    }
                }
                rows.push(a);
            }
        }
    }
    let z = dense(&z, c, param(p, &format!("{name}.proj.w")), Some(param(p, &format!("{name}.proj.b"))));
    let hh = ffn(p, &format!("{name}.ffn"), &z, h, w, c);
    (f.data().iter().zip(hh).map(|(a, b)| a + b).collect(), rows)
}

/// `F + FFN(proj(Z))`, `Z[p, i] = Σ_j softmax_j(Σ_p' Q[p', i] K[p', j] / √HW) V[p, j]`.
pub fn dense_channel_attention(p: &ModelParameters, name: &str, f: &Raster) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (h, w, c) = (f.height(), f.width(), f.channels());
    let hw = h * w;
    let ln = layer_norm(f.data(), c, param(p, &format!("{name}.ln.g")), param(p, &format!("{name}.ln.b")));
    let q = dense(&ln, c, param(p, &format!("{name}.q.w")), None);
    let k = dense(&ln, c, param(p, &format!("{name}.k.w")), None);
    let v = dense(&ln, c, param(p, &format!("{name}.v.w")), None);
    let rows: Vec<Vec<f64>> = (0..c)
        .map(|i| {
            let s: Vec<f64> =
                (0..c).map(|j| (0..hw).map(|px| q[px * c + i] * k[px * c + j]).sum::<f64>() / (hw as f64).sqrt()).collect();
            softmax(&s)
        })
        .collect();
    let mut z = vec![0.0; hw * c];
    for px in 0..hw {
        for i in 0..c {
            z[px * c + i] = (0..c).map(|j| rows[i][j] * v[px * c + j]).sum();
        }
    }
    let z = dense(&z, c, param(p, &format!("{name}.proj.w")), Some(param(p, &format!("{name}.proj.b"))));
    let hh = ffn(p, &format!("{name}.ffn"), &z, h, w, c);
    (f.data().iter().zip(hh).map(|(a, b)| a + b).collect(), rows)
}

// ---------------------------------------------------------------- finite differences

/// Worst relative error between analytic gradients and central differences
/// on `samples` randomly chosen scalar parameters. Tensors are drawn
/// uniformly, then an entry within the tensor.
pub fn finite_difference_check(
    params: &ModelParameters,
    analytic: &[(String, Tensor)],
    loss: impl Fn(&ModelParameters) -> f64,
    samples: usize,
    seed: u64,
    h: f64,
) -> f64 {
    let mut r = rng(seed);
    let names: Vec<&str> = params.names().collect();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let name = names[r.random_range(0..names.len())];
        let n = params.get(name).unwrap().numel();
        let idx = r.random_range(0..n);
        let a = analytic.iter().find(|(k, _)| k == name).expect("gradient present").1.data()[idx];
        let eval = |delta: f64| {
            let mut p = params.clone();
            p.get_mut(name).unwrap().data_mut()[idx] += delta;
            loss(&p)
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let scale = a.abs().max(numeric.abs()).max(1e-7);
        worst = worst.max((a - numeric).abs() / scale);
    }
    worst
}
