//! Spatial-channel abundance cross-attention: a self-modulated reference
//! feature scales the attention values of abundance-feature queries, first
//! within spatial windows and then across channels.

use std::rc::Rc;

use unmixsr_autodiff::{Graph, Var};

use crate::error::{invalid, Result};
use crate::nn::{self, Bound, Init, ParamBuilder};

#[derive(Debug, Clone, Copy)]
pub struct ScacaOutputs {
    pub out: Var,
    /// `[windows, M², M²]` spatial attention weights.
    pub spatial_attention: Var,
    /// `[1, C, C]` channel attention weights.
    pub channel_attention: Var,
}

pub fn init_self_modulate(b: &mut ParamBuilder, name: &str, c: usize) -> Result<()> {
    b.dwconv(&format!("{name}.dw"), 5, c, Init::Kaiming)
}

/// `x + x ⊙ sigmoid(dwconv5×5(x))`.
pub fn self_modulate(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Var {
    let d = nn::dwconv(g, p, &format!("{name}.dw"), x);
    let s = g.sigmoid(d);
    let m = g.mul(x, s);
    g.add(x, m)
}

pub fn init_spatial(b: &mut ParamBuilder, name: &str, c: usize, window: usize) -> Result<()> {
    if window == 0 {
        return Err(invalid("window size must be positive"));
    }
    b.layer_norm(&format!("{name}.ln"), c)?;
    for n in ["q", "k", "v"] {
        b.linear(&format!("{name}.{n}"), c, c, false, Init::Kaiming)?;
    }
    let side = 2 * window - 1;
    b.tensor(&format!("{name}.rpb"), &[side * side], 1, Init::Zeros)?;
    b.linear(&format!("{name}.proj"), c, c, true, Init::Kaiming)?;
    nn::init_ffn(b, &format!("{name}.ffn"), c)
}

/// Flat source index for each `(window, token, channel)` of an `hp×wp×c`
/// map tiled by `m×m` windows in row-major window order.
pub fn window_partition_index(hp: usize, wp: usize, c: usize, m: usize) -> Vec<usize> {
    let (nh, nw) = (hp / m, wp / m);
    let mut idx = Vec::with_capacity(hp * wp * c);
    for wy in 0..nh {
        for wx in 0..nw {
            for ty in 0..m {
                for tx in 0..m {
                    let (y, x) = (wy * m + ty, wx * m + tx);
                    idx.extend((0..c).map(|ch| (y * wp + x) * c + ch));
                }
            }
        }
    }
    idx
}

/// Inverse permutation of [`window_partition_index`].
pub fn window_merge_index(hp: usize, wp: usize, c: usize, m: usize) -> Vec<usize> {
    let part = window_partition_index(hp, wp, c, m);
    let mut inv = vec![0; part.len()];
    for (i, &s) in part.iter().enumerate() {
        inv[s] = i;
    }
    inv
}

/// `[M², M²]` lookup into the `(2M-1)²` relative-position table.
pub fn relative_position_index(m: usize) -> Vec<usize> {
    let side = 2 * m - 1;
    let mut idx = Vec::with_capacity(m * m * m * m);
    for i in 0..m * m {
        let (yi, xi) = (i / m, i % m);
        for j in 0..m * m {
            let (yj, xj) = (j / m, j % m);
            idx.push((yi + m - 1 - yj) * side + (xi + m - 1 - xj));
        }
    }
    idx
}

/// Partitions `[H, W, C]` into `[windows, M², C]`, replicate-padding the
/// bottom and right edges up to multiples of `m`.
fn partition(g: &mut Graph, x: Var, m: usize) -> (Var, usize, usize) {
    let s = g.shape(x).to_vec();
    let (hp, wp) = (s[0].div_ceil(m) * m, s[1].div_ceil(m) * m);
    let padded = g.pad_replicate(x, hp - s[0], wp - s[1]);
    let idx = Rc::new(window_partition_index(hp, wp, s[2], m));
    let n = (hp / m) * (wp / m);
    (g.gather(padded, idx, &[n, m * m, s[2]]), hp, wp)
}

fn merge(g: &mut Graph, w: Var, hp: usize, wp: usize, h: usize, wd: usize, m: usize) -> Var {
    let c = g.shape(w)[2];
    let idx = Rc::new(window_merge_index(hp, wp, c, m));
    let full = g.gather(w, idx, &[hp, wp, c]);
    g.crop(full, h, wd)
}

/// Window attention `softmax(QKᵀ/√C + B) (V ⊙ ref)` followed by the output
/// projection; returns the merged map and the attention weights.
fn saca(g: &mut Graph, p: &Bound, name: &str, x: Var, refm: Var, m: usize) -> (Var, Var) {
    let s = g.shape(x).to_vec();
    let c = s[2];
    let (xw, hp, wp) = partition(g, x, m);
    let (rw, _, _) = partition(g, refm, m);
    let q = g.matmul(xw, p.var(&format!("{name}.q.w")));
    let k = g.matmul(xw, p.var(&format!("{name}.k.w")));
    let v = g.matmul(xw, p.var(&format!("{name}.v.w")));
    let v_mod = g.mul(v, rw);
    let kt = g.transpose_last2(k);
    let scores = g.bmm(q, kt);
    let scores = g.scale(scores, 1.0 / (c as f64).sqrt());
    let bias = g.gather(p.var(&format!("{name}.rpb")), Rc::new(relative_position_index(m)), &[m * m, m * m]);
    let scores = g.add(scores, bias);
    let attn = g.softmax_last(scores);
    let z = g.bmm(attn, v_mod);
    let merged = merge(g, z, hp, wp, s[0], s[1], m);
    (nn::linear(g, p, &format!("{name}.proj"), merged), attn)
}

/// `F' = F + FFN(SACA(LN(F), F_refm))`; returns `(F', attention)`.
pub fn spatial_cross_attention(
    g: &mut Graph,
    p: &Bound,
    name: &str,
    f: Var,
    refm: Var,
    window: usize,
) -> Result<(Var, Var)> {
    if g.shape(f) != g.shape(refm) || g.shape(f).len() != 3 {
        return Err(invalid(format!("spatial attention shapes differ: {:?} vs {:?}", g.shape(f), g.shape(refm))));
    }
    let side = 2 * window - 1;
    if window == 0 || g.shape(p.var(&format!("{name}.rpb")))[0] != side * side {
        return Err(invalid(format!("window {window} does not match the bias table of {name}")));
    }
    let ln = nn::layer_norm(g, p, &format!("{name}.ln"), f);
    let (z, attn) = saca(g, p, name, ln, refm, window);
    let h = nn::ffn(g, p, &format!("{name}.ffn"), z);
    Ok((g.add(f, h), attn))
}

pub fn init_channel(b: &mut ParamBuilder, name: &str, c: usize) -> Result<()> {
    b.layer_norm(&format!("{name}.ln"), c)?;
    for n in ["q", "k", "v"] {
        b.linear(&format!("{name}.{n}"), c, c, false, Init::Kaiming)?;
    }
    b.linear(&format!("{name}.proj"), c, c, true, Init::Kaiming)?;
    nn::init_ffn(b, &format!("{name}.ffn"), c)
}

/// Transposed attention over channels: with `Q, K, V` viewed as `C×HW`,
/// `Z = softmax(Q Kᵀ / √HW) (V ⊙ ref)`. Returns `(F'', attention)`.
pub fn channel_cross_attention(g: &mut Graph, p: &Bound, name: &str, f: Var, refm: Var) -> Result<(Var, Var)> {
    let s = g.shape(f).to_vec();
    if g.shape(refm) != s.as_slice() || s.len() != 3 {
        return Err(invalid(format!("channel attention shapes differ: {s:?} vs {:?}", g.shape(refm))));
    }
    let (hw, c) = (s[0] * s[1], s[2]);
    let ln = nn::layer_norm(g, p, &format!("{name}.ln"), f);
    let x = g.reshape(ln, &[1, hw, c]);
    let r = g.reshape(refm, &[1, hw, c]);
    let q = g.matmul(x, p.var(&format!("{name}.q.w")));
    let k = g.matmul(x, p.var(&format!("{name}.k.w")));
    let v = g.matmul(x, p.var(&format!("{name}.v.w")));
    let v_mod = g.mul(v, r);
    let qt = g.transpose_last2(q);
    let scores = g.bmm(qt, k);
    let scores = g.scale(scores, 1.0 / (hw as f64).sqrt());
    let attn = g.softmax_last(scores);
    let at = g.transpose_last2(attn);
    let zt = g.bmm(v_mod, at);
    let z = g.reshape(zt, &[s[0], s[1], c]);
    let z = nn::linear(g, p, &format!("{name}.proj"), z);
    let h = nn::ffn(g, p, &format!("{name}.ffn"), z);
    Ok((g.add(f, h), attn))
}

pub fn init_block(b: &mut ParamBuilder, name: &str, c: usize, window: usize) -> Result<()> {
    init_self_modulate(b, &format!("{name}.sm"), c)?;
    init_spatial(b, &format!("{name}.sa"), c, window)?;
    init_channel(b, &format!("{name}.ca"), c)
}

/// Self-modulation of the reference, then spatial and channel cross-attention.
pub fn scaca_block(
    g: &mut Graph,
    p: &Bound,
    name: &str,
    f: Var,
    f_ref_hat: Var,
    window: usize,
) -> Result<ScacaOutputs> {
    let refm = self_modulate(g, p, &format!("{name}.sm"), f_ref_hat);
    let (f1, spatial_attention) = spatial_cross_attention(g, p, &format!("{name}.sa"), f, refm, window)?;
    let (out, channel_attention) = channel_cross_attention(g, p, &format!("{name}.ca"), f1, refm)?;
    Ok(ScacaOutputs { out, spatial_attention, channel_attention })
}
