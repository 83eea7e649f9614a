//! Spatial-channel modulated fusion of encoder skips into decoder features.

use unmixsr_autodiff::{Graph, Var};

use crate::error::{invalid, Result};
use crate::nn::{self, Bound, Init, ParamBuilder};

#[derive(Debug, Clone, Copy)]
pub struct FusionOutputs {
    pub out: Var,
    pub f_spa: Var,
    /// `[H, W, 1]` spatial gate.
    pub m_spa: Var,
    pub f_spe: Var,
    /// `[1, 1, C]` channel gate.
    pub m_spe: Var,
}

/// `c` is the decoder width; the concatenated input has `2c` channels.
pub fn init(b: &mut ParamBuilder, name: &str, c: usize) -> Result<()> {
    let c2 = 2 * c;
    b.dwconv(&format!("{name}.spa.dw0"), 3, c2, Init::Kaiming)?;
    b.dwconv(&format!("{name}.spa.dw1"), 3, c2, Init::Kaiming)?;
    b.linear(&format!("{name}.spa.pw"), c2, c, true, Init::Zeros)?;
    b.conv(&format!("{name}.spa.gate"), 3, c2, 1, Init::Zeros)?;
    b.linear(&format!("{name}.spe.v"), c2, c, true, Init::Zeros)?;
    b.linear(&format!("{name}.spe.gate"), c2, c, true, Init::Zeros)
}

/// `V_spa ⊙ sigmoid(conv3×3(F_cat))`; returns `(F_spa, M_spa)`.
pub fn spatial_modulation(g: &mut Graph, p: &Bound, name: &str, f_cat: Var) -> (Var, Var) {
    let v = nn::dwconv(g, p, &format!("{name}.spa.dw0"), f_cat);
    let v = nn::lrelu(g, v);
    let v = nn::dwconv(g, p, &format!("{name}.spa.dw1"), v);
    let v = nn::lrelu(g, v);
    let v = nn::linear(g, p, &format!("{name}.spa.pw"), v);
    let logit = nn::conv(g, p, &format!("{name}.spa.gate"), f_cat, 1);
    let m = g.sigmoid(logit);
    (g.mul(v, m), m)
}

/// `conv1×1(F_cat) ⊙ sigmoid(conv1×1(GAP(F_cat)))`; returns `(F_spe, M_spe)`.
pub fn channel_modulation(g: &mut Graph, p: &Bound, name: &str, f_cat: Var) -> (Var, Var) {
    let v = nn::linear(g, p, &format!("{name}.spe.v"), f_cat);
    let gap = g.spatial_mean(f_cat);
    let logit = nn::linear(g, p, &format!("{name}.spe.gate"), gap);
    let m = g.sigmoid(logit);
    (g.mul(v, m), m)
}

/// `F_spa + F_spe + F_dec` over `F_cat = concat(F_enc, F_dec)`.
pub fn scmf_fuse(g: &mut Graph, p: &Bound, name: &str, f_enc: Var, f_dec: Var) -> Result<FusionOutputs> {
    if g.shape(f_enc) != g.shape(f_dec) || g.shape(f_enc).len() != 3 {
        return Err(invalid(format!(
            "fusion shapes differ: encoder {:?}, decoder {:?}",
            g.shape(f_enc),
            g.shape(f_dec)
        )));
    }
    let cat = g.concat_last(&[f_enc, f_dec]);
    let (f_spa, m_spa) = spatial_modulation(g, p, name, cat);
    let (f_spe, m_spe) = channel_modulation(g, p, name, cat);
    let s = g.add(f_spa, f_spe);
    let out = g.add(s, f_dec);
    Ok(FusionOutputs { out, f_spa, m_spa, f_spe, m_spe })
}
