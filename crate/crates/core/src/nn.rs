//! Named parameter sets, seeded initialization and the small layer vocabulary
//! shared by the network modules.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unmixsr_autodiff::{Graph, Tensor, Var};

use crate::error::{invalid, Result};

/// Learnable tensors keyed by unique dotted names.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParameters {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if !t.is_finite() {
            return Err(invalid(format!("parameter {name} is not finite")));
        }
        if self.tensors.insert(name.clone(), t).is_some() {
            return Err(invalid(format!("duplicate parameter name {name}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Registers every tensor as a graph leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound { vars: self.tensors.iter().map(|(k, t)| (k.clone(), g.leaf(t.clone()))).collect() }
    }
}

/// Graph handles for a parameter set.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("parameter {name} was not built"),
        }
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// He-uniform, `±sqrt(6/fan_in)`.
    Kaiming,
    Zeros,
    Ones,
}

/// Seeded parameter factory. With `randomize_zeros` set, zero-initialized
/// tensors are instead drawn uniformly in `±scale`, exposing every branch
/// to gradient and range checks.
pub struct ParamBuilder {
    rng: ChaCha8Rng,
    params: ModelParameters,
    randomize_zeros: Option<f64>,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), params: ModelParameters::new(), randomize_zeros: None }
    }

    pub fn randomized(seed: u64, scale: f64) -> Self {
        Self { randomize_zeros: Some(scale), ..Self::new(seed) }
    }

    pub fn finish(self) -> ModelParameters {
        self.params
    }

    pub fn tensor(&mut self, name: &str, shape: &[usize], fan_in: usize, init: Init) -> Result<()> {
        let n: usize = shape.iter().product();
        let data = match (init, self.randomize_zeros) {
            (Init::Kaiming, _) => {
                let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| self.rng.random_range(-bound..bound)).collect()
            }
            (Init::Zeros, Some(s)) => (0..n).map(|_| self.rng.random_range(-s..s)).collect(),
            (Init::Zeros, None) => vec![0.0; n],
            (Init::Ones, _) => vec![1.0; n],
        };
        self.params.insert(name, Tensor::new(shape, data))
    }

    /// `{name}.w` of shape `[k, k, cin, cout]` and `{name}.b` of `[cout]`.
    pub fn conv(&mut self, name: &str, k: usize, cin: usize, cout: usize, init: Init) -> Result<()> {
        let fan = k * k * cin;
        self.tensor(&format!("{name}.w"), &[k, k, cin, cout], fan, init)?;
        self.tensor(&format!("{name}.b"), &[cout], fan, init)
    }

    /// Depth-wise `{name}.w` of shape `[k, k, c]` and `{name}.b` of `[c]`.
    pub fn dwconv(&mut self, name: &str, k: usize, c: usize, init: Init) -> Result<()> {
        self.tensor(&format!("{name}.w"), &[k, k, c], k * k, init)?;
        self.tensor(&format!("{name}.b"), &[c], k * k, init)
    }

    /// `{name}.w` of shape `[cin, cout]`, plus `{name}.b` when `bias`.
    pub fn linear(&mut self, name: &str, cin: usize, cout: usize, bias: bool, init: Init) -> Result<()> {
        self.tensor(&format!("{name}.w"), &[cin, cout], cin, init)?;
        if bias {
            self.tensor(&format!("{name}.b"), &[cout], cin, init)?;
        }
        Ok(())
    }

    pub fn layer_norm(&mut self, name: &str, c: usize) -> Result<()> {
        self.tensor(&format!("{name}.g"), &[c], c, Init::Ones)?;
        let n = format!("{name}.b");
        self.params.insert(n, Tensor::zeros(&[c]))
    }
}

pub const LEAKY_SLOPE: f64 = 0.1;
pub const LN_EPS: f64 = 1e-5;

/// Conv with "same" padding for odd `k`, or stride-2 downsampling when `stride` is 2.
pub fn conv(g: &mut Graph, p: &Bound, name: &str, x: Var, stride: usize) -> Var {
    let w = p.var(&format!("{name}.w"));
    let b = p.var(&format!("{name}.b"));
    let k = g.shape(w)[0];
    g.conv2d(x, w, Some(b), stride, k / 2)
}

pub fn dwconv(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Var {
    let w = p.var(&format!("{name}.w"));
    let b = p.var(&format!("{name}.b"));
    g.depthwise_conv2d(x, w, Some(b))
}

pub fn linear(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Var {
    let y = g.matmul(x, p.var(&format!("{name}.w")));
    match p.try_var(&format!("{name}.b")) {
        Some(b) => g.add(y, b),
        None => y,
    }
}

pub fn layer_norm(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Var {
    let gamma = p.var(&format!("{name}.g"));
    let beta = p.var(&format!("{name}.b"));
    g.layer_norm_last(x, gamma, beta, LN_EPS)
}

pub fn lrelu(g: &mut Graph, x: Var) -> Var {
    g.leaky_relu(x, LEAKY_SLOPE)
}

/// Three 3×3 convolutions with leaky-ReLU between them.
pub fn init_stem(b: &mut ParamBuilder, name: &str, cin: usize, c: usize) -> Result<()> {
    b.conv(&format!("{name}.0"), 3, cin, c, Init::Kaiming)?;
    b.conv(&format!("{name}.1"), 3, c, c, Init::Kaiming)?;
    b.conv(&format!("{name}.2"), 3, c, c, Init::Kaiming)
}

pub fn stem(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Var {
    let h = conv(g, p, &format!("{name}.0"), x, 1);
    let h = lrelu(g, h);
    let h = conv(g, p, &format!("{name}.1"), h, 1);
    let h = lrelu(g, h);
    conv(g, p, &format!("{name}.2"), h, 1)
}

/// `x + conv(lrelu(conv(x)))`, with the second conv zero-initialized.
pub fn init_res_block(b: &mut ParamBuilder, name: &str, c: usize) -> Result<()> {
    b.conv(&format!("{name}.0"), 3, c, c, Init::Kaiming)?;
    b.conv(&format!("{name}.1"), 3, c, c, Init::Zeros)
}

pub fn res_block(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Var {
    let h = conv(g, p, &format!("{name}.0"), x, 1);
    let h = lrelu(g, h);
    let h = conv(g, p, &format!("{name}.1"), h, 1);
    g.add(x, h)
}

/// Pointwise FFN: 1×1 (C→2C), GELU, depth-wise 3×3, GELU, 1×1 (2C→C).
pub fn init_ffn(b: &mut ParamBuilder, name: &str, c: usize) -> Result<()> {
    b.linear(&format!("{name}.in"), c, 2 * c, true, Init::Kaiming)?;
    b.dwconv(&format!("{name}.dw"), 3, 2 * c, Init::Kaiming)?;
    b.linear(&format!("{name}.out"), 2 * c, c, true, Init::Zeros)
}

pub fn ffn(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Var {
    let h = linear(g, p, &format!("{name}.in"), x);
    let h = g.gelu(h);
    let h = dwconv(g, p, &format!("{name}.dw"), h);
    let h = g.gelu(h);
    linear(g, p, &format!("{name}.out"), h)
}
