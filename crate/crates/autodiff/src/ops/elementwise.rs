//! Broadcasting binary ops, pointwise activations and full reductions.

use crate::{Graph, Tensor, Var};

/// Right-aligned broadcast of two shapes; `None` when incompatible.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn strides_for(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + rank - shape.len();
        strides[oi] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visits every output position with the matching flat offsets into `a` and `b`.
fn for_each_pair(out: &[usize], a: &[usize], b: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n: usize = out.iter().product();
    if a == out && b == out {
        for i in 0..n {
            f(i, i, i);
        }
        return;
    }
    let sa = strides_for(a, out);
    let sb = strides_for(b, out);
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for i in 0..n {
        f(i, oa, ob);
        for d in (0..rank).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl Graph {
    fn binary(&mut self, a: Var, b: Var, op: BinOp) -> Var {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = broadcast_shape(&sa, &sb)
            .unwrap_or_else(|| panic!("cannot broadcast {:?} with {:?}", sa, sb));
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; out_shape.iter().product()];
        for_each_pair(&out_shape, &sa, &sb, |i, ia, ib| {
            let (x, y) = (va[ia], vb[ib]);
            out[i] = match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
            };
        });
        let value = Tensor::new(&out_shape, out);
        let os = out_shape.clone();
        self.custom(
            &[a, b],
            value,
            Box::new(move |g, p, _| {
                let (xa, xb) = (p[0], p[1]);
                let mut ga = vec![0.0; xa.numel()];
                let mut gb = vec![0.0; xb.numel()];
                let gd = g.data();
                let (da, db) = (xa.data(), xb.data());
                for_each_pair(&os, xa.shape(), xb.shape(), |i, ia, ib| {
                    let gi = gd[i];
                    match op {
                        BinOp::Add => {
                            ga[ia] += gi;
                            gb[ib] += gi;
                        }
                        BinOp::Sub => {
                            ga[ia] += gi;
                            gb[ib] -= gi;
                        }
                        BinOp::Mul => {
                            ga[ia] += gi * db[ib];
                            gb[ib] += gi * da[ia];
                        }
                        BinOp::Div => {
                            ga[ia] += gi / db[ib];
                            gb[ib] -= gi * da[ia] / (db[ib] * db[ib]);
                        }
                    }
                });
                vec![Some(Tensor::new(xa.shape(), ga)), Some(Tensor::new(xb.shape(), gb))]
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinOp::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinOp::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinOp::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinOp::Div)
    }

    /// Pointwise map with derivative `df(x, y)` where `y = f(x)`.
    pub fn unary(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let value = self.value(x).map(f);
        self.custom(
            &[x],
            value,
            Box::new(move |g, p, y| {
                let data = p[0]
                    .data()
                    .iter()
                    .zip(y.data())
                    .zip(g.data())
                    .map(|((&xi, &yi), &gi)| gi * df(xi, yi))
                    .collect();
                vec![Some(Tensor::new(g.shape(), data))]
            }),
        )
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, move |v| v * s, move |_, _| s)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, move |v| v + s, |_, _| 1.0)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(
            x,
            move |v| if v >= 0.0 { v } else { slope * v },
            move |v, _| if v >= 0.0 { 1.0 } else { slope },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu, |v, _| gelu_grad(v))
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(x, f64::sin, |v, _| v.cos())
    }

    pub fn cos(&mut self, x: Var) -> Var {
        self.unary(x, f64::cos, |v, _| -v.sin())
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, |v, _| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 })
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, |v, _| 2.0 * v)
    }

    /// `x - floor(x)`; the derivative is taken as 1 (it is 1 almost everywhere).
    pub fn frac(&mut self, x: Var) -> Var {
        self.unary(x, |v| v - v.floor(), |_, _| 1.0)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.custom(
            &[x],
            value,
            Box::new(|g, p, _| vec![Some(Tensor::full(p[0].shape(), g.data()[0]))]),
        )
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// Mean absolute error between two equally shaped values.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "l1_loss shape mismatch");
        let d = self.sub(a, b);
        let d = self.abs(d);
        self.mean_all(d)
    }

    /// Dot product with a fixed weight tensor, a convenient scalar probe.
    pub fn weighted_sum(&mut self, x: Var, w: &Tensor) -> Var {
        let wv = self.constant(w.clone());
        let p = self.mul(x, wv);
        self.sum_all(p)
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(v: f64) -> f64 {
    0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh())
}

fn gelu_grad(v: f64) -> f64 {
    let u = GELU_C * (v + 0.044715 * v * v * v);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
    0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du
}
