//! Matrix products, row softmax and last-axis layer normalization.

use crate::gemm::gemm;
use crate::{Graph, Tensor, Var};

impl Graph {
    /// Applies a `k×n` matrix to the last axis of `a` (`[..., k] -> [..., n]`).
    pub fn matmul(&mut self, a: Var, w: Var) -> Var {
        let sa = self.shape(a).to_vec();
        let sw = self.shape(w).to_vec();
        assert_eq!(sw.len(), 2, "matmul rhs must be 2-D");
        let k = *sa.last().unwrap();
        assert_eq!(k, sw[0], "matmul inner dims {:?} x {:?}", sa, sw);
        let n = sw[1];
        let m = self.value(a).numel() / k.max(1);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(w).data(), false, &mut out, 0.0);
        self.add_macs((m * k * n) as u64);
        let mut oshape = sa;
        *oshape.last_mut().unwrap() = n;
        let value = Tensor::new(&oshape, out);
        self.custom(
            &[a, w],
            value,
            Box::new(move |g, p, _| {
                let (av, wv) = (p[0], p[1]);
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g.data(), false, wv.data(), true, &mut ga, 0.0);
                let mut gw = vec![0.0; k * n];
                gemm(k, m, n, av.data(), true, g.data(), false, &mut gw, 0.0);
                vec![Some(Tensor::new(av.shape(), ga)), Some(Tensor::new(wv.shape(), gw))]
            }),
        )
    }

    /// Batched product `[b, m, k] x [b, k, n] -> [b, m, n]`.
    pub fn bmm(&mut self, a: Var, c: Var) -> Var {
        let sa = self.shape(a).to_vec();
        let sc = self.shape(c).to_vec();
        assert!(sa.len() == 3 && sc.len() == 3, "bmm needs rank-3 operands");
        assert_eq!(sa[0], sc[0], "bmm batch mismatch");
        assert_eq!(sa[2], sc[1], "bmm inner mismatch");
        let (b, m, k, n) = (sa[0], sa[1], sa[2], sc[2]);
        let mut out = vec![0.0; b * m * n];
        {
            let (ad, cd) = (self.value(a).data(), self.value(c).data());
            for i in 0..b {
                gemm(
                    m,
                    k,
                    n,
                    &ad[i * m * k..(i + 1) * m * k],
                    false,
                    &cd[i * k * n..(i + 1) * k * n],
                    false,
                    &mut out[i * m * n..(i + 1) * m * n],
                    0.0,
                );
            }
        }
        self.add_macs((b * m * k * n) as u64);
        let value = Tensor::new(&[b, m, n], out);
        self.custom(
            &[a, c],
            value,
            Box::new(move |g, p, _| {
                let (ad, cd, gd) = (p[0].data(), p[1].data(), g.data());
                let mut ga = vec![0.0; b * m * k];
                let mut gc = vec![0.0; b * k * n];
                for i in 0..b {
                    let gi = &gd[i * m * n..(i + 1) * m * n];
                    gemm(
                        m,
                        n,
                        k,
                        gi,
                        false,
                        &cd[i * k * n..(i + 1) * k * n],
                        true,
                        &mut ga[i * m * k..(i + 1) * m * k],
                        0.0,
                    );
                    gemm(
                        k,
                        m,
                        n,
                        &ad[i * m * k..(i + 1) * m * k],
                        true,
                        gi,
                        false,
                        &mut gc[i * k * n..(i + 1) * k * n],
                        0.0,
                    );
                }
                vec![Some(Tensor::new(p[0].shape(), ga)), Some(Tensor::new(p[1].shape(), gc))]
            }),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&mut self, x: Var) -> Var {
        let n = self.value(x).last_dim();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let value = Tensor::new(self.shape(x), out);
        self.custom(
            &[x],
            value,
            Box::new(move |g, _, y| {
                let mut gx = vec![0.0; y.numel()];
                for ((gr, yr), out) in
                    g.data().chunks(n).zip(y.data().chunks(n)).zip(gx.chunks_mut(n))
                {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                        *o = yi * (gi - dot);
                    }
                }
                vec![Some(Tensor::new(y.shape(), gx))]
            }),
        )
    }

    /// LayerNorm over the last axis with per-channel affine `gamma`, `beta`.
    pub fn layer_norm_last(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let c = self.value(x).last_dim();
        assert_eq!(self.value(gamma).numel(), c, "layer_norm gamma size");
        assert_eq!(self.value(beta).numel(), c, "layer_norm beta size");
        let xd = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let rows = xd.len() / c;
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * c..(r + 1) * c];
            let (mu, inv) = moments(row, eps);
            for j in 0..c {
                out[r * c + j] = (row[j] - mu) * inv * gd[j] + bd[j];
            }
        }
        let value = Tensor::new(self.shape(x), out);
        self.custom(
            &[x, gamma, beta],
            value,
            Box::new(move |g, p, _| {
                let (xd, gmd) = (p[0].data(), p[1].data());
                let gdat = g.data();
                let mut gx = vec![0.0; xd.len()];
                let mut ggamma = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                let mut xhat = vec![0.0; c];
                let mut gxhat = vec![0.0; c];
                for r in 0..rows {
                    let row = &xd[r * c..(r + 1) * c];
                    let grow = &gdat[r * c..(r + 1) * c];
                    let (mu, inv) = moments(row, eps);
                    let (mut m1, mut m2) = (0.0, 0.0);
                    for j in 0..c {
                        xhat[j] = (row[j] - mu) * inv;
                        gxhat[j] = grow[j] * gmd[j];
                        ggamma[j] += grow[j] * xhat[j];
                        gbeta[j] += grow[j];
                        m1 += gxhat[j];
                        m2 += gxhat[j] * xhat[j];
                    }
                    m1 /= c as f64;
                    m2 /= c as f64;
                    for j in 0..c {
                        gx[r * c + j] = inv * (gxhat[j] - m1 - xhat[j] * m2);
                    }
                }
                vec![
                    Some(Tensor::new(p[0].shape(), gx)),
                    Some(Tensor::new(p[1].shape(), ggamma)),
                    Some(Tensor::new(p[2].shape(), gbeta)),
                ]
            }),
        )
    }
}

fn moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mu = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    (mu, 1.0 / (var + eps).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 900.0]));
        let y = g.softmax_last(x);
        for row in g.value(y).data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_zero_mean_unit_var() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(&[1, 4], vec![1.0, 2.0, 3.0, 6.0]));
        let ga = g.leaf(Tensor::full(&[4], 1.0));
        let be = g.leaf(Tensor::zeros(&[4]));
        let y = g.layer_norm_last(x, ga, be, 0.0);
        let d = g.value(y).data();
        let mean: f64 = d.iter().sum::<f64>() / 4.0;
        let var: f64 = d.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }
}
