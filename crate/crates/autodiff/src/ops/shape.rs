//! Reshapes, channel concat/slice and index gathers.

use std::rc::Rc;

use crate::{Graph, Tensor, Var};

impl Graph {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self.value(x).clone().reshaped(shape);
        self.custom(
            &[x],
            value,
            Box::new(|g, p, _| vec![Some(g.clone().reshaped(p[0].shape()))]),
        )
    }

    /// Concatenates along the last axis; leading dims must agree.
    pub fn concat_last(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "concat of nothing");
        let lead = self.shape(xs[0])[..self.shape(xs[0]).len() - 1].to_vec();
        let widths: Vec<usize> = xs
            .iter()
            .map(|&v| {
                let s = self.shape(v);
                assert_eq!(&s[..s.len() - 1], &lead[..], "concat_last leading dims differ");
                s[s.len() - 1]
            })
            .collect();
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for (&v, &w) in xs.iter().zip(&widths) {
            let d = self.value(v).data();
            for r in 0..rows {
                out[r * total + off..r * total + off + w].copy_from_slice(&d[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(&shape, out);
        self.custom(
            xs,
            value,
            Box::new(move |g, p, _| {
                let gd = g.data();
                let mut off = 0;
                p.iter()
                    .map(|pv| {
                        let w = pv.last_dim();
                        let mut d = vec![0.0; rows * w];
                        for r in 0..rows {
                            d[r * w..(r + 1) * w]
                                .copy_from_slice(&gd[r * total + off..r * total + off + w]);
                        }
                        off += w;
                        Some(Tensor::new(pv.shape(), d))
                    })
                    .collect()
            }),
        )
    }

    /// Channels `[start, start + len)` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Var {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().expect("slice of a rank-0 tensor");
        assert!(start + len <= c, "slice_last out of range");
        let rows = self.value(x).numel() / c;
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&d[r * c + start..r * c + start + len]);
        }
        let mut oshape = shape.clone();
        *oshape.last_mut().unwrap() = len;
        let value = Tensor::new(&oshape, out);
        self.custom(
            &[x],
            value,
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; rows * c];
                let gd = g.data();
                for r in 0..rows {
                    gx[r * c + start..r * c + start + len]
                        .copy_from_slice(&gd[r * len..(r + 1) * len]);
                }
                vec![Some(Tensor::new(&shape, gx))]
            }),
        )
    }

    /// `out[i] = x[idx[i]]`; the backward pass scatter-adds.
    pub fn gather(&mut self, x: Var, idx: Rc<Vec<usize>>, out_shape: &[usize]) -> Var {
        let n: usize = out_shape.iter().product();
        assert_eq!(n, idx.len(), "gather index count does not match output shape");
        let d = self.value(x).data();
        let out: Vec<f64> = idx.iter().map(|&i| d[i]).collect();
        let value = Tensor::new(out_shape, out);
        self.custom(
            &[x],
            value,
            Box::new(move |g, p, _| {
                let mut gx = vec![0.0; p[0].numel()];
                for (gi, &i) in g.data().iter().zip(idx.iter()) {
                    gx[i] += gi;
                }
                vec![Some(Tensor::new(p[0].shape(), gx))]
            }),
        )
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let r = shape.len();
        assert!(r >= 2, "transpose needs rank >= 2");
        let (m, n) = (shape[r - 2], shape[r - 1]);
        let batch = self.value(x).numel() / (m * n);
        let mut idx = Vec::with_capacity(batch * m * n);
        for b in 0..batch {
            for j in 0..n {
                for i in 0..m {
                    idx.push(b * m * n + i * n + j);
                }
            }
        }
        let mut oshape = shape;
        oshape.swap(r - 2, r - 1);
        self.gather(x, Rc::new(idx), &oshape)
    }

    /// Replicate-pads an H×W×C map on the bottom and right.
    pub fn pad_replicate(&mut self, x: Var, pad_h: usize, pad_w: usize) -> Var {
        if pad_h == 0 && pad_w == 0 {
            return x;
        }
        let s = self.shape(x).to_vec();
        let (h, w, c) = (s[0], s[1], s[2]);
        let (oh, ow) = (h + pad_h, w + pad_w);
        let mut idx = Vec::with_capacity(oh * ow * c);
        for y in 0..oh {
            let sy = y.min(h - 1);
            for xx in 0..ow {
                let sx = xx.min(w - 1);
                for ch in 0..c {
                    idx.push((sy * w + sx) * c + ch);
                }
            }
        }
        self.gather(x, Rc::new(idx), &[oh, ow, c])
    }

    /// Top-left `h×w` crop of an H×W×C map.
    pub fn crop(&mut self, x: Var, h: usize, w: usize) -> Var {
        let s = self.shape(x).to_vec();
        if s[0] == h && s[1] == w {
            return x;
        }
        let c = s[2];
        let mut idx = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for xx in 0..w {
                for ch in 0..c {
                    idx.push((y * s[1] + xx) * c + ch);
                }
            }
        }
        self.gather(x, Rc::new(idx), &[h, w, c])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_slice_recovers_parts() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let b = g.leaf(Tensor::new(&[2, 1], vec![5.0, 6.0]));
        let c = g.concat_last(&[a, b]);
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let s = g.slice_last(c, 2, 1);
        assert_eq!(g.value(s).data(), &[5.0, 6.0]);
        let l = g.sum_all(s);
        let grads = g.backward(l);
        assert!(grads.get(a).is_none_or(|t| t.sum() == 0.0));
        assert_eq!(grads.get(b).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn gather_scatter_adds_repeated_indices() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(&[3], vec![1.0, 2.0, 3.0]));
        let y = g.gather(x, Rc::new(vec![0, 0, 2]), &[3]);
        let l = g.sum_all(y);
        let grads = g.backward(l);
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 0.0, 1.0]);
    }

    #[test]
    fn pad_then_crop_is_identity() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(&[2, 3, 1], (0..6).map(f64::from).collect()));
        let p = g.pad_replicate(x, 2, 1);
        assert_eq!(g.shape(p), &[4, 4, 1]);
        assert_eq!(g.value(p).at3(3, 3, 0), 5.0);
        let c = g.crop(p, 2, 3);
        assert_eq!(g.value(c), g.value(x));
    }
}
