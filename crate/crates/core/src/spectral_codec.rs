//! SVD spectral decoupling of an upsampled cube into endmembers and
//! abundances, and the residual mixing that maps abundances back to bands.

use nalgebra::DMatrix;
use unmixsr_autodiff::gemm;

use crate::error::{invalid, Error, Result};
use crate::raster::{HsiCube, Raster};

/// Catmull-Rom cubic convolution kernel (a = -0.5).
fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Four (index, weight) taps per output sample, half-pixel centres, edge clamp.
fn cubic_taps(n_in: usize, n_out: usize) -> Vec<[(usize, f64); 4]> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let s = (o as f64 + 0.5) * scale - 0.5;
            let base = s.floor();
            let t = s - base;
            let base = base as isize;
            let clamp = |i: isize| i.clamp(0, n_in as isize - 1) as usize;
            [
                (clamp(base - 1), cubic_weight(1.0 + t)),
                (clamp(base), cubic_weight(t)),
                (clamp(base + 1), cubic_weight(1.0 - t)),
                (clamp(base + 2), cubic_weight(2.0 - t)),
            ]
        })
        .collect()
}

/// Separable bicubic resize of every channel.
pub fn bicubic_resize(r: &Raster, out_h: usize, out_w: usize) -> Result<Raster> {
    let (h, w, c) = (r.height(), r.width(), r.channels());
    let tx = cubic_taps(w, out_w);
    let ty = cubic_taps(h, out_h);
    let src = r.data();
    let mut horiz = vec![0.0; h * out_w * c];
    for y in 0..h {
        for (ox, taps) in tx.iter().enumerate() {
            let o = (y * out_w + ox) * c;
            for &(ix, wt) in taps {
                let s = (y * w + ix) * c;
                for ch in 0..c {
                    horiz[o + ch] += wt * src[s + ch];
                }
            }
        }
    }
    let mut out = vec![0.0; out_h * out_w * c];
    for (oy, taps) in ty.iter().enumerate() {
        for ox in 0..out_w {
            let o = (oy * out_w + ox) * c;
            for &(iy, wt) in taps {
                let s = (iy * out_w + ox) * c;
                for ch in 0..c {
                    out[o + ch] += wt * horiz[s + ch];
                }
            }
        }
    }
    Raster::new(out_h, out_w, c, out)
}

/// Band-wise bicubic upsampling by an integer factor.
pub fn upsample(x: &HsiCube, factor: usize) -> Result<HsiCube> {
    if factor == 0 {
        return Err(invalid("upsampling factor must be positive"));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    bicubic_resize(x, x.height() * factor, x.width() * factor).map(HsiCube::from_raster)
}

/// B×K spectral basis with orthonormal columns, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix {
    bands: usize,
    rank: usize,
    data: Vec<f64>,
}

impl EndmemberMatrix {
    pub fn new(bands: usize, rank: usize, data: Vec<f64>) -> Result<Self> {
        if rank == 0 || rank > bands {
            return Err(invalid(format!("endmember rank {rank} outside 1..={bands}")));
        }
        if data.len() != bands * rank {
            return Err(invalid("endmember data length does not match B×K"));
        }
        Ok(Self { bands, rank, data })
    }

    /// The B×B identity, used when the network runs directly in band space.
    pub fn identity(bands: usize) -> Self {
        let mut data = vec![0.0; bands * bands];
        for b in 0..bands {
            data[b * bands + b] = 1.0;
        }
        Self { bands, rank: bands, data }
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Row-major B×K entries.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, band: usize, col: usize) -> f64 {
        self.data[band * self.rank + col]
    }

    /// Column `j` as a B-vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.bands).map(|b| self.get(b, j)).collect()
    }

    /// K×B transpose, row-major.
    pub fn transposed(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.data.len()];
        for b in 0..self.bands {
            for j in 0..self.rank {
                t[j * self.bands + b] = self.data[b * self.rank + j];
            }
        }
        t
    }
}

/// H×W×K abundance coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceMap(pub Raster);

impl AbundanceMap {
    pub fn rank(&self) -> usize {
        self.0.channels()
    }

    pub fn raster(&self) -> &Raster {
        &self.0
    }
}

/// Economy SVD of the B×HW matricization: `X = U diag(S) V_t`.
///
/// `u` is B×B (column-major), `s` holds min(B, HW) values in non-increasing
/// order and `v_t` the matching min(B, HW) rows of the right factor.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v_t: DMatrix<f64>,
}

/// Left singular vectors, singular values and right factor of an H×W×B cube,
/// sorted by decreasing singular value and sign-normalized so the
/// largest-magnitude entry of every left vector is positive.
pub fn svd(x: &HsiCube) -> Result<SvdFactors> {
    let (bands, pixels) = (x.bands(), x.pixels());
    if x.data().iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroInput("cannot unmix an all-zero cube".into()));
    }
    // Pad with zero columns when HW < B so U comes out square.
    let cols = pixels.max(bands);
    let d = x.data();
    let m = DMatrix::from_fn(bands, cols, |b, p| if p < pixels { d[p * bands + b] } else { 0.0 });
    let dec = m.svd(true, true);
    let (u_raw, vt_raw) = match (dec.u, dec.v_t) {
        (Some(u), Some(v)) => (u, v),
        _ => return Err(Error::Numerical("SVD did not return singular vectors".into())),
    };
    let n = dec.singular_values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        dec.singular_values[b].partial_cmp(&dec.singular_values[a]).expect("NaN singular value")
    });
    let keep = bands.min(pixels);
    let mut u = DMatrix::zeros(bands, bands);
    let mut v_t = DMatrix::zeros(keep, pixels);
    let mut s = Vec::with_capacity(keep);
    for (j, &src) in order.iter().enumerate().take(bands) {
        let col = u_raw.column(src);
        let mut pivot = 0;
        for b in 1..bands {
            if col[b].abs() > col[pivot].abs() {
                pivot = b;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for b in 0..bands {
            u[(b, j)] = sign * col[b];
        }
        if j < keep {
            s.push(dec.singular_values[src]);
            for p in 0..pixels {
                v_t[(j, p)] = sign * vt_raw[(src, p)];
            }
        }
    }
    Ok(SvdFactors { u, s, v_t })
}

/// Initial abundance `A = Eᵀ X` for a given basis, returned H×W×K.
pub fn project(x: &HsiCube, e: &EndmemberMatrix) -> Result<AbundanceMap> {
    if x.bands() != e.bands() {
        return Err(invalid(format!(
            "cube has {} bands but endmembers have {}",
            x.bands(),
            e.bands()
        )));
    }
    let (p, b, k) = (x.pixels(), e.bands(), e.rank());
    let mut a = vec![0.0; p * k];
    gemm(p, b, k, x.data(), false, e.data(), false, &mut a, 0.0);
    Ok(AbundanceMap(Raster::new(x.height(), x.width(), k, a)?))
}

/// Unmixes an upsampled cube with the first `k` left singular vectors.
pub fn svd_unmix(x_up: &HsiCube, k: usize) -> Result<(EndmemberMatrix, AbundanceMap, SvdFactors)> {
    let bands = x_up.bands();
    if k == 0 || k > bands {
        return Err(invalid(format!("rank {k} outside 1..={bands}")));
    }
    let f = svd(x_up)?;
    let mut e = vec![0.0; bands * k];
    for b in 0..bands {
        for j in 0..k {
            e[b * k + j] = f.u[(b, j)];
        }
    }
    let e = EndmemberMatrix::new(bands, k, e)?;
    let a = project(x_up, &e)?;
    Ok((e, a, f))
}

/// Residual mixing `Y_res = E Â`, reshaped to H×W×B.
pub fn mix(e: &EndmemberMatrix, a_hat: &AbundanceMap) -> Result<HsiCube> {
    if a_hat.rank() != e.rank() {
        return Err(invalid(format!(
            "abundance has {} channels but the basis has rank {}",
            a_hat.rank(),
            e.rank()
        )));
    }
    let r = a_hat.raster();
    let (p, k, b) = (r.pixels(), e.rank(), e.bands());
    let mut y = vec![0.0; p * b];
    gemm(p, k, b, r.data(), false, &e.transposed(), false, &mut y, 0.0);
    HsiCube::new(r.height(), r.width(), b, y)
}

/// `Y = Y_res + X↑`, optionally clamped to [0, 1].
pub fn reconstruct(y_res: &HsiCube, x_up: &HsiCube, clamp: bool) -> Result<HsiCube> {
    if !y_res.same_shape(x_up) {
        return Err(invalid(format!(
            "shape mismatch: residual {:?} vs upsampled {:?}",
            y_res.shape(),
            x_up.shape()
        )));
    }
    let data = y_res
        .data()
        .iter()
        .zip(x_up.data())
        .map(|(a, b)| if clamp { (a + b).clamp(0.0, 1.0) } else { a + b })
        .collect();
    HsiCube::new(y_res.height(), y_res.width(), y_res.bands(), data)
}

/// Relative Frobenius error `‖a − b‖ / ‖b‖`.
pub fn relative_error(a: &Raster, b: &Raster) -> f64 {
    let num: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.data().iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(h: usize, w: usize, b: usize, f: impl Fn(usize, usize, usize) -> f64) -> HsiCube {
        let mut d = Vec::with_capacity(h * w * b);
        for y in 0..h {
            for x in 0..w {
                for c in 0..b {
                    d.push(f(y, x, c));
                }
            }
        }
        HsiCube::new(h, w, b, d).unwrap()
    }

    #[test]
    fn catmull_rom_partition_of_unity() {
        for t in [0.0, 0.125, 0.375, 0.5, 0.9] {
            let s = cubic_weight(1.0 + t) + cubic_weight(t) + cubic_weight(1.0 - t) + cubic_weight(2.0 - t);
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn upsample_constant_and_identity() {
        let c = cube(3, 5, 2, |_, _, _| 0.5);
        let up = upsample(&c, 4).unwrap();
        assert_eq!(up.shape(), [12, 20, 2]);
        assert!(up.data().iter().all(|v| (v - 0.5).abs() < 1e-6));
        let r = cube(3, 4, 3, |y, x, b| (y * 7 + x * 3 + b) as f64 * 0.01);
        assert_eq!(upsample(&r, 1).unwrap(), r);
        assert!(matches!(upsample(&r, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn unmix_rejects_bad_rank_and_zero_cube() {
        let c = cube(4, 4, 3, |y, x, _| (y + x) as f64);
        assert!(matches!(svd_unmix(&c, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(svd_unmix(&c, 4), Err(Error::InvalidArgument(_))));
        let z = cube(4, 4, 3, |_, _, _| 0.0);
        assert!(matches!(svd_unmix(&z, 2), Err(Error::ZeroInput(_))));
    }

    #[test]
    fn mix_small_cases() {
        let e = EndmemberMatrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        let a = AbundanceMap(Raster::new(1, 1, 1, vec![3.0]).unwrap());
        assert_eq!(mix(&e, &a).unwrap().data(), &[3.0, 6.0]);
        let zero = AbundanceMap(Raster::filled(2, 2, 1, 0.0).unwrap());
        assert!(mix(&e, &zero).unwrap().data().iter().all(|&v| v == 0.0));
        let bad = AbundanceMap(Raster::filled(2, 2, 2, 0.0).unwrap());
        assert!(matches!(mix(&e, &bad), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn reconstruct_identities() {
        let a = cube(2, 3, 2, |y, x, b| (y * 6 + x * 2 + b) as f64 * 0.1);
        let z = cube(2, 3, 2, |_, _, _| 0.0);
        assert_eq!(reconstruct(&z, &a, false).unwrap(), a);
        assert_eq!(reconstruct(&a, &z, false).unwrap(), a);
        let clamped = reconstruct(&a, &a, true).unwrap();
        assert!(clamped.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let other = cube(3, 3, 2, |_, _, _| 0.0);
        assert!(reconstruct(&a, &other, false).is_err());
    }

    #[test]
    fn wide_band_small_image_still_gives_square_u() {
        let c = cube(1, 2, 5, |_, x, b| ((x + 1) * (b + 2)) as f64 + (b * b) as f64 * 0.1);
        let (e, _, f) = svd_unmix(&c, 5).unwrap();
        assert_eq!(f.u.shape(), (5, 5));
        assert_eq!(f.s.len(), 2);
        let gram = f.u.transpose() * &f.u;
        assert!((gram - DMatrix::<f64>::identity(5, 5)).amax() < 1e-10);
        assert_eq!(e.rank(), 5);
    }
}
