//! PSNR, SSIM and SAM quality metrics.

use serde::{Serialize, Serializer};

use crate::error::{invalid, Error, Result};
use crate::raster::Raster;
use crate::scene_sim::{gaussian_taps, separable_filter};

/// A PSNR value; identical inputs give `+inf`, written as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Db(pub f64);

impl Serialize for Db {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() && self.0 > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl std::fmt::Display for Db {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{:.4}", self.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub psnr: Db,
    pub ssim: f64,
    pub sam: f64,
}

fn check(a: &Raster, b: &Raster) -> Result<()> {
    if !a.same_shape(b) {
        return Err(invalid(format!("metric inputs differ: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn mse(a: &Raster, b: &Raster) -> Result<f64> {
    check(a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.data().len() as f64)
}

pub fn psnr(a: &Raster, b: &Raster, peak: f64) -> Result<Db> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(Db(f64::INFINITY));
    }
    Ok(Db(10.0 * (peak * peak / m).log10()))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Mean SSIM per band (Gaussian window, replicated borders), averaged over bands.
pub fn ssim(a: &Raster, b: &Raster) -> Result<f64> {
    check(a, b)?;
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (c1, c2) = ((K1 * 1.0f64).powi(2), (K2 * 1.0f64).powi(2));
    let prod = |f: &dyn Fn(f64, f64) -> f64| {
        let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
        Raster::new(a.height(), a.width(), a.channels(), data).expect("same shape")
    };
    let mu_a = separable_filter(a, &taps);
    let mu_b = separable_filter(b, &taps);
    let e_aa = separable_filter(&prod(&|x, _| x * x), &taps);
    let e_bb = separable_filter(&prod(&|_, y| y * y), &taps);
    let e_ab = separable_filter(&prod(&|x, y| x * y), &taps);
    let c = a.channels();
    let mut per_band = vec![0.0; c];
    for i in 0..a.data().len() {
        let (ma, mb) = (mu_a.data()[i], mu_b.data()[i]);
        let va = e_aa.data()[i] - ma * ma;
        let vb = e_bb.data()[i] - mb * mb;
        let cov = e_ab.data()[i] - ma * mb;
        per_band[i % c] += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    let n = a.pixels() as f64;
    Ok(per_band.iter().map(|s| s / n).sum::<f64>() / c as f64)
}

/// Mean spectral angle in radians and the number of skipped zero-norm pixels.
pub fn sam_with_skipped(a: &Raster, b: &Raster) -> Result<(f64, usize)> {
    check(a, b)?;
    let c = a.channels();
    let (mut total, mut n, mut skipped) = (0.0, 0usize, 0usize);
    for (sa, sb) in a.data().chunks(c).zip(b.data().chunks(c)) {
        let na = sa.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = sb.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            skipped += 1;
            continue;
        }
        // 2·atan2(|â - b̂|, |â + b̂|) equals acos(â·b̂) but stays accurate near 0 and π.
        let (mut d, mut s) = (0.0, 0.0);
        for (x, y) in sa.iter().zip(sb) {
            let (x, y) = (x / na, y / nb);
            d += (x - y) * (x - y);
            s += (x + y) * (x + y);
        }
        total += 2.0 * d.sqrt().atan2(s.sqrt());
        n += 1;
    }
    if n == 0 {
        return Err(Error::DegenerateInput("every pixel has a zero-norm spectrum".into()));
    }
    Ok((total / n as f64, skipped))
}

pub fn sam(a: &Raster, b: &Raster) -> Result<f64> {
    sam_with_skipped(a, b).map(|(s, _)| s)
}

pub fn report(pred: &Raster, truth: &Raster) -> Result<MetricReport> {
    Ok(MetricReport { psnr: psnr(pred, truth, 1.0)?, ssim: ssim(pred, truth)?, sam: sam(pred, truth)? })
}
