//! Synthetic scenes and the acquisition model: Gaussian blur and decimation
//! for the LR HSI, spectral projection and geometric misregistration for the
//! HR reference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::raster::{HsiCube, Raster, RgbImage};

/// Kernel size and standard deviation of the degradation blur.
pub const BLUR_KERNEL_SIZE: usize = 8;
pub const BLUR_SIGMA: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub scene_rank: usize,
    pub seed: u64,
    /// Blob radius of the abundance fields, in pixels.
    pub smoothness: f64,
}

impl SceneSpec {
    pub fn new(height: usize, width: usize, bands: usize, scene_rank: usize, seed: u64) -> Self {
        Self { height, width, bands, scene_rank, seed, smoothness: 6.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.bands == 0 || self.scene_rank == 0 {
            return Err(invalid("scene dimensions and rank must be positive"));
        }
        if self.scene_rank > self.bands {
            return Err(invalid(format!(
                "scene_rank {} exceeds band count {}",
                self.scene_rank, self.bands
            )));
        }
        if !(self.smoothness > 0.0) {
            return Err(invalid("smoothness must be positive"));
        }
        Ok(())
    }
}

/// Softmax sharpness of the material fields; higher gives crisper boundaries.
const FIELD_SHARPNESS: f64 = 5.0;

/// Generates `cube = E_syn · A_syn`: smooth non-negative spectra mixed by a
/// softmax over Gaussian-blob fields.
pub fn synth_scene(spec: &SceneSpec) -> Result<HsiCube> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w, b, r) = (spec.height, spec.width, spec.bands, spec.scene_rank);

    let mut spectra = vec![vec![0.0; b]; r];
    for s in spectra.iter_mut() {
        let base = rng.random_range(0.0..0.2);
        let bumps: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                (rng.random_range(0.0..1.0), rng.random_range(0.08..0.35), rng.random_range(0.2..1.0))
            })
            .collect();
        for (i, v) in s.iter_mut().enumerate() {
            let l = if b > 1 { i as f64 / (b - 1) as f64 } else { 0.5 };
            *v = base
                + bumps
                    .iter()
                    .map(|&(mu, wd, amp)| amp * (-(l - mu).powi(2) / (2.0 * wd * wd)).exp())
                    .sum::<f64>();
        }
        let peak = s.iter().cloned().fold(0.0, f64::max);
        let top = rng.random_range(0.5..1.0);
        for v in s.iter_mut() {
            *v *= top / peak;
        }
    }

    let n_blobs = ((h * w) as f64 / (4.0 * spec.smoothness * spec.smoothness)).ceil().clamp(3.0, 200.0) as usize;
    let mut fields = vec![vec![0.0; h * w]; r];
    if r > 1 {
        for f in fields.iter_mut() {
            for _ in 0..n_blobs {
                let cy = rng.random_range(0.0..h as f64);
                let cx = rng.random_range(0.0..w as f64);
                let rad = spec.smoothness * rng.random_range(0.5..1.5);
                let amp: f64 = rng.sample(StandardNormal);
                let inv = 1.0 / (2.0 * rad * rad);
                for y in 0..h {
                    for x in 0..w {
                        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        f[y * w + x] += amp * (-d2 * inv).exp();
                    }
                }
            }
        }
    }

    let mut data = vec![0.0; h * w * b];
    let mut weights = vec![0.0; r];
    for p in 0..h * w {
        let mx = (0..r).map(|j| fields[j][p]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..r {
            weights[j] = (FIELD_SHARPNESS * (fields[j][p] - mx)).exp();
            z += weights[j];
        }
        for (j, wt) in weights.iter().enumerate() {
            let a = wt / z;
            for (band, v) in spectra[j].iter().enumerate() {
                data[p * b + band] += a * v;
            }
        }
    }
    for v in data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    HsiCube::new(h, w, b, data)
}

/// Normalized 1-D Gaussian taps; an even-length kernel is centred between
/// two pixels.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let centre = (size as f64 - 1.0) / 2.0;
    let mut k: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - centre).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= s;
    }
    k
}

/// Separable convolution with replicated borders; tap `i` reads offset
/// `i - (len - 1) / 2`.
pub fn separable_filter(r: &Raster, taps: &[f64]) -> Raster {
    let (h, w, c) = (r.height(), r.width(), r.channels());
    let half = ((taps.len() - 1) / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let src = r.data();
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let o = (y * w + x) * c;
            for (i, &t) in taps.iter().enumerate() {
                let sx = clamp(x as isize + i as isize - half, w);
                let s = (y * w + sx) * c;
                for ch in 0..c {
                    tmp[o + ch] += t * src[s + ch];
                }
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for (i, &t) in taps.iter().enumerate() {
            let sy = clamp(y as isize + i as isize - half, h);
            for x in 0..w {
                let o = (y * w + x) * c;
                let s = (sy * w + x) * c;
                for ch in 0..c {
                    out[o + ch] += t * tmp[s + ch];
                }
            }
        }
    }
    Raster::new(h, w, c, out).expect("filtering preserves shape")
}

/// Band-wise Gaussian blur followed by stride-`factor` decimation.
///
/// The sample kept for LR pixel `q` is the blurred value whose kernel centre
/// is closest to the centre of the `factor×factor` HR block it summarizes.
pub fn blur_downsample(x: &HsiCube, kernel_size: usize, sigma: f64, factor: usize) -> Result<HsiCube> {
    if factor == 0 || kernel_size == 0 || !(sigma > 0.0) {
        return Err(invalid("blur_downsample needs positive factor, kernel size and sigma"));
    }
    if x.height() % factor != 0 || x.width() % factor != 0 {
        return Err(invalid(format!(
            "factor {factor} does not divide {}x{}",
            x.height(),
            x.width()
        )));
    }
    let blurred = separable_filter(x, &gaussian_taps(kernel_size, sigma));
    if factor == 1 {
        return Ok(HsiCube::from_raster(blurred));
    }
    let half_shift = if kernel_size % 2 == 0 { 1 } else { 0 };
    let offset = ((factor as isize - 1 - half_shift) / 2).max(0) as usize;
    let (oh, ow, c) = (x.height() / factor, x.width() / factor, x.bands());
    let mut out = Vec::with_capacity(oh * ow * c);
    for qy in 0..oh {
        for qx in 0..ow {
            out.extend_from_slice(blurred.pixel(qy * factor + offset, qx * factor + offset));
        }
    }
    HsiCube::new(oh, ow, c, out)
}

/// b×B row-stochastic spectral response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralResponse {
    rows: usize,
    bands: usize,
    data: Vec<f64>,
}

impl SpectralResponse {
    pub fn new(rows: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || bands == 0 || data.len() != rows * bands {
            return Err(invalid("spectral response must be a non-empty rows×bands matrix"));
        }
        if data.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(invalid("spectral response must be non-negative"));
        }
        for r in 0..rows {
            let s: f64 = data[r * bands..(r + 1) * bands].iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(invalid(format!("response row {r} sums to {s}, expected 1")));
            }
        }
        Ok(Self { rows, bands, data })
    }

    /// Three Gaussian sensitivity curves (red, green, blue) across the band range.
    pub fn default_rgb(bands: usize) -> Self {
        let centres = [0.78, 0.5, 0.22];
        let width = 0.16;
        let mut data = Vec::with_capacity(3 * bands);
        for c in centres {
            let row: Vec<f64> = (0..bands)
                .map(|i| {
                    let l = if bands > 1 { i as f64 / (bands - 1) as f64 } else { 0.5 };
                    (-(l - c).powi(2) / (2.0 * width * width)).exp()
                })
                .collect();
            let s: f64 = row.iter().sum();
            data.extend(row.into_iter().map(|v| v / s));
        }
        Self { rows: 3, bands, data }
    }

    /// Rows that each select a single band.
    pub fn one_hot(bands: usize, picks: &[usize]) -> Result<Self> {
        let mut data = vec![0.0; picks.len() * bands];
        for (r, &b) in picks.iter().enumerate() {
            if b >= bands {
                return Err(invalid(format!("band {b} out of range for {bands} bands")));
            }
            data[r * bands + b] = 1.0;
        }
        Self::new(picks.len(), bands, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Per-pixel `rgb = R · spectrum`.
pub fn project_to_rgb(x: &HsiCube, r: &SpectralResponse) -> Result<RgbImage> {
    if r.bands() != x.bands() {
        return Err(invalid(format!(
            "response expects {} bands, cube has {}",
            r.bands(),
            x.bands()
        )));
    }
    let (b, rows) = (x.bands(), r.rows());
    let mut out = Vec::with_capacity(x.pixels() * rows);
    for s in x.data().chunks(b) {
        for row in r.data().chunks(b) {
            out.push(row.iter().zip(s).map(|(a, v)| a * v).sum());
        }
    }
    RgbImage::new(x.height(), x.width(), rows, out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisregistrationSpec {
    /// Row-major 3×3 map from target pixel `(x, y, 1)` to source coordinates.
    pub homography: [f64; 9],
    pub nonrigid_amplitude: f64,
    pub nonrigid_scale: f64,
    pub seed: u64,
}

impl MisregistrationSpec {
    pub fn identity() -> Self {
        Self {
            homography: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            nonrigid_amplitude: 0.0,
            nonrigid_scale: 8.0,
            seed: 0,
        }
    }

    /// Output pixel `p` samples the input at `p + (dx, dy)`.
    pub fn translation(dx: f64, dy: f64) -> Self {
        let mut s = Self::identity();
        s.homography[2] = dx;
        s.homography[5] = dy;
        s
    }

    /// A seeded warp whose magnitude scales linearly with `level` (pixels):
    /// translation of length `level`, rotation up to `3° · level / 8` about
    /// the image centre, projective terms up to `1e-4 · level / 8` and a
    /// non-rigid field of amplitude `level / 4`. Level 8 is the default
    /// "unregistered" setting; level 0 is the identity.
    pub fn at_level(level: f64, seed: u64, width: usize, height: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d69_7372_6567);
        let t = level / 8.0;
        let angle = rng.random_range(-1.0..1.0) * 3f64.to_radians() * t;
        let dir = rng.random_range(0.0..std::f64::consts::TAU);
        let (tx, ty) = (level * dir.cos(), level * dir.sin());
        let g = rng.random_range(-1.0..1.0) * 1e-4 * t;
        let hh = rng.random_range(-1.0..1.0) * 1e-4 * t;
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let (c, s) = (angle.cos(), angle.sin());
        // Rotation about the centre, then translation, then a mild projective row.
        let a = [c, -s, cx - c * cx + s * cy + tx, s, c, cy - s * cx - c * cy + ty];
        let homography = [a[0], a[1], a[2], a[3], a[4], a[5], g, hh, 1.0 - g * cx - hh * cy];
        let mut spec = Self { homography, nonrigid_amplitude: level / 4.0, nonrigid_scale: 8.0, seed };
        spec.normalize();
        spec
    }

    fn normalize(&mut self) {
        let h33 = self.homography[8];
        if h33 != 0.0 && h33 != 1.0 {
            for v in self.homography.iter_mut() {
                *v /= h33;
            }
        }
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.homography;
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6])
    }

    pub fn validate(&self) -> Result<()> {
        if self.homography.iter().any(|v| !v.is_finite()) {
            return Err(invalid("homography entries must be finite"));
        }
        if self.homography[8] == 0.0 {
            return Err(invalid("homography h33 must be non-zero"));
        }
        if self.determinant().abs() <= 1e-8 {
            return Err(invalid("homography is singular"));
        }
        if !(self.nonrigid_amplitude >= 0.0) {
            return Err(invalid("nonrigid_amplitude must be non-negative"));
        }
        if self.nonrigid_amplitude > 0.0 && !(self.nonrigid_scale > 0.0) {
            return Err(invalid("nonrigid_scale must be positive"));
        }
        Ok(())
    }
}

/// Smooth random displacement: Gaussian-filtered white noise rescaled so the
/// largest component magnitude equals `amplitude`.
fn displacement_field(h: usize, w: usize, spec: &MisregistrationSpec) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise: Vec<f64> = (0..h * w * 2).map(|_| rng.sample(StandardNormal)).collect();
    let sigma = spec.nonrigid_scale;
    let size = (6.0 * sigma).ceil() as usize | 1;
    let raster = Raster::new(h, w, 2, noise).expect("noise is finite");
    let smooth = separable_filter(&raster, &gaussian_taps(size, sigma));
    let peak = smooth.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { spec.nonrigid_amplitude / peak } else { 0.0 };
    smooth.data().iter().map(|v| v * scale).collect()
}

/// Bilinear sample with replicated borders, writing all channels to `out`.
pub(crate) fn sample_clamped(r: &Raster, y: f64, x: f64, out: &mut [f64]) {
    let (h, w, c) = (r.height(), r.width(), r.channels());
    let (fy, fx) = (y.floor(), x.floor());
    let (ty, tx) = (y - fy, x - fx);
    let cl = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
    let (y0, y1) = (cl(fy, h), cl(fy + 1.0, h));
    let (x0, x1) = (cl(fx, w), cl(fx + 1.0, w));
    let d = r.data();
    for ch in 0..c {
        let v00 = d[(y0 * w + x0) * c + ch];
        let v01 = d[(y0 * w + x1) * c + ch];
        let v10 = d[(y1 * w + x0) * c + ch];
        let v11 = d[(y1 * w + x1) * c + ch];
        out[ch] = if ty == 0.0 && tx == 0.0 {
            v00
        } else {
            (1.0 - ty) * ((1.0 - tx) * v00 + tx * v01) + ty * ((1.0 - tx) * v10 + tx * v11)
        };
    }
}

/// Inverse warp: output pixel `p` samples the input at `H(p) + d(p)`.
pub fn misregister(img: &RgbImage, spec: &MisregistrationSpec) -> Result<RgbImage> {
    spec.validate()?;
    let mut spec = spec.clone();
    spec.normalize();
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let disp = if spec.nonrigid_amplitude > 0.0 { Some(displacement_field(h, w, &spec)) } else { None };
    let m = spec.homography;
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let hw = m[6] * xf + m[7] * yf + m[8];
            let mut sx = (m[0] * xf + m[1] * yf + m[2]) / hw;
            let mut sy = (m[3] * xf + m[4] * yf + m[5]) / hw;
            if let Some(d) = &disp {
                sx += d[(y * w + x) * 2];
                sy += d[(y * w + x) * 2 + 1];
            }
            let o = (y * w + x) * c;
            sample_clamped(img, sy, sx, &mut out[o..o + c]);
        }
    }
    RgbImage::new(h, w, c, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_is_deterministic_and_bounded() {
        let spec = SceneSpec::new(24, 20, 10, 4, 7);
        let a = synth_scene(&spec).unwrap();
        let b = synth_scene(&spec).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let other = synth_scene(&SceneSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn rank_above_bands_rejected() {
        let spec = SceneSpec::new(8, 8, 3, 4, 1);
        assert!(synth_scene(&spec).is_err());
    }

    #[test]
    fn even_kernel_is_symmetric_about_midpoint() {
        let k = gaussian_taps(8, 3.0);
        for i in 0..4 {
            assert!((k[i] - k[7 - i]).abs() < 1e-15);
        }
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn blur_shapes_and_divisibility() {
        let x = HsiCube::new(64, 64, 2, vec![0.3; 64 * 64 * 2]).unwrap();
        let y = blur_downsample(&x, 8, 3.0, 4).unwrap();
        assert_eq!(y.shape(), [16, 16, 2]);
        assert!(y.data().iter().all(|v| (v - 0.3).abs() < 1e-12));
        assert!(blur_downsample(&x, 8, 3.0, 3).is_err());
    }

    #[test]
    fn response_validation() {
        assert!(SpectralResponse::new(1, 2, vec![0.5, 0.6]).is_err());
        assert!(SpectralResponse::new(1, 2, vec![-0.5, 1.5]).is_err());
        let d = SpectralResponse::default_rgb(31);
        for row in d.data().chunks(31) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_homography_rejected() {
        let mut s = MisregistrationSpec::identity();
        s.homography = [1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 1.0];
        let img = RgbImage::new(2, 2, 1, vec![0.0; 4]).unwrap();
        assert!(misregister(&img, &s).is_err());
    }

    #[test]
    fn level_zero_is_identity() {
        let s = MisregistrationSpec::at_level(0.0, 3, 32, 32);
        let img = RgbImage::new(4, 5, 3, (0..60).map(|v| v as f64 / 60.0).collect()).unwrap();
        assert_eq!(misregister(&img, &s).unwrap(), img);
    }
}
