//! Channel-last rasters: hyperspectral cubes and RGB references.

use std::ops::{Deref, DerefMut};

use unmixsr_autodiff::Tensor;

use crate::error::{invalid, Result};

/// Row-major H×W×C raster of finite reals (band-interleaved-by-pixel).
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(invalid(format!(
                "raster dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(invalid(format!(
                "raster {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("raster value at index {i} is not finite")));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// The spectrum (all channels) at one pixel.
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    /// A single channel as an H×W×1 raster.
    pub fn channel(&self, c: usize) -> Raster {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Raster { height: self.height, width: self.width, channels: 1, data }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.height, self.width, self.channels], self.data.clone())
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 {
            return Err(invalid(format!("expected an H×W×C tensor, got shape {s:?}")));
        }
        Self::new(s[0], s[1], s[2], t.data().to_vec())
    }

    pub fn clamped(&self, lo: f64, hi: f64) -> Raster {
        let mut r = self.clone();
        for v in r.data.iter_mut() {
            *v = v.clamp(lo, hi);
        }
        r
    }
}

macro_rules! raster_newtype {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(Raster);

        impl $name {
            pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
                Raster::new(height, width, channels, data).map(Self)
            }

            pub fn from_raster(r: Raster) -> Self {
                Self(r)
            }

            pub fn into_raster(self) -> Raster {
                self.0
            }

            pub fn raster(&self) -> &Raster {
                &self.0
            }
        }

        impl Deref for $name {
            type Target = Raster;
            fn deref(&self) -> &Raster {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut Raster {
                &mut self.0
            }
        }
    };
}

raster_newtype!(
    /// H×W×B reflectance cube.
    HsiCube
);

impl HsiCube {
    pub fn bands(&self) -> usize {
        self.channels()
    }
}

raster_newtype!(
    /// H×W×b reference image, nominally b = 3 with values in [0, 1].
    RgbImage
);
