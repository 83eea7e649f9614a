//! Central finite-difference gradient checking.

/// Outcome of comparing one analytic derivative with its numeric estimate.
#[derive(Debug, Clone, Copy)]
pub struct GradSample {
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    /// `|a - n| / max(|a|, |n|)`, or 0 when both are below `floor`.
    pub fn rel_error(&self, floor: f64) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale < floor {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

/// Central difference `(f(x + h) - f(x - h)) / 2h` of a scalar function of one
/// coordinate.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Largest relative error over a set of samples.
pub fn worst(samples: &[GradSample], floor: f64) -> f64 {
    samples.iter().map(|s| s.rel_error(floor)).fold(0.0, f64::max)
}
