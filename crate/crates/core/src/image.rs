//! Row-major grayscale images with intensities in [0, 1].

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major, `width * height` values in [0, 1].
    pub values: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width * height, "value count must match dimensions");
        Self {
            width,
            height,
            values,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v;
    }

    /// Pixel value with coordinates clamped into bounds.
    pub fn get_clamped(&self, x: i64, y: i64) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let x = x.clamp(0, self.width as i64 - 1) as usize;
        let y = y.clamp(0, self.height as i64 - 1) as usize;
        self.get(x, y)
    }

    /// Bilinear sample at continuous pixel-center coordinates (x=0 is the
    /// center of the first column). Coordinates outside the image clamp to
    /// the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = math::floor(x);
        let y0 = math::floor(y);
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0 as i64;
        let y0 = y0 as i64;
        let v00 = self.get_clamped(x0, y0);
        let v10 = self.get_clamped(x0 + 1, y0);
        let v01 = self.get_clamped(x0, y0 + 1);
        let v11 = self.get_clamped(x0 + 1, y0 + 1);
        v00 * (1.0 - fx) * (1.0 - fy)
            + v10 * fx * (1.0 - fy)
            + v01 * (1.0 - fx) * fy
            + v11 * fx * fy
    }

    /// Like [`sample_bilinear`](Self::sample_bilinear) but reads 0 outside
    /// the image instead of clamping.
    pub fn sample_bilinear_zero(&self, x: f64, y: f64) -> f64 {
        let read = |xi: i64, yi: i64| -> f64 {
            if xi < 0 || yi < 0 || xi >= self.width as i64 || yi >= self.height as i64 {
                0.0
            } else {
                self.get(xi as usize, yi as usize)
            }
        };
        let x0 = math::floor(x);
        let y0 = math::floor(y);
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0 as i64;
        let y0 = y0 as i64;
        read(x0, y0) * (1.0 - fx) * (1.0 - fy)
            + read(x0 + 1, y0) * fx * (1.0 - fy)
            + read(x0, y0 + 1) * (1.0 - fx) * fy
            + read(x0 + 1, y0 + 1) * fx * fy
    }

    /// Separable Gaussian smoothing with reflected borders. `sigma <= 0`
    /// returns a copy.
    pub fn gaussian_smoothed(&self, sigma: f64) -> Image {
        if sigma <= 0.0 || self.is_empty() {
            return self.clone();
        }
        let kernel = gaussian_kernel(sigma);
        let r = (kernel.len() / 2) as i64;
        let reflect = |i: i64, n: i64| -> i64 {
            // reflect-101 style without repeating the edge sample
            let mut i = i;
            if n == 1 {
                return 0;
            }
            let period = 2 * (n - 1);
            i = i.rem_euclid(period);
            if i >= n {
                period - i
            } else {
                i
            }
        };
        let mut horiz = Image::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let xi = reflect(x as i64 + k as i64 - r, self.width as i64);
                    acc += w * self.get(xi as usize, y);
                }
                horiz.set(x, y, acc);
            }
        }
        let mut out = Image::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let yi = reflect(y as i64 + k as i64 - r, self.height as i64);
                    acc += w * horiz.get(x, yi as usize);
                }
                out.set(x, y, acc);
            }
        }
        out
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// Normalized 1D Gaussian kernel truncated at 3σ.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = math::ceil(3.0 * sigma).max(1.0) as usize;
    let mut k = Vec::with_capacity(2 * r + 1);
    for i in 0..=(2 * r) {
        let d = i as f64 - r as f64;
        k.push(math::exp(-d * d / (2.0 * sigma * sigma)));
    }
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_at_centers_is_exact() {
        let img = Image::from_values(2, 2, vec![0.0, 1.0, 0.5, 0.25]);
        assert_eq!(img.sample_bilinear(0.0, 0.0), 0.0);
        assert_eq!(img.sample_bilinear(1.0, 0.0), 1.0);
        assert_eq!(img.sample_bilinear(0.0, 1.0), 0.5);
        assert!((img.sample_bilinear(0.5, 0.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gaussian_preserves_mass_on_uniform() {
        let img = Image::from_values(5, 5, vec![0.5; 25]);
        let sm = img.gaussian_smoothed(1.0);
        for v in &sm.values {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }
}
