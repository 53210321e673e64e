//! Running mean/variance accumulators (Welford) used for the state-parameter
//! statistics recorded on composition slots.

use crate::math;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Incremental mean/variance of a scalar stream.
///
/// The incremental mean is exact (up to float rounding) with respect to the
/// batch mean of the same values, which downstream code relies on when
/// averaging absorbed data pieces.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    /// Sum of squared deviations from the current mean.
    pub m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    /// A degenerate accumulator holding a single value.
    pub fn from_value(x: f64) -> Self {
        let mut s = Self::new();
        s.push(x);
        s
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        let delta2 = x - self.mean;
        self.m2 += delta * delta2;
    }

    /// Population variance; 0 for fewer than two observations.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0)
        }
    }

    pub fn std_dev(&self) -> f64 {
        math::sqrt(self.variance())
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_batch_mean_and_variance() {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0, -3.5];
        let mut s = RunningStats::new();
        for &x in &xs {
            s.push(x);
        }
        let mean: f64 = xs.iter().sum::<f64>() / xs.len() as f64;
        let var: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
        assert!((s.mean - mean).abs() < 1e-12);
        assert!((s.variance() - var).abs() < 1e-12);
        assert_eq!(s.count, xs.len() as u64);
    }

    #[test]
    fn single_value_has_zero_variance() {
        let s = RunningStats::from_value(3.25);
        assert_eq!(s.mean, 3.25);
        assert_eq!(s.variance(), 0.0);
    }
}
