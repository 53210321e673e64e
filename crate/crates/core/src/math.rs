//! Thin wrappers over `libm` so the rest of the crate reads like std float code.

#![allow(dead_code)]

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}

pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

pub fn round(x: f64) -> f64 {
    libm::round(x)
}

pub fn hypot(x: f64, y: f64) -> f64 {
    libm::hypot(x, y)
}

pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

pub fn pow(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

/// Euclidean norm of a slice.
pub fn l2_norm(v: &[f64]) -> f64 {
    sqrt(v.iter().map(|x| x * x).sum())
}

/// Dot product; panics on length mismatch.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity of two vectors, 0.0 when either is all-zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na <= 0.0 || nb <= 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Wrap an angle into [0, 2π).
pub fn wrap_angle(a: f64) -> f64 {
    let tau = 2.0 * core::f64::consts::PI;
    let mut a = a % tau;
    if a < 0.0 {
        a += tau;
    }
    a
}

/// Smallest absolute difference between two angles, result in [0, π].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let tau = 2.0 * core::f64::consts::PI;
    let d = abs(wrap_angle(a) - wrap_angle(b));
    if d > tau / 2.0 {
        tau - d
    } else {
        d
    }
}
