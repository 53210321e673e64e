//! Anti-aliased rasterization of analytic strokes (segments, arcs, circles,
//! disks). Shapes are drawn with a soft 1-pixel edge so the singularity
//! positions of the drawn geometry stay at their analytic locations.

use crate::image::Image;
use crate::math;

/// Default stroke width used by the shape library.
pub const STROKE_WIDTH: f64 = 1.5;

fn splat(img: &mut Image, x: usize, y: usize, v: f64) {
    let old = img.get(x, y);
    if v > old {
        img.set(x, y, v.min(1.0));
    }
}

/// Linear 1-px anti-aliased coverage from a signed distance to the stroke
/// boundary (`d` = distance to centerline, `hw` = half stroke width).
fn coverage(d: f64, hw: f64) -> f64 {
    (hw + 0.5 - d).clamp(0.0, 1.0)
}

#[allow(clippy::too_many_arguments)]
fn paint_region<F: Fn(f64, f64) -> f64>(
    img: &mut Image,
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    half_width: f64,
    intensity: f64,
    dist: F,
) {
    let pad = half_width + 1.5;
    let xa = math::floor(x0 - pad).max(0.0) as usize;
    let ya = math::floor(y0 - pad).max(0.0) as usize;
    let xb = (math::ceil(x1 + pad) as usize).min(img.width.saturating_sub(1));
    let yb = (math::ceil(y1 + pad) as usize).min(img.height.saturating_sub(1));
    if img.is_empty() {
        return;
    }
    for y in ya..=yb {
        for x in xa..=xb {
            let d = dist(x as f64, y as f64);
            let c = coverage(d, half_width);
            if c > 0.0 {
                splat(img, x, y, c * intensity);
            }
        }
    }
}

/// Distance from (px, py) to the segment (ax, ay)-(bx, by).
pub fn segment_distance(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let vx = bx - ax;
    let vy = by - ay;
    let wx = px - ax;
    let wy = py - ay;
    let len2 = vx * vx + vy * vy;
    let t = if len2 <= 0.0 {
        0.0
    } else {
        ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0)
    };
    math::hypot(px - (ax + t * vx), py - (ay + t * vy))
}

pub fn draw_segment(
    img: &mut Image,
    a: (f64, f64),
    b: (f64, f64),
    width: f64,
    intensity: f64,
) {
    let hw = width / 2.0;
    paint_region(
        img,
        a.0.min(b.0),
        a.1.min(b.1),
        a.0.max(b.0),
        a.1.max(b.1),
        hw,
        intensity,
        |x, y| segment_distance(x, y, a.0, a.1, b.0, b.1),
    );
}

/// Circular arc centered at `c`, radius `r`, swept counter-clockwise from
/// `a0` to `a1` (radians, a1 may exceed 2π to wrap).
pub fn draw_arc(
    img: &mut Image,
    c: (f64, f64),
    r: f64,
    a0: f64,
    a1: f64,
    width: f64,
    intensity: f64,
) {
    let hw = width / 2.0;
    let span = a1 - a0;
    let p0 = (c.0 + r * math::cos(a0), c.1 + r * math::sin(a0));
    let p1 = (c.0 + r * math::cos(a1), c.1 + r * math::sin(a1));
    paint_region(
        img,
        c.0 - r,
        c.1 - r,
        c.0 + r,
        c.1 + r,
        hw,
        intensity,
        |x, y| {
            let dx = x - c.0;
            let dy = y - c.1;
            let ang = math::atan2(dy, dx);
            // wrap the angle into [a0, a0 + 2π) to test span membership
            let mut rel = ang - a0;
            let tau = 2.0 * core::f64::consts::PI;
            rel = rel - tau * math::floor(rel / tau);
            if rel <= span {
                math::abs(math::hypot(dx, dy) - r)
            } else {
                let d0 = math::hypot(x - p0.0, y - p0.1);
                let d1 = math::hypot(x - p1.0, y - p1.1);
                d0.min(d1)
            }
        },
    );
}

pub fn draw_circle(img: &mut Image, c: (f64, f64), r: f64, width: f64, intensity: f64) {
    let hw = width / 2.0;
    paint_region(
        img,
        c.0 - r,
        c.1 - r,
        c.0 + r,
        c.1 + r,
        hw,
        intensity,
        |x, y| math::abs(math::hypot(x - c.0, y - c.1) - r),
    );
}

/// Filled disk.
pub fn draw_disk(img: &mut Image, c: (f64, f64), r: f64, intensity: f64) {
    paint_region(
        img,
        c.0 - r,
        c.1 - r,
        c.0 + r,
        c.1 + r,
        0.0,
        intensity,
        |x, y| (math::hypot(x - c.0, y - c.1) - r).max(0.0),
    );
}

/// Fill a half-plane: pixels with `nx*x + ny*y >= d` get `intensity`,
/// with a 1-px anti-aliased boundary. Used for the color-edge singularity
/// construction.
pub fn draw_half_plane(img: &mut Image, nx: f64, ny: f64, d: f64, intensity: f64) {
    let n = math::hypot(nx, ny);
    if n <= 0.0 || img.is_empty() {
        return;
    }
    let (nx, ny, d) = (nx / n, ny / n, d / n);
    for y in 0..img.height {
        for x in 0..img.width {
            let signed = nx * x as f64 + ny * y as f64 - d;
            let c = (signed + 0.5).clamp(0.0, 1.0);
            if c > 0.0 {
                splat(img, x, y, c * intensity);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_covers_its_centerline() {
        let mut img = Image::new(32, 32);
        draw_segment(&mut img, (4.0, 16.0), (28.0, 16.0), STROKE_WIDTH, 1.0);
        for x in 5..28 {
            assert!(img.get(x, 16) > 0.9, "centerline pixel {x} not covered");
        }
        assert_eq!(img.get(16, 4), 0.0);
    }

    #[test]
    fn circle_ring_has_hollow_center() {
        let mut img = Image::new(32, 32);
        draw_circle(&mut img, (16.0, 16.0), 10.0, STROKE_WIDTH, 1.0);
        assert_eq!(img.get(16, 16), 0.0);
        assert!(img.get(26, 16) > 0.9);
        assert!(img.get(16, 6) > 0.9);
    }

    #[test]
    fn arc_covers_span_only() {
        let mut img = Image::new(32, 32);
        // upper half circle: angles [π, 2π] in image coords (y down)
        draw_arc(
            &mut img,
            (16.0, 20.0),
            10.0,
            core::f64::consts::PI,
            2.0 * core::f64::consts::PI,
            STROKE_WIDTH,
            1.0,
        );
        assert!(img.get(16, 10) > 0.9); // top of the arc
        assert_eq!(img.get(16, 30), 0.0); // bottom excluded
    }
}
