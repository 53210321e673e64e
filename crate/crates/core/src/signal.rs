//! From raw grayscale samples to isolated, canonicalized data pieces:
//! singularity detection (intensity jumps, slope breaks, curvature breaks),
//! multi-scale bounding boxes, and normalization onto the fixed canonical
//! grid that identifying operators live in.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::image::Image;
use crate::math;
use crate::operator::normalized_in_place;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum SingularityKind {
    /// Discontinuity in the color/intensity space (an edge).
    IntensityJump,
    /// Discontinuity in the tangent slope along a stroke (a corner).
    SlopeBreak,
    /// Discontinuity in the curvature along a stroke (e.g. a line-circle
    /// tangency).
    CurvatureBreak,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SingularityPoint {
    pub x: f64,
    pub y: f64,
    pub kind: SingularityKind,
    pub strength: f64,
    pub scale: u32,
}

/// Axis-aligned pixel box, inclusive of `x0,y0`, exclusive of `x1,y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub scale: u32,
    /// Index of the enclosing box in the extraction result, if any.
    pub parent: Option<usize>,
}

impl BoundingBox {
    pub fn whole(image: &Image) -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: image.width,
            y1: image.height,
            scale: 0,
            parent: None,
        }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x0 + self.x1) as f64 / 2.0,
            (self.y0 + self.y1) as f64 / 2.0,
        )
    }

    /// Longest side, the scalar extent used for scale normalization.
    pub fn extent(&self) -> f64 {
        self.width().max(self.height()) as f64
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }
}

/// A canonicalized patch cut from input data by a singularity bounding box.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct DataPiece {
    /// G x G canonical intensities, flattened row-major, unit L2 norm.
    pub vector: Vec<f64>,
    pub raw_box: BoundingBox,
    pub sample_id: u64,
    /// Pre-normalization L2 energy of the crop.
    pub a_raw: f64,
    /// Box center in sample coordinates.
    pub b_raw: (f64, f64),
    /// Box extent (longest side) in sample pixels.
    pub c_raw: f64,
    /// Index of the enclosing piece in the extraction result.
    pub parent_piece: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalError {
    EmptyImage,
    /// The crop under the box is identically zero.
    ZeroEnergy,
}

impl fmt::Display for SignalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SignalError::EmptyImage => write!(f, "zero-area image"),
            SignalError::ZeroEnergy => write!(f, "crop has zero energy"),
        }
    }
}

impl core::error::Error for SignalError {}

/// Detector thresholds and window sizes.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct DetectorConfig {
    /// Number of dyadic smoothing scales for edge detection.
    pub scales: u32,
    /// Minimum gradient magnitude for an IntensityJump.
    pub jump_threshold: f64,
    /// Minimum tangent-angle change (radians) for a SlopeBreak.
    pub slope_threshold: f64,
    /// Minimum curvature jump (radians per pixel) for a CurvatureBreak.
    pub curvature_threshold: f64,
    /// Gaussian pre-smoothing before binarization (component finding only).
    pub smooth_sigma: f64,
    /// Components smaller than this many pixels are treated as speckle.
    pub min_component_area: usize,
    /// Half-window (path samples) for tangent estimation.
    pub tangent_window: usize,
    /// Half-window (path samples) for curvature estimation.
    pub curvature_window: usize,
    /// Padding added around sub-stroke boxes before tightening to ink.
    pub box_pad: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            scales: 3,
            jump_threshold: 0.15,
            slope_threshold: 1.0,
            curvature_threshold: 0.06,
            smooth_sigma: 0.8,
            min_component_area: 5,
            tangent_window: 4,
            curvature_window: 5,
            box_pad: 2,
        }
    }
}

// ---------------------------------------------------------------------------
// Binarization and connected components
// ---------------------------------------------------------------------------

/// Otsu's threshold over a 256-bin histogram of [0,1] intensities.
pub fn otsu_threshold(image: &Image) -> f64 {
    let mut hist = [0u64; 256];
    for &v in &image.values {
        let bin = ((v.clamp(0.0, 1.0)) * 255.0) as usize;
        hist[bin.min(255)] += 1;
    }
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0.5;
    }
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let mut sum_b = 0.0;
    let mut w_b = 0u64;
    let mut best = (0.0f64, 0usize);
    for (t, &h) in hist.iter().enumerate() {
        w_b += h;
        if w_b == 0 {
            continue;
        }
        let w_f = total - w_b;
        if w_f == 0 {
            break;
        }
        sum_b += t as f64 * h as f64;
        let m_b = sum_b / w_b as f64;
        let m_f = (sum_all - sum_b) / w_f as f64;
        let between = w_b as f64 * w_f as f64 * (m_b - m_f) * (m_b - m_f);
        if between > best.0 {
            best = (between, t);
        }
    }
    (best.1 as f64 + 0.5) / 255.0
}

/// Boolean ink mask: smoothed image thresholded by Otsu.
pub fn ink_mask(image: &Image, config: &DetectorConfig) -> Vec<bool> {
    let smoothed = image.gaussian_smoothed(config.smooth_sigma);
    let t = otsu_threshold(&smoothed);
    // On (near-)blank images Otsu lands inside the background noise; require
    // a sensible foreground/background contrast before declaring ink.
    let max = smoothed.max_value();
    let t = if max < 2.0 * t { f64::INFINITY } else { t };
    smoothed.values.iter().map(|&v| v > t).collect()
}

#[derive(Debug, Clone)]
pub struct Component {
    /// Pixel coordinates belonging to the component.
    pub pixels: Vec<(usize, usize)>,
    pub bbox: (usize, usize, usize, usize),
}

/// 8-connected components of a boolean mask.
pub fn connected_components(mask: &[bool], width: usize, height: usize) -> Vec<Component> {
    let mut labels = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] {
            continue;
        }
        stack.push(start);
        labels[start] = true;
        let mut pixels = Vec::new();
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        while let Some(idx) = stack.pop() {
            let x = idx % width;
            let y = idx / width;
            pixels.push((x, y));
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    let nidx = ny as usize * width + nx as usize;
                    if mask[nidx] && !labels[nidx] {
                        labels[nidx] = true;
                        stack.push(nidx);
                    }
                }
            }
        }
        out.push(Component {
            pixels,
            bbox: (x0, y0, x1 + 1, y1 + 1),
        });
    }
    // Deterministic order: by bbox origin.
    out.sort_by_key(|c| (c.bbox.1, c.bbox.0));
    out
}

// ---------------------------------------------------------------------------
// Skeletonization and path tracing
// ---------------------------------------------------------------------------

/// Zhang-Suen thinning to a one-pixel-wide skeleton.
pub fn skeletonize(mask: &[bool], width: usize, height: usize) -> Vec<bool> {
    let mut img: Vec<bool> = mask.to_vec();
    let at = |m: &[bool], x: i64, y: i64| -> bool {
        if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
            false
        } else {
            m[y as usize * width + x as usize]
        }
    };
    loop {
        let mut changed = false;
        for phase in 0..2 {
            let mut to_clear = Vec::new();
            for y in 0..height as i64 {
                for x in 0..width as i64 {
                    if !at(&img, x, y) {
                        continue;
                    }
                    // neighbors p2..p9 clockwise from north
                    let p = [
                        at(&img, x, y - 1),
                        at(&img, x + 1, y - 1),
                        at(&img, x + 1, y),
                        at(&img, x + 1, y + 1),
                        at(&img, x, y + 1),
                        at(&img, x - 1, y + 1),
                        at(&img, x - 1, y),
                        at(&img, x - 1, y - 1),
                    ];
                    let b: usize = p.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8)
                        .filter(|&i| !p[i] && p[(i + 1) % 8])
                        .count();
                    if a != 1 {
                        continue;
                    }
                    let cond = if phase == 0 {
                        (!p[0] || !p[2] || !p[4]) && (!p[2] || !p[4] || !p[6])
                    } else {
                        (!p[0] || !p[2] || !p[6]) && (!p[0] || !p[4] || !p[6])
                    };
                    if cond {
                        to_clear.push((x as usize, y as usize));
                    }
                }
            }
            if !to_clear.is_empty() {
                changed = true;
                for (x, y) in to_clear {
                    img[y * width + x] = false;
                }
            }
        }
        if !changed {
            return img;
        }
    }
}

const NEIGHBORS8: [(i64, i64); 8] = [
    (1, 0),
    (0, 1),
    (-1, 0),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Trace one-pixel-wide skeleton pixels into ordered paths. Open curves run
/// endpoint to endpoint; closed curves are returned as loops starting at an
/// arbitrary pixel. At junctions the walk continues toward the most aligned
/// unvisited neighbor.
pub fn trace_paths(skeleton: &[bool], width: usize, height: usize) -> Vec<Vec<(usize, usize)>> {
    let at = |x: i64, y: i64| -> bool {
        x >= 0
            && y >= 0
            && x < width as i64
            && y < height as i64
            && skeleton[y as usize * width + x as usize]
    };
    let degree = |x: usize, y: usize| -> usize {
        NEIGHBORS8
            .iter()
            .filter(|&&(dx, dy)| at(x as i64 + dx, y as i64 + dy))
            .count()
    };
    let mut visited = vec![false; skeleton.len()];
    let mut paths = Vec::new();

    let walk = |start: (usize, usize), visited: &mut Vec<bool>| -> Vec<(usize, usize)> {
        let mut path = vec![start];
        visited[start.1 * width + start.0] = true;
        let mut cur = start;
        let mut dir: Option<(f64, f64)> = None;
        loop {
            let mut candidates: Vec<(usize, usize)> = Vec::new();
            for &(dx, dy) in &NEIGHBORS8 {
                let nx = cur.0 as i64 + dx;
                let ny = cur.1 as i64 + dy;
                if at(nx, ny) && !visited[ny as usize * width + nx as usize] {
                    candidates.push((nx as usize, ny as usize));
                }
            }
            if candidates.is_empty() {
                break;
            }
            let next = if candidates.len() == 1 {
                candidates[0]
            } else if let Some((dx, dy)) = dir {
                // prefer the straightest continuation
                *candidates
                    .iter()
                    .max_by(|a, b| {
                        let va = (
                            a.0 as f64 - cur.0 as f64,
                            a.1 as f64 - cur.1 as f64,
                        );
                        let vb = (
                            b.0 as f64 - cur.0 as f64,
                            b.1 as f64 - cur.1 as f64,
                        );
                        let sa = (va.0 * dx + va.1 * dy) / math::hypot(va.0, va.1);
                        let sb = (vb.0 * dx + vb.1 * dy) / math::hypot(vb.0, vb.1);
                        sa.partial_cmp(&sb).unwrap_or(core::cmp::Ordering::Equal)
                    })
                    .unwrap()
            } else {
                candidates[0]
            };
            let d = (
                next.0 as f64 - cur.0 as f64,
                next.1 as f64 - cur.1 as f64,
            );
            let n = math::hypot(d.0, d.1);
            dir = Some((d.0 / n, d.1 / n));
            visited[next.1 * width + next.0] = true;
            path.push(next);
            cur = next;
        }
        path
    };

    // open paths first, from endpoints
    let mut endpoints: Vec<(usize, usize)> = Vec::new();
    for y in 0..height {
        for x in 0..width {
            if skeleton[y * width + x] && degree(x, y) == 1 {
                endpoints.push((x, y));
            }
        }
    }
    for &e in &endpoints {
        if !visited[e.1 * width + e.0] {
            let p = walk(e, &mut visited);
            if p.len() >= 2 {
                paths.push(p);
            }
        }
    }
    // remaining pixels belong to loops (or junction clutter)
    for y in 0..height {
        for x in 0..width {
            if skeleton[y * width + x] && !visited[y * width + x] {
                let p = walk((x, y), &mut visited);
                if p.len() >= 4 {
                    paths.push(p);
                }
            }
        }
    }
    paths
}

// ---------------------------------------------------------------------------
// Singularity detection
// ---------------------------------------------------------------------------

/// All points whose detector response exceeds its per-kind threshold, tagged
/// with kind and scale. Deterministic for fixed input and config.
pub fn detect_singularities(
    image: &Image,
    config: &DetectorConfig,
) -> Result<Vec<SingularityPoint>, SignalError> {
    if image.is_empty() {
        return Err(SignalError::EmptyImage);
    }
    let mut points = Vec::new();
    detect_intensity_jumps(image, config, &mut points);
    detect_edge_breaks(image, config, &mut points);
    Ok(points)
}

/// Gradient-magnitude maxima across dyadic smoothing scales.
fn detect_intensity_jumps(image: &Image, config: &DetectorConfig, out: &mut Vec<SingularityPoint>) {
    for scale in 0..config.scales {
        let sigma = if scale == 0 {
            0.0
        } else {
            (1u32 << (scale - 1)) as f64
        };
        let smoothed = image.gaussian_smoothed(sigma);
        let w = image.width;
        let h = image.height;
        let mut gx = vec![0.0; w * h];
        let mut gy = vec![0.0; w * h];
        let mut mag = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let dx = (smoothed.get_clamped(x as i64 + 1, y as i64)
                    - smoothed.get_clamped(x as i64 - 1, y as i64))
                    / 2.0;
                let dy = (smoothed.get_clamped(x as i64, y as i64 + 1)
                    - smoothed.get_clamped(x as i64, y as i64 - 1))
                    / 2.0;
                gx[y * w + x] = dx;
                gy[y * w + x] = dy;
                mag[y * w + x] = math::hypot(dx, dy);
            }
        }
        let mag_img = Image::from_values(w, h, mag.clone());
        for y in 0..h {
            for x in 0..w {
                let m = mag[y * w + x];
                if m <= config.jump_threshold {
                    continue;
                }
                let ux = gx[y * w + x] / m;
                let uy = gy[y * w + x] / m;
                let ahead = mag_img.sample_bilinear(x as f64 + ux, y as f64 + uy);
                let behind = mag_img.sample_bilinear(x as f64 - ux, y as f64 - uy);
                if m >= ahead && m >= behind {
                    out.push(SingularityPoint {
                        x: x as f64,
                        y: y as f64,
                        kind: SingularityKind::IntensityJump,
                        strength: m,
                        scale,
                    });
                }
            }
        }
    }
}

/// Tangent angles along a traced path, estimated over a +-k sample window.
fn path_tangents(path: &[(usize, usize)], k: usize) -> Vec<f64> {
    let n = path.len();
    let mut angles = vec![0.0; n];
    for (i, a) in angles.iter_mut().enumerate() {
        let lo = i.saturating_sub(k);
        let hi = (i + k).min(n - 1);
        let (x0, y0) = path[lo];
        let (x1, y1) = path[hi];
        *a = math::atan2(y1 as f64 - y0 as f64, x1 as f64 - x0 as f64);
    }
    angles
}

fn signed_angle_diff(a: f64, b: f64) -> f64 {
    let mut d = a - b;
    let tau = 2.0 * core::f64::consts::PI;
    while d > core::f64::consts::PI {
        d -= tau;
    }
    while d < -core::f64::consts::PI {
        d += tau;
    }
    d
}

fn arc_len(path: &[(usize, usize)], i: usize, j: usize) -> f64 {
    let mut s = 0.0;
    for w in path[i..=j].windows(2) {
        s += math::hypot(
            w[1].0 as f64 - w[0].0 as f64,
            w[1].1 as f64 - w[0].1 as f64,
        );
    }
    s
}

/// Local maxima of `resp` above `threshold`, suppressed within `radius`
/// samples; indices near the path ends (`margin`) are excluded.
fn local_maxima(resp: &[f64], threshold: f64, radius: usize, margin: usize) -> Vec<usize> {
    let n = resp.len();
    let mut picks: Vec<usize> = Vec::new();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| resp[b].partial_cmp(&resp[a]).unwrap_or(core::cmp::Ordering::Equal));
    for i in idx {
        if i < margin || i + margin >= n {
            continue;
        }
        if resp[i] <= threshold {
            break;
        }
        if picks.iter().any(|&p| p.abs_diff(i) <= radius) {
            continue;
        }
        picks.push(i);
    }
    picks.sort_unstable();
    picks
}

/// Slope- and curvature-break detection on skeletonized stroke paths.
fn detect_edge_breaks(image: &Image, config: &DetectorConfig, out: &mut Vec<SingularityPoint>) {
    let mask = ink_mask(image, config);
    let comps = connected_components(&mask, image.width, image.height);
    for comp in &comps {
        if comp.pixels.len() < config.min_component_area {
            continue;
        }
        let mut cmask = vec![false; image.width * image.height];
        for &(x, y) in &comp.pixels {
            cmask[y * image.width + x] = true;
        }
        let skel = skeletonize(&cmask, image.width, image.height);
        for path in trace_paths(&skel, image.width, image.height) {
            detect_breaks_on_path(&path, config, out);
        }
    }
}

fn detect_breaks_on_path(
    path: &[(usize, usize)],
    config: &DetectorConfig,
    out: &mut Vec<SingularityPoint>,
) {
    let k = config.tangent_window;
    let q = config.curvature_window;
    if path.len() < 2 * (k + q) + 3 {
        return;
    }
    let theta = path_tangents(path, k);
    let n = path.len();

    // SlopeBreak: tangent change across +-k samples. The fixed window makes
    // the turn of a smooth arc scale with 1/radius, so small circles read as
    // uniformly high turn; a genuine corner is a spike above the path's
    // baseline. Require both an absolute threshold and a clear margin over
    // the median turn.
    let mut turn = vec![0.0; n];
    for i in k..n - k {
        turn[i] = math::abs(signed_angle_diff(theta[i + k], theta[i - k]));
    }
    let mut interior: Vec<f64> = turn[k..n - k].to_vec();
    interior.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let median_turn = interior[interior.len() / 2];
    let slope_gate = config.slope_threshold.max(median_turn + 0.6);
    let slope_breaks = local_maxima(&turn, slope_gate, 2 * k, k + 1);
    for &i in &slope_breaks {
        // Sub-pixel locus: intersect lines fitted to the flanks outside the
        // turn window; the skeleton sample at the peak is quantized and sits
        // up to a pixel off the true junction.
        let (x, y) = refine_corner(path, i, k);
        out.push(SingularityPoint {
            x,
            y,
            kind: SingularityKind::SlopeBreak,
            strength: turn[i],
            scale: 0,
        });
    }

    // CurvatureBreak: jump in the tangent-angle derivative. Masked out near
    // slope breaks, where curvature is not defined.
    let mut kappa = vec![0.0; n];
    for i in q..n - q {
        let ds = arc_len(path, i - q, i + q);
        if ds > 0.0 {
            kappa[i] = signed_angle_diff(theta[i + q], theta[i - q]) / ds;
        }
    }
    let mut jump = vec![0.0; n];
    for i in q..n - q {
        if i < 2 * q || i + 2 * q >= n {
            continue;
        }
        if turn[i] > config.slope_threshold / 2.0 {
            continue;
        }
        if slope_breaks.iter().any(|&s| s.abs_diff(i) <= k + 2 * q) {
            continue;
        }
        jump[i] = math::abs(kappa[i + q] - kappa[i - q]);
    }
    for i in local_maxima(&jump, config.curvature_threshold, 2 * q, k + q) {
        // The response peak drifts along the smeared curvature ramp, but the
        // junction itself is the tangency point: project the fitted arc
        // center onto the fitted straight flank.
        let (x, y) = refine_tangency(path, &kappa, i, q);
        out.push(SingularityPoint {
            x,
            y,
            kind: SingularityKind::CurvatureBreak,
            strength: jump[i],
            scale: 0,
        });
    }
}

/// Centroid and unit principal direction of a run of path samples.
fn fit_line(pts: &[(usize, usize)]) -> ((f64, f64), (f64, f64)) {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pts {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let angle = 0.5 * math::atan2(2.0 * sxy, sxx - syy);
    ((cx, cy), (math::cos(angle), math::sin(angle)))
}

/// Intersection of the two stroke lines meeting at slope break `i`; falls
/// back to the peak sample when the flanks are too short or near-parallel.
fn refine_corner(path: &[(usize, usize)], i: usize, k: usize) -> (f64, f64) {
    let n = path.len();
    let fallback = (path[i].0 as f64, path[i].1 as f64);
    let (a0, a1) = (i.saturating_sub(3 * k), i.saturating_sub(k));
    let (b0, b1) = ((i + k).min(n - 1), (i + 3 * k).min(n - 1));
    if a1 - a0 < 2 || b1 - b0 < 2 {
        return fallback;
    }
    let ((ax, ay), (adx, ady)) = fit_line(&path[a0..=a1]);
    let ((bx, by), (bdx, bdy)) = fit_line(&path[b0..=b1]);
    let den = adx * bdy - ady * bdx;
    if math::abs(den) < 1e-6 {
        return fallback;
    }
    let t = ((bx - ax) * bdy - (by - ay) * bdx) / den;
    let (x, y) = (ax + t * adx, ay + t * ady);
    // reject degenerate intersections far from the detected sample
    if math::hypot(x - fallback.0, y - fallback.1) > (2 * k) as f64 {
        return fallback;
    }
    (x, y)
}

/// Least-squares circle center (Kasa fit). None when the samples are too
/// collinear for a stable solve.
fn fit_circle_center(pts: &[(usize, usize)]) -> Option<(f64, f64)> {
    // normal equations of |p - c|^2 = r^2, linear in (cx, cy, r^2 - |c|^2)
    let n = pts.len() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut sxz, mut syz, mut sz) = (0.0, 0.0, 0.0);
    for &(xi, yi) in pts {
        let x = xi as f64;
        let y = yi as f64;
        let z = x * x + y * y;
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
        sxz += x * z;
        syz += y * z;
        sz += z;
    }
    let a11 = 2.0 * (sxx - sx * sx / n);
    let a12 = 2.0 * (sxy - sx * sy / n);
    let a22 = 2.0 * (syy - sy * sy / n);
    let b1 = sxz - sx * sz / n;
    let b2 = syz - sy * sz / n;
    let det = a11 * a22 - a12 * a12;
    if math::abs(det) < 1e-9 {
        return None;
    }
    Some(((b1 * a22 - b2 * a12) / det, (b2 * a11 - b1 * a12) / det))
}

/// Locus of a line-arc tangency near response peak `j`: fit a line to the
/// flatter flank and a circle to the curved one, then drop the center onto
/// the line. Falls back to the peak sample when either fit is unavailable.
fn refine_tangency(path: &[(usize, usize)], kappa: &[f64], j: usize, q: usize) -> (f64, f64) {
    let n = path.len();
    let fallback = (path[j].0 as f64, path[j].1 as f64);
    // long flanks: both fits sharpen with every extra sample; the drift
    // guard below rejects cases where a distant feature corrupts them
    let before = j.saturating_sub(8 * q)..=j.saturating_sub(q);
    let after = (j + q).min(n - 1)..=(j + 8 * q).min(n - 1);
    if before.end() - before.start() < 3 || after.end() - after.start() < 3 {
        return fallback;
    }
    let mean_abs = |r: &core::ops::RangeInclusive<usize>| {
        let s: f64 = kappa[*r.start()..=*r.end()].iter().map(|v| math::abs(*v)).sum();
        s / (r.end() - r.start() + 1) as f64
    };
    let (line_side, arc_side) = if mean_abs(&before) <= mean_abs(&after) {
        (before, after)
    } else {
        (after, before)
    };
    let ((lx, ly), (ldx, ldy)) = fit_line(&path[*line_side.start()..=*line_side.end()]);
    let Some((cx, cy)) = fit_circle_center(&path[*arc_side.start()..=*arc_side.end()]) else {
        return fallback;
    };
    let t = (cx - lx) * ldx + (cy - ly) * ldy;
    let (x, y) = (lx + t * ldx, ly + t * ldy);
    if math::hypot(x - fallback.0, y - fallback.1) > (3 * q) as f64 {
        return fallback;
    }
    (x, y)
}

// ---------------------------------------------------------------------------
// Bounding boxes
// ---------------------------------------------------------------------------

/// Multi-scale box hierarchy: the whole-sample box, one box per ink
/// component, and sub-boxes obtained by splitting each component's traced
/// strokes at slope/curvature breaks. Every box except the first has a
/// parent containing it.
pub fn extract_boxes(
    image: &Image,
    singularities: &[SingularityPoint],
    config: &DetectorConfig,
) -> Vec<BoundingBox> {
    let mut boxes = vec![BoundingBox::whole(image)];
    if image.is_empty() {
        return boxes;
    }
    let mask = ink_mask(image, config);
    let comps = connected_components(&mask, image.width, image.height);
    let breaks: Vec<&SingularityPoint> = singularities
        .iter()
        .filter(|p| p.kind != SingularityKind::IntensityJump)
        .collect();
    for comp in &comps {
        if comp.pixels.len() < config.min_component_area {
            continue;
        }
        let comp_idx = boxes.len();
        boxes.push(BoundingBox {
            x0: comp.bbox.0,
            y0: comp.bbox.1,
            x1: comp.bbox.2,
            y1: comp.bbox.3,
            scale: 1,
            parent: Some(0),
        });

        // Split the component's strokes at break singularities.
        let mut cmask = vec![false; image.width * image.height];
        for &(x, y) in &comp.pixels {
            cmask[y * image.width + x] = true;
        }
        let skel = skeletonize(&cmask, image.width, image.height);
        let mut sub_boxes: Vec<BoundingBox> = Vec::new();
        let mut split_any = false;
        for path in trace_paths(&skel, image.width, image.height) {
            // indices where a break singularity touches this path
            let mut cuts: Vec<usize> = Vec::new();
            for b in &breaks {
                let mut best = (f64::INFINITY, 0usize);
                for (i, &(px, py)) in path.iter().enumerate() {
                    let d = math::hypot(px as f64 - b.x, py as f64 - b.y);
                    if d < best.0 {
                        best = (d, i);
                    }
                }
                if best.0 <= 2.0 {
                    cuts.push(best.1);
                }
            }
            cuts.sort_unstable();
            cuts.dedup();
            if !cuts.is_empty() {
                split_any = true;
            }
            if cuts.is_empty() {
                continue;
            }
            // Drop a margin of samples around every cut so neither segment's
            // box swallows the other stroke's pixels near the singularity.
            let m = config.box_pad + 1;
            let mut start = 0usize;
            let mut segments: Vec<&[(usize, usize)]> = Vec::new();
            for &c in &cuts {
                let end = c.saturating_sub(m);
                if end > start {
                    segments.push(&path[start..end]);
                }
                start = c + m;
            }
            if start < path.len() {
                segments.push(&path[start..]);
            }
            for seg in segments {
                if seg.len() < 3 {
                    continue;
                }
                if let Some(b) =
                    tight_box_around(seg, &cmask, image.width, image.height, config.box_pad)
                {
                    sub_boxes.push(BoundingBox {
                        parent: Some(comp_idx),
                        scale: 2,
                        ..b
                    });
                }
            }
        }
        if split_any && sub_boxes.len() >= 2 {
            boxes.extend(sub_boxes);
        }
    }
    boxes
}

/// Bounding box of the path samples, padded, then tightened to the ink mask.
fn tight_box_around(
    seg: &[(usize, usize)],
    mask: &[bool],
    width: usize,
    height: usize,
    pad: usize,
) -> Option<BoundingBox> {
    let mut x0 = usize::MAX;
    let mut y0 = usize::MAX;
    let mut x1 = 0usize;
    let mut y1 = 0usize;
    for &(x, y) in seg {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let x0 = x0.saturating_sub(pad);
    let y0 = y0.saturating_sub(pad);
    let x1 = (x1 + pad + 1).min(width);
    let y1 = (y1 + pad + 1).min(height);
    // tighten to ink
    let mut tx0 = usize::MAX;
    let mut ty0 = usize::MAX;
    let mut tx1 = 0usize;
    let mut ty1 = 0usize;
    for y in y0..y1 {
        for x in x0..x1 {
            if mask[y * width + x] {
                tx0 = tx0.min(x);
                ty0 = ty0.min(y);
                tx1 = tx1.max(x);
                ty1 = ty1.max(y);
            }
        }
    }
    if tx0 == usize::MAX {
        return None;
    }
    Some(BoundingBox {
        x0: tx0,
        y0: ty0,
        x1: tx1 + 1,
        y1: ty1 + 1,
        scale: 2,
        parent: None,
    })
}

/// Tight bounding box of pixels strictly above `eps`, or None when blank.
pub fn ink_bbox(image: &Image, eps: f64) -> Option<BoundingBox> {
    let mut x0 = usize::MAX;
    let mut y0 = usize::MAX;
    let mut x1 = 0usize;
    let mut y1 = 0usize;
    for y in 0..image.height {
        for x in 0..image.width {
            if image.get(x, y) > eps {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return None;
    }
    Some(BoundingBox {
        x0,
        y0,
        x1: x1 + 1,
        y1: y1 + 1,
        scale: 0,
        parent: None,
    })
}

// ---------------------------------------------------------------------------
// Canonicalization
// ---------------------------------------------------------------------------

/// Crop the box, letterbox-resample it onto the G x G canonical grid with a
/// uniform scale factor (aspect preserved, integer-centered), and normalize
/// to unit L2. Records the pre-normalization energy and the box geometry.
pub fn canonicalize(
    image: &Image,
    bbox: &BoundingBox,
    grid_size: usize,
) -> Result<DataPiece, SignalError> {
    assert!(grid_size >= 4, "grid_size must be >= 4");
    let w = bbox.width();
    let h = bbox.height();
    if w == 0 || h == 0 {
        return Err(SignalError::EmptyImage);
    }
    let g = grid_size;
    let s = g as f64 / w.max(h) as f64;
    let ow = (math::round(w as f64 * s) as usize).clamp(1, g);
    let oh = (math::round(h as f64 * s) as usize).clamp(1, g);
    let ox = (g - ow) / 2;
    let oy = (g - oh) / 2;
    let sx = w as f64 / ow as f64;
    let sy = h as f64 / oh as f64;
    let mut vector = vec![0.0; g * g];
    for i in 0..oh {
        for j in 0..ow {
            let src_x = bbox.x0 as f64 + (j as f64 + 0.5) * sx - 0.5;
            let src_y = bbox.y0 as f64 + (i as f64 + 0.5) * sy - 0.5;
            vector[(oy + i) * g + (ox + j)] = image.sample_bilinear_zero(src_x, src_y);
        }
    }
    let energy = math::l2_norm(&vector);
    if energy <= 0.0 {
        return Err(SignalError::ZeroEnergy);
    }
    normalized_in_place(&mut vector);
    let (cx, cy) = bbox.center();
    Ok(DataPiece {
        vector,
        raw_box: *bbox,
        sample_id: 0,
        a_raw: energy,
        b_raw: (cx, cy),
        c_raw: bbox.extent(),
        parent_piece: None,
    })
}

/// Canonicalize every extracted box of a sample into data pieces whose
/// `parent_piece` indices mirror the box hierarchy. Boxes whose crops are
/// blank are dropped (parents re-mapped accordingly).
pub fn extract_pieces(
    image: &Image,
    sample_id: u64,
    config: &DetectorConfig,
    grid_size: usize,
) -> Result<Vec<DataPiece>, SignalError> {
    let sing = detect_singularities(image, config)?;
    let boxes = extract_boxes(image, &sing, config);
    let mut index_map: Vec<Option<usize>> = vec![None; boxes.len()];
    let mut pieces: Vec<DataPiece> = Vec::new();
    for (i, b) in boxes.iter().enumerate() {
        match canonicalize(image, b, grid_size) {
            Ok(mut piece) => {
                piece.sample_id = sample_id;
                piece.parent_piece = b.parent.and_then(|p| index_map[p]);
                index_map[i] = Some(pieces.len());
                pieces.push(piece);
            }
            Err(SignalError::ZeroEnergy) => {
                index_map[i] = None;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(pieces)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_image_has_no_singularities() {
        let img = Image::from_values(16, 16, vec![0.5; 256]);
        let points = detect_singularities(&img, &DetectorConfig::default()).unwrap();
        assert!(points.is_empty());
    }

    #[test]
    fn empty_image_errors() {
        let img = Image::new(0, 0);
        assert_eq!(
            detect_singularities(&img, &DetectorConfig::default()).unwrap_err(),
            SignalError::EmptyImage
        );
    }

    #[test]
    fn half_plane_jumps_on_boundary_only() {
        let mut img = Image::new(24, 24);
        crate::render::draw_half_plane(&mut img, 1.0, 0.0, 12.0, 1.0);
        let cfg = DetectorConfig::default();
        let points = detect_singularities(&img, &cfg).unwrap();
        let jumps: Vec<_> = points
            .iter()
            .filter(|p| p.kind == SingularityKind::IntensityJump)
            .collect();
        assert!(!jumps.is_empty());
        for p in jumps {
            assert!(
                (p.x - 11.5).abs() <= 1.0 + p.scale as f64,
                "jump at x={} too far from boundary",
                p.x
            );
        }
    }

    #[test]
    fn blank_image_yields_whole_box_only() {
        let img = Image::new(16, 16);
        let boxes = extract_boxes(&img, &[], &DetectorConfig::default());
        assert_eq!(boxes.len(), 1);
        assert_eq!(boxes[0], BoundingBox::whole(&img));
    }

    #[test]
    fn two_blobs_give_two_component_boxes() {
        let mut img = Image::new(32, 32);
        crate::render::draw_disk(&mut img, (8.0, 8.0), 3.0, 1.0);
        crate::render::draw_disk(&mut img, (24.0, 24.0), 3.0, 1.0);
        let cfg = DetectorConfig::default();
        let sing = detect_singularities(&img, &cfg).unwrap();
        let boxes = extract_boxes(&img, &sing, &cfg);
        let comps: Vec<_> = boxes.iter().filter(|b| b.scale == 1).collect();
        assert_eq!(comps.len(), 2);
        for b in comps {
            assert_eq!(b.parent, Some(0));
            assert!(boxes[0].contains_box(b));
        }
    }

    #[test]
    fn canonicalize_is_idempotent_on_canonical_grid() {
        let mut img = Image::new(48, 48);
        crate::render::draw_segment(&mut img, (10.0, 24.0), (38.0, 24.0), 1.5, 1.0);
        let b = ink_bbox(&img, 1e-9).unwrap();
        let piece = canonicalize(&img, &b, 16).unwrap();
        let canon = Image::from_values(16, 16, piece.vector.clone());
        let b2 = ink_bbox(&canon, 1e-9).unwrap();
        let piece2 = canonicalize(&canon, &b2, 16).unwrap();
        for (a, b) in piece.vector.iter().zip(&piece2.vector) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_crop_errors() {
        let img = Image::new(16, 16);
        let b = BoundingBox::whole(&img);
        assert_eq!(canonicalize(&img, &b, 8).unwrap_err(), SignalError::ZeroEnergy);
    }

    #[test]
    fn otsu_separates_bimodal() {
        let mut vals = vec![0.1; 128];
        vals.extend(vec![0.9; 128]);
        let img = Image::from_values(16, 16, vals);
        let t = otsu_threshold(&img);
        // masking with v > t must separate the two modes
        assert!((0.1..0.9).contains(&t));
    }
}
