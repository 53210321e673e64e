//! Identifying operators: normalized templates compared by cosine similarity,
//! with transform search over rotations/scales/reflection for pixel-space
//! templates, Gaussian blurring, cluster-mean absorption, and the Boolean
//! decision combination over a symbol's operators.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::network::{Symbol, SymbolId};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum OperatorSpace {
    /// Canonical G x G pixel grid (ground symbols).
    Pixel,
    /// Child-symbol count vector over a recorded symbol basis.
    ChildComposition,
    /// Standardized per-slot state parameters (a, bx, by, c, angle).
    StateParameter,
}

/// One linear transform applied to a candidate before scoring.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Transform {
    pub angle: f64,
    pub scale: f64,
    pub reflect: bool,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        angle: 0.0,
        scale: 1.0,
        reflect: false,
    };

    pub fn is_identity(&self) -> bool {
        self.angle == 0.0 && self.scale == 1.0 && !self.reflect
    }
}

/// The finite search grid of transforms tried during identification.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TransformGrid {
    #[cfg_attr(feature = "serde", serde(default = "default_angles"))]
    pub angles: Vec<f64>,
    #[cfg_attr(feature = "serde", serde(default = "default_scales"))]
    pub scales: Vec<f64>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub reflect: bool,
}

// config-file ergonomics: absent grid fields mean the identity
#[cfg(feature = "serde")]
fn default_angles() -> Vec<f64> {
    alloc::vec![0.0]
}

#[cfg(feature = "serde")]
fn default_scales() -> Vec<f64> {
    alloc::vec![1.0]
}

impl TransformGrid {
    /// Identity-only grid; mandatory for non-pixel spaces.
    pub fn identity() -> Self {
        Self {
            angles: alloc::vec![0.0],
            scales: alloc::vec![1.0],
            reflect: false,
        }
    }

    /// Rotations every 15 degrees over [0, 360), unit scale, no reflection.
    pub fn rotations_15deg() -> Self {
        let step = core::f64::consts::PI / 12.0;
        Self {
            angles: (0..24).map(|i| i as f64 * step).collect(),
            scales: alloc::vec![1.0],
            reflect: false,
        }
    }

    pub fn is_identity_only(&self) -> bool {
        self.angles == [0.0] && self.scales == [1.0] && !self.reflect
    }

    pub fn contains_identity(&self) -> bool {
        self.angles.contains(&0.0) && self.scales.contains(&1.0)
    }

    /// Transforms in deterministic grid order (ties in scoring break to the
    /// earliest one).
    pub fn iter(&self) -> impl Iterator<Item = Transform> + '_ {
        let reflects: &[bool] = if self.reflect { &[false, true] } else { &[false] };
        reflects.iter().flat_map(move |&reflect| {
            self.scales.iter().flat_map(move |&scale| {
                self.angles.iter().map(move |&angle| Transform {
                    angle,
                    scale,
                    reflect,
                })
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorError {
    DimensionMismatch { expected: usize, found: usize },
    /// A required operator space has no vector in the supplied piece.
    MissingSpace(OperatorSpace),
    /// Non-pixel spaces admit only the identity transform grid.
    TransformUnsupported(OperatorSpace),
}

impl fmt::Display for OperatorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorError::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            OperatorError::MissingSpace(s) => write!(f, "no vector supplied for space {s:?}"),
            OperatorError::TransformUnsupported(s) => {
                write!(f, "non-identity transforms are not defined for space {s:?}")
            }
        }
    }
}

impl core::error::Error for OperatorError {}

/// A normalized template plus its decision threshold.
///
/// `mean` is the running (unnormalized) average of all absorbed data pieces;
/// `template` is its unit-norm version. Keeping the mean separately makes the
/// incremental average exactly equal to the batch average.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct IdentifyingOperator {
    pub space: OperatorSpace,
    /// Unit-L2 template vector.
    pub template: Vec<f64>,
    /// Running mean of absorbed vectors (not normalized).
    pub mean: Vec<f64>,
    /// Decision threshold v in (-1, 1).
    pub threshold: f64,
    /// Gaussian blur std in pixels; applied to the template at evaluation
    /// time (pixel space only).
    pub blur_sigma: f64,
    pub member_count: u64,
    /// Symbol basis interpreting the vector dimensions, for
    /// ChildComposition / StateParameter spaces.
    pub basis: Option<Vec<SymbolId>>,
    /// Per-dimension (mean, std) standardization, StateParameter space only.
    pub standardize: Option<Vec<(f64, f64)>>,
}

impl IdentifyingOperator {
    /// Seed an operator from its first data piece.
    pub fn from_seed(space: OperatorSpace, seed: Vec<f64>, threshold: f64) -> Self {
        let template = normalized(&seed);
        Self {
            space,
            template,
            mean: seed,
            threshold,
            blur_sigma: 0.0,
            member_count: 1,
            basis: None,
            standardize: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.template.len()
    }

    /// Side length of the canonical grid (pixel space).
    pub fn grid_size(&self) -> usize {
        isqrt(self.template.len())
    }

    /// The template after evaluation-time blurring, unit norm.
    pub fn effective_template(&self) -> Vec<f64> {
        if self.space == OperatorSpace::Pixel && self.blur_sigma > 0.0 {
            blur(&self.template, self.grid_size(), self.blur_sigma)
        } else {
            self.template.clone()
        }
    }

    /// Standardize a raw state vector with the operator's frozen statistics.
    /// Other spaces pass through unchanged.
    pub fn prepare(&self, raw: &[f64]) -> Vec<f64> {
        match &self.standardize {
            Some(stats) if stats.len() == raw.len() => raw
                .iter()
                .zip(stats)
                .map(|(&x, &(m, s))| (x - m) / s.max(1e-9))
                .collect(),
            _ => raw.to_vec(),
        }
    }

    /// Max cosine between the (blurred) template and the candidate over the
    /// transform grid. Returns the best score and the transform achieving it;
    /// ties break to the earliest grid transform.
    pub fn identify(
        &self,
        candidate: &[f64],
        grid: &TransformGrid,
    ) -> Result<(f64, Transform), OperatorError> {
        if candidate.len() != self.dim() {
            return Err(OperatorError::DimensionMismatch {
                expected: self.dim(),
                found: candidate.len(),
            });
        }
        if self.space != OperatorSpace::Pixel && !grid.is_identity_only() {
            return Err(OperatorError::TransformUnsupported(self.space));
        }
        let template = self.effective_template();
        if self.space != OperatorSpace::Pixel {
            let prepared = self.prepare(candidate);
            return Ok((math::cosine(&template, &prepared), Transform::IDENTITY));
        }
        // Symmetric blur: a sub-pixel shift of a thin stroke on the canonical
        // grid must not crater the cosine, so the candidate gets the same
        // smoothing as the template.
        let g = self.grid_size();
        let smoothed;
        let cand: &[f64] = if self.blur_sigma > 0.0 {
            smoothed = blur(candidate, g, self.blur_sigma);
            &smoothed
        } else {
            candidate
        };
        let mut best = (f64::NEG_INFINITY, Transform::IDENTITY);
        for t in grid.iter() {
            let score = if t.is_identity() {
                math::cosine(&template, cand)
            } else {
                let transformed = transform_grid_vector(cand, g, t);
                math::cosine(&template, &transformed)
            };
            if score > best.0 {
                best = (score, t);
            }
        }
        Ok(best)
    }

    /// Average one aligned data piece into the operator. The resulting
    /// template equals the normalized batch mean of every absorbed vector.
    pub fn absorb(&mut self, aligned: &[f64]) -> Result<(), OperatorError> {
        if aligned.len() != self.dim() {
            return Err(OperatorError::DimensionMismatch {
                expected: self.dim(),
                found: aligned.len(),
            });
        }
        let n = self.member_count as f64;
        for (m, &v) in self.mean.iter_mut().zip(aligned) {
            *m = (n * *m + v) / (n + 1.0);
        }
        self.member_count += 1;
        self.template = normalized(&self.mean);
        Ok(())
    }
}

/// Vectors a data piece supplies, one per operator space.
#[derive(Debug, Clone, Default)]
pub struct SpaceVectors<'a> {
    pub pixel: Option<&'a [f64]>,
    pub child: Option<&'a [f64]>,
    pub state: Option<&'a [f64]>,
}

impl<'a> SpaceVectors<'a> {
    pub fn pixel(v: &'a [f64]) -> Self {
        Self {
            pixel: Some(v),
            ..Self::default()
        }
    }

    fn get(&self, space: OperatorSpace) -> Option<&'a [f64]> {
        match space {
            OperatorSpace::Pixel => self.pixel,
            OperatorSpace::ChildComposition => self.child,
            OperatorSpace::StateParameter => self.state,
        }
    }
}

/// Outcome of evaluating all of a symbol's operators on one piece.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub accepted: bool,
    /// Per-operator best scores, in operator order.
    pub scores: Vec<f64>,
    /// Best transform of the first pixel-space operator, if any.
    pub transform: Transform,
}

/// Evaluate every operator of `symbol` on the supplied vectors and combine
/// the per-operator threshold decisions through the symbol's Boolean tree.
pub fn decide(
    symbol: &Symbol,
    vectors: &SpaceVectors<'_>,
    grid: &TransformGrid,
) -> Result<Decision, OperatorError> {
    let mut flags = Vec::with_capacity(symbol.operators.len());
    let mut scores = Vec::with_capacity(symbol.operators.len());
    let mut transform = Transform::IDENTITY;
    let mut saw_pixel = false;
    let identity = TransformGrid::identity();
    for op in &symbol.operators {
        let v = vectors
            .get(op.space)
            .ok_or(OperatorError::MissingSpace(op.space))?;
        let op_grid = if op.space == OperatorSpace::Pixel {
            grid
        } else {
            &identity
        };
        let (score, t) = op.identify(v, op_grid)?;
        if op.space == OperatorSpace::Pixel && !saw_pixel {
            transform = t;
            saw_pixel = true;
        }
        flags.push(score > op.threshold);
        scores.push(score);
    }
    Ok(Decision {
        accepted: symbol.operator_combination.eval(&flags),
        scores,
        transform,
    })
}

/// Rotate/scale/reflect a G x G grid vector about its center, sampling zeros
/// outside, and renormalize to unit L2 (all-zero stays all-zero).
pub fn transform_grid_vector(v: &[f64], g: usize, t: Transform) -> Vec<f64> {
    let img = crate::image::Image::from_values(g, g, v.to_vec());
    let c = (g as f64 - 1.0) / 2.0;
    let (sin, cos) = (math::sin(t.angle), math::cos(t.angle));
    let inv_s = 1.0 / t.scale;
    let mut out = Vec::with_capacity(v.len());
    for i in 0..g {
        for j in 0..g {
            let dx = j as f64 - c;
            let dy = i as f64 - c;
            // inverse transform into source coordinates
            let mut sx = (cos * dx + sin * dy) * inv_s;
            let sy = (-sin * dx + cos * dy) * inv_s;
            if t.reflect {
                sx = -sx;
            }
            out.push(img.sample_bilinear_zero(sx + c, sy + c));
        }
    }
    normalized_in_place(&mut out);
    out
}

/// 2D Gaussian blur of a G x G template (truncated at 3 sigma, reflected
/// borders), renormalized to unit L2. `sigma <= 0` returns the input.
pub fn blur(template: &[f64], g: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return template.to_vec();
    }
    let img = crate::image::Image::from_values(g, g, template.to_vec());
    let mut out = img.gaussian_smoothed(sigma).values;
    normalized_in_place(&mut out);
    out
}

/// Multiset of identified direct children, embeddable as a unit vector over
/// a symbol basis.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ChildVector {
    pub counts: BTreeMap<SymbolId, f64>,
}

impl ChildVector {
    pub fn from_children<I: IntoIterator<Item = SymbolId>>(children: I) -> Self {
        let mut counts = BTreeMap::new();
        for c in children {
            *counts.entry(c).or_insert(0.0) += 1.0;
        }
        Self { counts }
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Dense unit-norm embedding over an ordered basis. Children outside the
    /// basis are dropped.
    pub fn to_unit_dense(&self, basis: &[SymbolId]) -> Vec<f64> {
        let mut v: Vec<f64> = basis
            .iter()
            .map(|id| self.counts.get(id).copied().unwrap_or(0.0))
            .collect();
        normalized_in_place(&mut v);
        v
    }

    /// Cosine between two child multisets (order-free, sparse).
    pub fn cosine(&self, other: &ChildVector) -> f64 {
        let dot: f64 = self
            .counts
            .iter()
            .filter_map(|(id, &a)| other.counts.get(id).map(|&b| a * b))
            .sum();
        let na = math::sqrt(self.counts.values().map(|v| v * v).sum());
        let nb = math::sqrt(other.counts.values().map(|v| v * v).sum());
        if na <= 0.0 || nb <= 0.0 {
            return 0.0;
        }
        dot / (na * nb)
    }
}

/// Raw (unstandardized) state vector: per child occurrence the tuple
/// (a, bx, by, c, angle), concatenated in canonical child order — sorted by
/// child symbol id, then vertical then horizontal position (top-to-bottom
/// keeps same-id occurrences in a stable order under small horizontal
/// jitter). Dimension = 5 x number of occurrences.
pub fn state_vector(entries: &[(SymbolId, f64, f64, f64, f64, f64)]) -> Vec<f64> {
    let mut sorted: Vec<_> = entries.to_vec();
    sorted.sort_by(|l, r| {
        (l.0, total_ord(l.3), total_ord(l.2))
            .partial_cmp(&(r.0, total_ord(r.3), total_ord(r.2)))
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let mut v = Vec::with_capacity(5 * sorted.len());
    for (_, a, bx, by, c, angle) in sorted {
        v.push(a);
        v.push(bx);
        v.push(by);
        v.push(c);
        v.push(math::wrap_angle(angle));
    }
    v
}

fn total_ord(x: f64) -> ordered::F64 {
    ordered::F64(x)
}

mod ordered {
    /// Total order on finite f64 for sort keys.
    #[derive(PartialEq, Clone, Copy)]
    pub struct F64(pub f64);
    impl Eq for F64 {}
    impl PartialOrd for F64 {
        fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for F64 {
        fn cmp(&self, other: &Self) -> core::cmp::Ordering {
            self.0.partial_cmp(&other.0).unwrap_or(core::cmp::Ordering::Equal)
        }
    }
}

pub fn normalized(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    normalized_in_place(&mut out);
    out
}

pub fn normalized_in_place(v: &mut [f64]) {
    let n = math::l2_norm(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

fn isqrt(n: usize) -> usize {
    let mut g = math::sqrt(n as f64) as usize;
    while g * g < n {
        g += 1;
    }
    while g > 0 && g * g > n {
        g -= 1;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn identity_template_scores_one() {
        let t = normalized(&[0.3, 0.4, 0.1, 0.2]);
        let op = IdentifyingOperator::from_seed(OperatorSpace::Pixel, t.clone(), 0.8);
        let (score, tr) = op.identify(&t, &TransformGrid::identity()).unwrap();
        assert!((score - 1.0).abs() < 1e-12);
        assert!(tr.is_identity());
    }

    #[test]
    fn orthogonal_scores_zero() {
        let op =
            IdentifyingOperator::from_seed(OperatorSpace::Pixel, vec![1.0, 0.0, 0.0, 0.0], 0.8);
        let (score, _) = op
            .identify(&[0.0, 1.0, 0.0, 0.0], &TransformGrid::identity())
            .unwrap();
        assert_eq!(score, 0.0);
    }

    #[test]
    fn dimension_mismatch_errors() {
        let op = IdentifyingOperator::from_seed(OperatorSpace::Pixel, vec![1.0, 0.0], 0.8);
        let err = op.identify(&[1.0], &TransformGrid::identity()).unwrap_err();
        assert!(matches!(err, OperatorError::DimensionMismatch { .. }));
    }

    #[test]
    fn absorb_identical_is_fixed_point() {
        let t = normalized(&[0.5, 0.5, 0.5, 0.5]);
        let mut op = IdentifyingOperator::from_seed(OperatorSpace::Pixel, t.clone(), 0.8);
        op.absorb(&t).unwrap();
        for (a, b) in op.template.iter().zip(&t) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(op.member_count, 2);
    }

    #[test]
    fn absorb_equals_batch_mean() {
        let v1 = vec![1.0, 0.0, 0.0, 0.0];
        let v2 = vec![0.0, 1.0, 0.0, 0.0];
        let mut op = IdentifyingOperator::from_seed(OperatorSpace::Pixel, v1.clone(), 0.8);
        op.absorb(&v2).unwrap();
        let batch: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| (a + b) / 2.0).collect();
        for (m, b) in op.mean.iter().zip(&batch) {
            assert!((m - b).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_zero_sigma_is_identity() {
        let t = normalized(&[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(blur(&t, 2, 0.0), t);
    }

    #[test]
    fn blur_impulse_is_unit_gaussian_bump() {
        let mut t = vec![0.0; 49];
        t[24] = 1.0; // center of 7x7
        let b = blur(&t, 7, 1.0);
        assert!((math::l2_norm(&b) - 1.0).abs() < 1e-9);
        // peak stays at the center, mass spreads symmetrically
        let peak = b.iter().cloned().fold(0.0, f64::max);
        assert_eq!(b[24], peak);
        assert!((b[23] - b[25]).abs() < 1e-12);
        assert!((b[24 - 7] - b[24 + 7]).abs() < 1e-12);
    }

    #[test]
    fn child_vector_cosine_disjoint_and_identical() {
        let a = ChildVector::from_children([SymbolId(0), SymbolId(1)]);
        let b = ChildVector::from_children([SymbolId(2)]);
        assert_eq!(a.cosine(&b), 0.0);
        let c = ChildVector::from_children([SymbolId(1), SymbolId(0)]);
        assert!((a.cosine(&c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decide_boolean_combinations() {
        use crate::network::{BoolExpr, Symbol};
        let t = normalized(&[1.0, 0.0, 0.0, 0.0]);
        let near = normalized(&[0.9, 0.1, 0.0, 0.0]);
        let far = normalized(&[0.1, 0.9, 0.0, 0.0]);
        let mk = |thr: f64| IdentifyingOperator::from_seed(OperatorSpace::Pixel, t.clone(), thr);

        // single operator, score above threshold
        let sym = Symbol::ground(mk(0.8));
        let d = decide(&sym, &SpaceVectors::pixel(&near), &TransformGrid::identity()).unwrap();
        assert!(d.accepted);

        // AND of two operators, one failing
        let mut sym2 = Symbol::ground(mk(0.8));
        sym2.operators.push(mk(0.999));
        sym2.operator_combination = BoolExpr::and_all(2);
        let d = decide(&sym2, &SpaceVectors::pixel(&near), &TransformGrid::identity()).unwrap();
        assert!(!d.accepted);

        // OR tree, one passing
        let mut sym3 = Symbol::ground(mk(0.999));
        sym3.operators.push(mk(0.8));
        sym3.operator_combination = BoolExpr::Or(vec![BoolExpr::Op(0), BoolExpr::Op(1)]);
        let d = decide(&sym3, &SpaceVectors::pixel(&near), &TransformGrid::identity()).unwrap();
        assert!(d.accepted);

        let d = decide(&sym, &SpaceVectors::pixel(&far), &TransformGrid::identity()).unwrap();
        assert!(!d.accepted);
    }

    #[test]
    fn missing_space_errors() {
        use crate::network::Symbol;
        let op = IdentifyingOperator::from_seed(
            OperatorSpace::ChildComposition,
            vec![1.0, 0.0],
            0.8,
        );
        let mut sym = Symbol::ground(op);
        sym.layer = 1; // not validated here; decide only reads operators
        let err = decide(&sym, &SpaceVectors::default(), &TransformGrid::identity()).unwrap_err();
        assert!(matches!(
            err,
            OperatorError::MissingSpace(OperatorSpace::ChildComposition)
        ));
    }

    #[test]
    fn scale_invariance_of_identification() {
        let t = normalized(&[0.2, 0.7, 0.1, 0.4]);
        let op = IdentifyingOperator::from_seed(OperatorSpace::Pixel, t.clone(), 0.8);
        let v = [0.4, 0.3, 0.8, 0.1];
        let scaled: Vec<f64> = v.iter().map(|x| x * 7.25).collect();
        let (s1, _) = op.identify(&normalized(&v), &TransformGrid::identity()).unwrap();
        let (s2, _) = op
            .identify(&normalized(&scaled), &TransformGrid::identity())
            .unwrap();
        assert!((s1 - s2).abs() < 1e-12);
    }
}
