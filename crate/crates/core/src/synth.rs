//! Synthetic shape library and corpus generator: five ground shapes (three
//! bar orientations, an open arc, a circle) and two composites (a corner made
//! of two bars, a figure of two stacked circles), rendered analytically with
//! seeded jitter and pixel noise, paired with ground-truth part lists.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::image::Image;
use crate::network::{CompositionSlot, Symbol, SymbolId, SymbolNetwork};
use crate::render::{self, STROKE_WIDTH};
use crate::signal::{self, SignalError};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum ShapeKind {
    HBar,
    VBar,
    DBar,
    Arc,
    Circle,
    /// Two bars joined at a right-angle corner (one stroke).
    Corner,
    /// Two stacked, non-touching circles.
    Eight,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 7] = [
        ShapeKind::HBar,
        ShapeKind::VBar,
        ShapeKind::DBar,
        ShapeKind::Arc,
        ShapeKind::Circle,
        ShapeKind::Corner,
        ShapeKind::Eight,
    ];

    pub const GROUND: [ShapeKind; 5] = [
        ShapeKind::HBar,
        ShapeKind::VBar,
        ShapeKind::DBar,
        ShapeKind::Arc,
        ShapeKind::Circle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::HBar => "h-bar",
            ShapeKind::VBar => "v-bar",
            ShapeKind::DBar => "d-bar",
            ShapeKind::Arc => "arc",
            ShapeKind::Circle => "circle",
            ShapeKind::Corner => "corner",
            ShapeKind::Eight => "eight",
        }
    }

    pub fn is_composite(self) -> bool {
        matches!(self, ShapeKind::Corner | ShapeKind::Eight)
    }

    /// Ground shapes a composite decomposes into (itself for ground shapes).
    pub fn parts(self) -> Vec<ShapeKind> {
        match self {
            ShapeKind::Corner => vec![ShapeKind::VBar, ShapeKind::HBar],
            ShapeKind::Eight => vec![ShapeKind::Circle, ShapeKind::Circle],
            k => vec![k],
        }
    }
}

/// Expected content of one generated sample.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SampleTruth {
    pub kind: ShapeKind,
    pub parts: Vec<ShapeKind>,
}

/// Parameters of a synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct CorpusSpec {
    pub shapes: Vec<ShapeKind>,
    /// Samples generated per listed shape.
    pub per_shape: usize,
    /// Canvas side in pixels.
    pub size: usize,
    /// Std of additive Gaussian pixel noise.
    pub noise: f64,
    /// Max geometric perturbation in pixels (position and size).
    pub jitter: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            shapes: ShapeKind::ALL.to_vec(),
            per_shape: 8,
            size: 32,
            noise: 0.0,
            jitter: 0.0,
            seed: 0,
        }
    }
}

/// Render one shape with geometric jitter drawn from `rng`.
pub fn render_shape(kind: ShapeKind, size: usize, jitter: f64, rng: &mut ChaCha8Rng) -> Image {
    let mut img = Image::new(size, size);
    let s = size as f64;
    let m = (s * 0.15).max(3.0);
    let j = |rng: &mut ChaCha8Rng| -> f64 {
        if jitter > 0.0 {
            rng.gen_range(-jitter..=jitter)
        } else {
            0.0
        }
    };
    match kind {
        ShapeKind::HBar => {
            let y = s / 2.0 + j(rng);
            render::draw_segment(&mut img, (m + j(rng), y), (s - m + j(rng), y), STROKE_WIDTH, 1.0);
        }
        ShapeKind::VBar => {
            let x = s / 2.0 + j(rng);
            render::draw_segment(&mut img, (x, m + j(rng)), (x, s - m + j(rng)), STROKE_WIDTH, 1.0);
        }
        ShapeKind::DBar => {
            render::draw_segment(
                &mut img,
                (m + j(rng), s - m + j(rng)),
                (s - m + j(rng), m + j(rng)),
                STROKE_WIDTH,
                1.0,
            );
        }
        ShapeKind::Arc => {
            // upper half circle (y grows downward)
            let c = (s / 2.0 + j(rng), s * 0.55 + j(rng));
            let r = s * 0.3 + j(rng) * 0.5;
            render::draw_arc(
                &mut img,
                c,
                r,
                core::f64::consts::PI,
                2.0 * core::f64::consts::PI,
                STROKE_WIDTH,
                1.0,
            );
        }
        ShapeKind::Circle => {
            let c = (s / 2.0 + j(rng), s / 2.0 + j(rng));
            let r = s * 0.3 + j(rng) * 0.5;
            render::draw_circle(&mut img, c, r, STROKE_WIDTH, 1.0);
        }
        ShapeKind::Corner => {
            let x = m + j(rng);
            let y = s - m + j(rng);
            let top = (x, m + j(rng));
            let corner = (x, y);
            let end = (s - m + j(rng), y);
            render::draw_segment(&mut img, top, corner, STROKE_WIDTH, 1.0);
            render::draw_segment(&mut img, corner, end, STROKE_WIDTH, 1.0);
        }
        ShapeKind::Eight => {
            // the circles must stay clearly separated after smoothing
            let r = s * 0.15 + j(rng) * 0.25;
            let cx = s / 2.0 + j(rng);
            render::draw_circle(&mut img, (cx, s * 0.25 + j(rng) * 0.5), r, STROKE_WIDTH, 1.0);
            render::draw_circle(&mut img, (cx, s * 0.75 + j(rng) * 0.5), r, STROKE_WIDTH, 1.0);
        }
    }
    img
}

/// Generate a corpus: `per_shape` samples of every listed shape, in listed
/// order, with seeded jitter and pixel noise. Deterministic per spec.
pub fn make_corpus(spec: &CorpusSpec) -> Vec<(Image, SampleTruth)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = if spec.noise > 0.0 {
        Normal::new(0.0, spec.noise).ok()
    } else {
        None
    };
    let mut out = Vec::with_capacity(spec.shapes.len() * spec.per_shape);
    for _ in 0..spec.per_shape {
        for &kind in &spec.shapes {
            let mut img = render_shape(kind, spec.size, spec.jitter, &mut rng);
            if let Some(n) = &noise {
                for v in img.values.iter_mut() {
                    *v = (*v + n.sample(&mut rng)).clamp(0.0, 1.0);
                }
            }
            out.push((
                img,
                SampleTruth {
                    kind,
                    parts: kind.parts(),
                },
            ));
        }
    }
    out
}

/// Canonical template of a ground shape: a clean render cropped to its ink
/// and canonicalized to the grid. Serves as an oracle for learned templates.
pub fn shape_template(kind: ShapeKind, grid_size: usize) -> Result<Vec<f64>, SignalError> {
    assert!(!kind.is_composite(), "templates exist for ground shapes only");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let img = render_shape(kind, 32, 0.0, &mut rng);
    let bbox = signal::ink_bbox(&img, 0.05).ok_or(SignalError::ZeroEnergy)?;
    Ok(signal::canonicalize(&img, &bbox, grid_size)?.vector)
}

/// Hand-built reference network over the shape library: the five ground
/// shapes as template operators plus the two composites, with slot geometry
/// measured from clean renders and nominal probability tables. Deterministic;
/// the independent counterpart for round-trip tests against learned networks.
pub fn build_shape_library() -> SymbolNetwork {
    use crate::learn::TrainingConfig;
    use crate::operator::{IdentifyingOperator, OperatorSpace};
    use alloc::collections::{BTreeMap, BTreeSet};

    let cfg = TrainingConfig::default();
    let g = cfg.grid_size;
    let mut net = SymbolNetwork::new();
    let mut ids: BTreeMap<ShapeKind, SymbolId> = BTreeMap::new();
    for kind in ShapeKind::GROUND {
        let mut op = IdentifyingOperator::from_seed(
            OperatorSpace::Pixel,
            shape_template(kind, g).unwrap(),
            cfg.thresholds_for(0).lambda,
        );
        op.blur_sigma = cfg.blur_sigma;
        let id = net
            .add_symbol(Symbol::ground(op).with_name(kind.name()))
            .unwrap();
        ids.insert(kind, id);
    }
    for kind in [ShapeKind::Corner, ShapeKind::Eight] {
        // Measure slot geometry from the clean render's own box hierarchy.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = render_shape(kind, 32, 0.0, &mut rng);
        let pieces =
            signal::extract_pieces(&img, 0, &cfg.detector, g).unwrap();
        let parent = (0..pieces.len())
            .filter(|&i| pieces[i].parent_piece == Some(0) || pieces[i].parent_piece.is_none())
            .max_by(|&a, &b| {
                pieces[a]
                    .raw_box
                    .extent()
                    .total_cmp(&pieces[b].raw_box.extent())
            })
            .unwrap();
        let parent = if kind == ShapeKind::Corner {
            // the component box under the sample root, not the root itself
            (0..pieces.len())
                .find(|&i| pieces[i].parent_piece == Some(0))
                .unwrap()
        } else {
            parent
        };
        let mut leaves: Vec<usize> = (0..pieces.len())
            .filter(|&i| {
                pieces[i].parent_piece.is_some()
                    && !pieces.iter().any(|q| q.parent_piece == Some(i))
            })
            .collect();
        leaves.sort_by_key(|&i| pieces[i].raw_box.y0);
        debug_assert_eq!(leaves.len(), 2);
        // Pair each leaf with its part kind: tall box = vertical bar.
        let parts = kind.parts();
        let mut slots = Vec::new();
        for &li in &leaves {
            let b = &pieces[li].raw_box;
            let part = if parts[0] == parts[1] {
                parts[0]
            } else if b.height() > b.width() {
                ShapeKind::VBar
            } else {
                ShapeKind::HBar
            };
            let pb = &pieces[parent].raw_box;
            let (cx, cy) = b.center();
            let mut slot = CompositionSlot::new(ids[&part]);
            slot.stats.push(
                pieces[li].a_raw / pieces[parent].a_raw,
                (cx - pb.x0 as f64) / pb.width() as f64,
                (cy - pb.y0 as f64) / pb.height() as f64,
                b.extent() / pb.extent(),
                0.0,
            );
            slots.push(slot);
        }
        let basis: Vec<SymbolId> = ids.values().copied().collect();
        let child_counts =
            crate::operator::ChildVector::from_children(slots.iter().map(|s| s.child));
        let mut op = IdentifyingOperator::from_seed(
            OperatorSpace::ChildComposition,
            child_counts.to_unit_dense(&basis),
            cfg.thresholds_for(1).lambda,
        );
        op.basis = Some(basis);
        let id = net
            .add_symbol(Symbol::composite(alloc::vec![op], slots).with_name(kind.name()))
            .unwrap();
        ids.insert(kind, id);
    }
    // Nominal occurrence sets: one sample per shape, composites with parts.
    let occ: Vec<BTreeSet<SymbolId>> = ShapeKind::ALL
        .iter()
        .map(|&k| {
            let mut set: BTreeSet<SymbolId> =
                k.parts().into_iter().map(|p| ids[&p]).collect();
            set.insert(ids[&k]);
            set
        })
        .collect();
    net.tables = crate::learn::record_probabilities(&net, &occ);
    net.meta.config = Some(cfg);
    net
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math;

    #[test]
    fn shape_library_is_valid_and_renders_recognizable_composites() {
        let net = build_shape_library();
        net.validate().unwrap();
        assert_eq!(net.symbols_at_layer(0).count(), 5);
        assert_eq!(net.symbols.values().filter(|s| s.layer == 1).count(), 2);
        let eight = net
            .symbols
            .values()
            .find(|s| s.name.as_deref() == Some("eight"))
            .unwrap();
        let circle = net
            .symbols
            .values()
            .find(|s| s.name.as_deref() == Some("circle"))
            .unwrap();
        let img = crate::infer::generate(
            &net,
            eight.id,
            0,
            &crate::infer::GenerateConfig::default(),
        )
        .unwrap();
        let cfg = crate::learn::TrainingConfig {
            transform_grid: crate::operator::TransformGrid::identity(),
            ..crate::learn::TrainingConfig::default()
        };
        let res = crate::infer::recognize(&net, &img, &cfg).unwrap();
        let circles = res
            .scan_log
            .iter()
            .filter(|e| e.accepted == Some(circle.id))
            .count();
        assert_eq!(circles, 2, "both component boxes must read as circles");
    }

    #[test]
    fn corpus_is_deterministic_per_seed() {
        let spec = CorpusSpec {
            per_shape: 2,
            noise: 0.05,
            jitter: 1.0,
            ..CorpusSpec::default()
        };
        let a = make_corpus(&spec);
        let b = make_corpus(&spec);
        assert_eq!(a.len(), b.len());
        for ((ia, ta), (ib, tb)) in a.iter().zip(&b) {
            assert_eq!(ia.values, ib.values);
            assert_eq!(ta, tb);
        }
        let c = make_corpus(&CorpusSpec { seed: 1, ..spec });
        assert!(a.iter().zip(&c).any(|((ia, _), (ic, _))| ia.values != ic.values));
    }

    #[test]
    fn ground_templates_are_mutually_distinct() {
        let templates: Vec<Vec<f64>> = ShapeKind::GROUND
            .iter()
            .map(|&k| shape_template(k, 16).unwrap())
            .collect();
        for i in 0..templates.len() {
            assert!((math::l2_norm(&templates[i]) - 1.0).abs() < 1e-9);
            for j in (i + 1)..templates.len() {
                let cos = math::cosine(&templates[i], &templates[j]);
                assert!(
                    cos < 0.8,
                    "{} vs {} too similar: {cos}",
                    ShapeKind::GROUND[i].name(),
                    ShapeKind::GROUND[j].name()
                );
            }
        }
    }

    #[test]
    fn composite_parts_list_ground_shapes() {
        assert_eq!(ShapeKind::Corner.parts(), vec![ShapeKind::VBar, ShapeKind::HBar]);
        assert_eq!(
            ShapeKind::Eight.parts(),
            vec![ShapeKind::Circle, ShapeKind::Circle]
        );
        assert_eq!(ShapeKind::HBar.parts(), vec![ShapeKind::HBar]);
    }

    #[test]
    fn eight_has_two_separated_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = render_shape(ShapeKind::Eight, 32, 0.0, &mut rng);
        let cfg = crate::signal::DetectorConfig::default();
        let mask = signal::ink_mask(&img, &cfg);
        let comps = signal::connected_components(&mask, img.width, img.height);
        assert_eq!(comps.len(), 2);
    }
}
