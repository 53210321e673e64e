//! Detector soundness on analytically known inputs: each singularity kind is
//! exercised by a construction whose true break locations are known in
//! closed form, and the induced box hierarchy is checked against them.

use dsn_core::image::Image;
use dsn_core::render::{self, STROKE_WIDTH};
use dsn_core::signal::{self, DetectorConfig, SingularityKind};
use dsn_core::synth::{self, ShapeKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn clean(kind: ShapeKind, size: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    synth::render_shape(kind, size, 0.0, &mut rng)
}

fn breaks_of(img: &Image, kind: SingularityKind) -> Vec<(f64, f64)> {
    signal::detect_singularities(img, &DetectorConfig::default())
        .unwrap()
        .into_iter()
        .filter(|p| p.kind == kind)
        .map(|p| (p.x, p.y))
        .collect()
}

#[test]
fn corner_produces_exactly_one_slope_break_at_the_junction() {
    let size = 32;
    let img = clean(ShapeKind::Corner, size);
    let breaks = breaks_of(&img, SingularityKind::SlopeBreak);
    assert_eq!(breaks.len(), 1, "expected one corner, got {breaks:?}");
    // The strokes meet at (m, size - m) with m = 0.15 * size.
    let m = (size as f64 * 0.15).max(3.0);
    let (x, y) = breaks[0];
    let d = ((x - m).powi(2) + (y - (size as f64 - m)).powi(2)).sqrt();
    assert!(d < 4.0, "break at ({x},{y}) is {d:.1}px from the junction");
}

#[test]
fn smooth_strokes_have_no_tangent_breaks() {
    for kind in [
        ShapeKind::HBar,
        ShapeKind::VBar,
        ShapeKind::DBar,
        ShapeKind::Arc,
        ShapeKind::Circle,
        ShapeKind::Eight,
    ] {
        let img = clean(kind, 32);
        let slope = breaks_of(&img, SingularityKind::SlopeBreak);
        let curv = breaks_of(&img, SingularityKind::CurvatureBreak);
        assert!(
            slope.is_empty() && curv.is_empty(),
            "{}: spurious breaks slope={slope:?} curvature={curv:?}",
            kind.name()
        );
    }
}

#[test]
fn line_arc_tangency_produces_a_curvature_break() {
    // Horizontal segment meeting a quarter circle with matched tangents: the
    // slope is continuous but the curvature jumps from 0 to 1/r at (24, 30).
    let size = 48;
    let mut img = Image::new(size, size);
    let r = 12.0;
    render::draw_segment(&mut img, (6.0, 30.0), (24.0, 30.0), STROKE_WIDTH, 1.0);
    render::draw_arc(
        &mut img,
        (24.0, 18.0),
        r,
        0.0,
        core::f64::consts::FRAC_PI_2,
        STROKE_WIDTH,
        1.0,
    );
    let slope = breaks_of(&img, SingularityKind::SlopeBreak);
    assert!(slope.is_empty(), "tangency misread as corner: {slope:?}");
    let curv = breaks_of(&img, SingularityKind::CurvatureBreak);
    assert!(!curv.is_empty(), "curvature jump of 1/r went undetected");
    let near = curv
        .iter()
        .any(|&(x, y)| ((x - 24.0).powi(2) + (y - 30.0).powi(2)).sqrt() < 7.0);
    assert!(near, "no curvature break near the tangency: {curv:?}");
}

#[test]
fn intensity_jumps_hug_the_stroke() {
    let img = clean(ShapeKind::HBar, 32);
    let jumps = breaks_of(&img, SingularityKind::IntensityJump);
    assert!(!jumps.is_empty(), "a hard edge must produce intensity jumps");
    // Every jump lies within the multi-scale smoothing halo of the bar.
    let y_mid = 16.0;
    for &(x, y) in &jumps {
        assert!(
            (y - y_mid).abs() < 6.0,
            "jump at ({x},{y}) far from the stroke"
        );
    }
}

#[test]
fn single_stroke_yields_one_leaf_under_the_sample_root() {
    // Hierarchy: the whole-sample box, then one tight component box.
    let img = clean(ShapeKind::Circle, 32);
    let pieces = signal::extract_pieces(&img, 0, &DetectorConfig::default(), 16).unwrap();
    assert_eq!(pieces.len(), 2);
    assert_eq!(pieces[0].parent_piece, None);
    assert_eq!(pieces[1].parent_piece, Some(0));
    assert!(pieces[0].raw_box.contains_box(&pieces[1].raw_box));
    assert!(pieces[1].raw_box.extent() < 32.0, "component box must be tight");
}

#[test]
fn corner_box_hierarchy_has_two_children_under_the_component() {
    let img = clean(ShapeKind::Corner, 32);
    let pieces = signal::extract_pieces(&img, 0, &DetectorConfig::default(), 16).unwrap();
    let component = (0..pieces.len())
        .find(|&i| pieces[i].parent_piece == Some(0))
        .expect("component box under the sample root");
    let children: Vec<usize> = (0..pieces.len())
        .filter(|&i| pieces[i].parent_piece == Some(component))
        .collect();
    assert_eq!(children.len(), 2, "the slope break must split the stroke");
    for &c in &children {
        assert!(pieces[component].raw_box.contains_box(&pieces[c].raw_box));
    }
    // One child is tall (the vertical bar), the other wide.
    let tall = children
        .iter()
        .filter(|&&c| pieces[c].raw_box.height() > pieces[c].raw_box.width())
        .count();
    assert_eq!(tall, 1);
}

#[test]
fn two_components_yield_sibling_pieces_under_a_shared_root() {
    let img = clean(ShapeKind::Eight, 32);
    let pieces = signal::extract_pieces(&img, 0, &DetectorConfig::default(), 16).unwrap();
    let roots: Vec<usize> = (0..pieces.len())
        .filter(|&i| pieces[i].parent_piece.is_none())
        .collect();
    assert_eq!(roots.len(), 1);
    let children: Vec<usize> = (0..pieces.len())
        .filter(|&i| pieces[i].parent_piece == Some(roots[0]))
        .collect();
    assert_eq!(children.len(), 2);
    // The circles are stacked: disjoint vertical spans.
    let (a, b) = (&pieces[children[0]].raw_box, &pieces[children[1]].raw_box);
    assert!(a.y1 <= b.y0 || b.y1 <= a.y0, "circles must not overlap");
}

#[test]
fn pieces_record_unit_vectors_and_box_geometry() {
    let img = clean(ShapeKind::Arc, 32);
    let pieces = signal::extract_pieces(&img, 7, &DetectorConfig::default(), 16).unwrap();
    for p in &pieces {
        let norm: f64 = p.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert!(p.a_raw > 0.0);
        assert_eq!(p.sample_id, 7);
        assert_eq!(p.c_raw, p.raw_box.extent());
        let (cx, cy) = p.raw_box.center();
        assert_eq!(p.b_raw, (cx, cy));
    }
}
