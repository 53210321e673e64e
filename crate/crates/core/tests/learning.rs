//! End-to-end learning on the synthetic corpus, checked against the shape
//! library as an independent oracle: the learned dictionary must recover the
//! five ground shapes and the two compositions, and survive recognition,
//! generation, Bayesian decision and incremental growth.

use std::collections::BTreeMap;

use dsn_core::infer::{self, ClassPosteriors, GenerateConfig};
use dsn_core::learn::{self, LayerThresholds, StopReason, TrainingConfig};
use dsn_core::operator::{blur, TransformGrid};
use dsn_core::synth::{self, CorpusSpec, ShapeKind};
use dsn_core::{Image, SymbolId, SymbolNetwork};

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn config() -> TrainingConfig {
    // The bar orientations are distinct shapes here, so the rotation search
    // stays off.
    TrainingConfig {
        transform_grid: TransformGrid::identity(),
        ..TrainingConfig::default()
    }
}

fn corpus_images(spec: &CorpusSpec) -> (Vec<Image>, Vec<ShapeKind>) {
    let corpus = synth::make_corpus(spec);
    let kinds = corpus.iter().map(|(_, t)| t.kind).collect();
    (corpus.into_iter().map(|(i, _)| i).collect(), kinds)
}

fn train(spec: &CorpusSpec) -> (SymbolNetwork, learn::LearnReport) {
    let (images, _) = corpus_images(spec);
    learn::learn_unsupervised(&images, &config()).unwrap()
}

/// Match every layer-0 symbol to the closest library shape by blurred
/// template cosine; the match must be a bijection with high scores.
fn ground_map(net: &SymbolNetwork, cfg: &TrainingConfig) -> BTreeMap<SymbolId, ShapeKind> {
    let g = cfg.grid_size;
    let mut map = BTreeMap::new();
    for sym in net.symbols_at_layer(0) {
        let learned = sym.operators[0].effective_template();
        let (best, score) = ShapeKind::GROUND
            .iter()
            .map(|&k| {
                let oracle = blur(&synth::shape_template(k, g).unwrap(), g, cfg.blur_sigma);
                (k, cosine(&learned, &oracle))
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!(
            score > 0.9,
            "symbol {} matches {} only at {score:.3}",
            sym.id,
            best.name()
        );
        map.insert(sym.id, best);
    }
    let mut kinds: Vec<ShapeKind> = map.values().copied().collect();
    kinds.sort();
    kinds.dedup();
    assert_eq!(kinds.len(), map.len(), "two symbols claim one shape");
    map
}

/// Composite symbols identified by their child-shape multiset.
fn composite_map(
    net: &SymbolNetwork,
    ground: &BTreeMap<SymbolId, ShapeKind>,
) -> BTreeMap<SymbolId, ShapeKind> {
    let mut map = BTreeMap::new();
    for sym in net.symbols.values().filter(|s| s.layer > 0) {
        let mut parts: Vec<ShapeKind> = sym.children.iter().map(|c| ground[&c.child]).collect();
        parts.sort();
        let kind = [ShapeKind::Corner, ShapeKind::Eight]
            .into_iter()
            .find(|k| {
                let mut p = k.parts();
                p.sort();
                p == parts
            })
            .unwrap_or_else(|| panic!("symbol {} has unexpected parts {parts:?}", sym.id));
        map.insert(sym.id, kind);
    }
    map
}

#[test]
fn clean_corpus_recovers_the_shape_dictionary() {
    let (net, report) = train(&CorpusSpec::default());
    net.validate().unwrap();
    assert_eq!(report.symbols_at_layer(0), 5);
    assert_eq!(report.symbols_at_layer(1), 2);
    assert_eq!(report.stop, Some(StopReason::NoNewSymbols));

    let cfg = config();
    let ground = ground_map(&net, &cfg);
    assert_eq!(ground.len(), 5);
    let comps = composite_map(&net, &ground);
    let mut kinds: Vec<ShapeKind> = comps.values().copied().collect();
    kinds.sort();
    assert_eq!(kinds, vec![ShapeKind::Corner, ShapeKind::Eight]);

    // Every composite slot carries the state statistics of its occurrences.
    for sym in net.symbols.values().filter(|s| s.layer > 0) {
        for slot in &sym.children {
            assert!(slot.stats.count() > 0);
            assert!(slot.stats.c.mean > 0.0 && slot.stats.c.mean <= 1.5);
            assert!((0.0..=1.0).contains(&slot.stats.bx.mean));
            assert!((0.0..=1.0).contains(&slot.stats.by.mean));
        }
    }
}

#[test]
fn jittered_corpus_learns_the_same_structure() {
    let spec = CorpusSpec {
        noise: 0.03,
        jitter: 1.0,
        seed: 5,
        ..CorpusSpec::default()
    };
    let (net, report) = train(&spec);
    net.validate().unwrap();
    assert_eq!(report.symbols_at_layer(0), 5);
    assert_eq!(report.symbols_at_layer(1), 2);
    ground_map(&net, &config());
}

#[test]
fn held_out_samples_are_recognized_correctly() {
    let (net, _) = train(&CorpusSpec::default());
    let cfg = config();
    let ground = ground_map(&net, &cfg);
    let comps = composite_map(&net, &ground);
    let mut kind_of: BTreeMap<SymbolId, ShapeKind> = ground;
    kind_of.extend(comps);

    let spec = CorpusSpec {
        per_shape: 4,
        noise: 0.02,
        jitter: 1.0,
        seed: 99,
        ..CorpusSpec::default()
    };
    let (images, truths) = corpus_images(&spec);
    let mut correct = 0;
    for (img, truth) in images.iter().zip(&truths) {
        let res = infer::recognize(&net, img, &cfg).unwrap();
        assert!(
            res.unexplained_boxes.is_empty(),
            "{}: unexplained {:?}",
            truth.name(),
            res.unexplained_boxes
        );
        let roots = res.root_symbols();
        if roots.len() == 1 && kind_of[&roots[0]] == *truth {
            correct += 1;
        }
    }
    let total = images.len();
    assert!(
        correct * 100 >= total * 95,
        "only {correct}/{total} held-out samples recognized"
    );
}

#[test]
fn recognition_exposes_its_scan_trace() {
    let (net, _) = train(&CorpusSpec::default());
    let cfg = config();
    let mut rng = rand::SeedableRng::seed_from_u64(1);
    let img = synth::render_shape(ShapeKind::Corner, 32, 0.0, &mut rng);
    let res = infer::recognize(&net, &img, &cfg).unwrap();
    assert!(!res.scan_log.is_empty());
    // Each accepted event must clear the layer threshold actually used.
    for e in &res.scan_log {
        if e.accepted.is_some() {
            assert!(e.best_score > 0.0);
        }
    }
    // The corner instance decomposes into two child instances.
    assert_eq!(res.instances.len(), 1);
    assert_eq!(res.instances[0].children.len(), 2);
}

#[test]
fn generated_samples_round_trip_through_recognition() {
    let (net, _) = train(&CorpusSpec::default());
    let cfg = config();
    let gen = GenerateConfig::default();
    for sym in net.symbols.values() {
        let mut hits = 0;
        for seed in 0..3 {
            let img = infer::generate(&net, sym.id, seed, &gen).unwrap();
            assert!(img.max_value() > 0.0, "symbol {} rendered blank", sym.id);
            let res = infer::recognize(&net, &img, &cfg).unwrap();
            if res.symbols_present().contains(&sym.id) {
                hits += 1;
            }
        }
        assert!(
            hits >= 2,
            "symbol {} round-tripped only {hits}/3 seeds",
            sym.id
        );
    }
}

#[test]
fn generation_is_deterministic_per_seed() {
    let (net, _) = train(&CorpusSpec::default());
    // A composite with state jitter: the sampled slot states depend on the
    // seed. The clean corpus alone has zero slot variance.
    let id = net.symbols.values().find(|s| s.layer > 0).unwrap().id;
    let gen = GenerateConfig {
        jitter: 0.05,
        ..GenerateConfig::default()
    };
    let a = infer::generate(&net, id, 42, &gen).unwrap();
    let b = infer::generate(&net, id, 42, &gen).unwrap();
    let c = infer::generate(&net, id, 43, &gen).unwrap();
    assert_eq!(a.values, b.values);
    assert_ne!(a.values, c.values);
}

#[test]
fn probability_tables_reflect_corpus_statistics() {
    let (net, _) = train(&CorpusSpec::default());
    let ground = ground_map(&net, &config());
    let comps = composite_map(&net, &ground);
    let circle = *ground.iter().find(|(_, k)| **k == ShapeKind::Circle).unwrap().0;
    let hbar = *ground.iter().find(|(_, k)| **k == ShapeKind::HBar).unwrap().0;
    let dbar = *ground.iter().find(|(_, k)| **k == ShapeKind::DBar).unwrap().0;
    let eight = *comps.iter().find(|(_, k)| **k == ShapeKind::Eight).unwrap().0;

    // The circle also occurs inside every eight sample, the diagonal bar
    // only in its own samples.
    assert!(net.tables.prior(circle) > net.tables.prior(dbar));
    // An eight co-occurs with circles, never with bars.
    assert!(net.tables.cond(eight, circle) > net.tables.cond(eight, hbar));
    for (&(_, _), &p) in &net.tables.cond {
        assert!(p > 0.0 && p <= 1.0);
    }
}

#[test]
fn bayes_decision_uses_composition_context() {
    let (net, _) = train(&CorpusSpec::default());
    let ground = ground_map(&net, &config());
    let comps = composite_map(&net, &ground);
    let vbar = *ground.iter().find(|(_, k)| **k == ShapeKind::VBar).unwrap().0;
    let circle = *ground.iter().find(|(_, k)| **k == ShapeKind::Circle).unwrap().0;
    let corner = *comps.iter().find(|(_, k)| **k == ShapeKind::Corner).unwrap().0;
    let eight = *comps.iter().find(|(_, k)| **k == ShapeKind::Eight).unwrap().0;

    let d = infer::decide_bayes(&net, &[vbar], &[corner, eight], 4).unwrap();
    assert_eq!(d.best, corner, "a bar argues for the corner");
    let d = infer::decide_bayes(&net, &[circle], &[corner, eight], 4).unwrap();
    assert_eq!(d.best, eight, "a circle argues for the eight");
    let total: f64 = d.posterior.iter().map(|(_, p)| p).sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn incremental_learning_adds_a_new_composition_over_known_parts() {
    // Start from the five ground shapes only.
    let spec = CorpusSpec {
        shapes: ShapeKind::GROUND.to_vec(),
        ..CorpusSpec::default()
    };
    let (images, _) = corpus_images(&spec);
    let cfg = config();
    let (net, _) = learn::learn_unsupervised(&images, &cfg).unwrap();
    assert_eq!(net.len(), 5);
    let before: Vec<SymbolId> = net.ids().collect();

    // Feed corners: the parts are known, the composition is new.
    let spec = CorpusSpec {
        shapes: vec![ShapeKind::Corner],
        seed: 3,
        ..CorpusSpec::default()
    };
    let (more, _) = corpus_images(&spec);
    let (net, report) = learn::incremental_learn(&net, &more, &cfg).unwrap();
    net.validate().unwrap();
    assert_eq!(report.symbols_created(), 1, "exactly the corner is new");
    let new_id = net.ids().find(|id| !before.contains(id)).unwrap();
    let new_sym = net.symbol(new_id).unwrap();
    assert_eq!(new_sym.layer, 1);
    let ground = ground_map(&net, &cfg);
    let mut parts: Vec<ShapeKind> = new_sym.children.iter().map(|c| ground[&c.child]).collect();
    parts.sort();
    let mut want = ShapeKind::Corner.parts();
    want.sort();
    assert_eq!(parts, want);
}

#[test]
fn incremental_learning_on_known_shapes_adds_nothing() {
    let (net, _) = train(&CorpusSpec::default());
    let n = net.len();
    let spec = CorpusSpec {
        seed: 11,
        noise: 0.02,
        jitter: 0.5,
        ..CorpusSpec::default()
    };
    let (more, _) = corpus_images(&spec);
    let (net, report) = learn::incremental_learn(&net, &more, &config()).unwrap();
    net.validate().unwrap();
    assert_eq!(report.symbols_created(), 0);
    assert_eq!(net.len(), n);
}

#[test]
fn supervised_tuning_picks_an_accurate_operating_point() {
    let spec = CorpusSpec {
        per_shape: 10,
        noise: 0.02,
        jitter: 0.5,
        seed: 2,
        ..CorpusSpec::default()
    };
    let (images, kinds) = corpus_images(&spec);
    let labels: Vec<u32> = kinds
        .iter()
        .map(|k| ShapeKind::ALL.iter().position(|a| a == k).unwrap() as u32)
        .collect();
    let grid = [
        LayerThresholds { lambda: 0.80, mu: 3 },
        LayerThresholds { lambda: 0.85, mu: 3 },
        LayerThresholds { lambda: 0.99, mu: 3 },
    ];
    let (net, best, trace) = learn::tune_supervised(&images, &labels, &config(), &grid).unwrap();
    assert_eq!(trace.len(), grid.len());
    let best_acc = trace
        .iter()
        .filter(|t| !t.failed)
        .map(|t| t.accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    let winner = trace
        .iter()
        .find(|t| t.lambda == best.lambda && t.mu == best.mu)
        .unwrap();
    assert_eq!(winner.accuracy, best_acc);
    assert!(winner.accuracy >= 0.8, "accuracy {:.2}", winner.accuracy);
    assert!(!net.is_empty());

    // The tuned network still supports class posteriors end to end.
    let post = ClassPosteriors::fit(&net, &images, &labels, &config());
    let hit = images
        .iter()
        .zip(&labels)
        .filter(|(img, &l)| post.classify(&net, img, &config()) == Some(l))
        .count();
    assert!(hit * 100 >= images.len() * 80);
}
