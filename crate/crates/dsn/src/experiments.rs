//! Seeded, reproducible experiment protocols: threshold sweeps with plateau
//! detection, sample-size curves, and classifier evaluation. Points run in
//! parallel; per-point failures are recorded in the result, not fatal.

use std::collections::BTreeMap;

use dsn_core::infer::ClassPosteriors;
use dsn_core::learn::{self, LayerThresholds, TrainingConfig};
use dsn_core::operator;
use dsn_core::synth::{self, CorpusSpec, ShapeKind};
use dsn_core::Image;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub mu: usize,
    /// Symbols created per layer; empty on failure.
    pub symbols_per_layer: BTreeMap<u32, usize>,
    pub error: Option<String>,
}

/// Maximal contiguous lambda interval (per mu) with a constant layer-0
/// symbol count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub mu: usize,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub symbols: usize,
}

impl Plateau {
    pub fn width(&self) -> f64 {
        self.lambda_hi - self.lambda_lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub plateaus: Vec<Plateau>,
}

/// Learn once per grid point and report the symbol counts, plus the stable
/// lambda regions where the layer-0 count does not move.
pub fn run_threshold_sweep(
    samples: &[Image],
    grid: &[LayerThresholds],
    config: &TrainingConfig,
) -> SweepResult {
    let points: Vec<SweepPoint> = grid
        .par_iter()
        .map(|&point| {
            let mut cfg = config.clone();
            if cfg.thresholds.is_empty() {
                cfg.thresholds.push(point);
            } else {
                cfg.thresholds[0] = point;
            }
            match learn::learn_unsupervised(samples, &cfg) {
                Ok((_, report)) => {
                    let mut per_layer = BTreeMap::new();
                    for l in &report.layers {
                        *per_layer.entry(l.layer).or_insert(0) += l.symbols_created;
                    }
                    SweepPoint {
                        lambda: point.lambda,
                        mu: point.mu,
                        symbols_per_layer: per_layer,
                        error: None,
                    }
                }
                Err(e) => SweepPoint {
                    lambda: point.lambda,
                    mu: point.mu,
                    symbols_per_layer: BTreeMap::new(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let plateaus = find_plateaus(&points);
    SweepResult { points, plateaus }
}

fn find_plateaus(points: &[SweepPoint]) -> Vec<Plateau> {
    let mut by_mu: BTreeMap<usize, Vec<&SweepPoint>> = BTreeMap::new();
    for p in points.iter().filter(|p| p.error.is_none()) {
        by_mu.entry(p.mu).or_default().push(p);
    }
    let mut out = Vec::new();
    for (mu, mut pts) in by_mu {
        pts.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        let mut run: Option<(f64, f64, usize)> = None;
        for p in pts {
            let count = p.symbols_per_layer.get(&0).copied().unwrap_or(0);
            run = match run {
                Some((lo, _, c)) if c == count => Some((lo, p.lambda, c)),
                Some((lo, hi, c)) => {
                    out.push(Plateau {
                        mu,
                        lambda_lo: lo,
                        lambda_hi: hi,
                        symbols: c,
                    });
                    Some((p.lambda, p.lambda, count))
                }
                None => Some((p.lambda, p.lambda, count)),
            };
        }
        if let Some((lo, hi, c)) = run {
            out.push(Plateau {
                mu,
                lambda_lo: lo,
                lambda_hi: hi,
                symbols: c,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyPoint {
    /// Total corpus size (samples across all shapes).
    pub size: usize,
    /// Ground-shape recovery rate per seeded repeat.
    pub rates: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Recovery rate versus training-set size on the synthetic corpus: for each
/// size, `repeats` fresh corpora are learned and scored against the shape
/// library oracle (a shape counts as recovered when some layer-0 template
/// matches it at cosine > 0.9 after the shared blur).
pub fn run_sample_size_study(
    base: &CorpusSpec,
    sizes: &[usize],
    config: &TrainingConfig,
    repeats: u64,
) -> Vec<StudyPoint> {
    assert!(repeats >= 1);
    assert!(sizes.windows(2).all(|w| w[0] <= w[1]), "sizes must ascend");
    sizes
        .par_iter()
        .map(|&size| {
            let per_shape = (size / base.shapes.len()).max(1);
            let rates: Vec<f64> = (0..repeats)
                .map(|r| {
                    let spec = CorpusSpec {
                        per_shape,
                        seed: base.seed.wrapping_add(1 + r),
                        ..base.clone()
                    };
                    let images: Vec<Image> = synth::make_corpus(&spec)
                        .into_iter()
                        .map(|(i, _)| i)
                        .collect();
                    match learn::learn_unsupervised(&images, config) {
                        Ok((net, _)) => recovery_rate(&net, config),
                        Err(_) => 0.0,
                    }
                })
                .collect();
            let n = rates.len() as f64;
            let mean = rates.iter().sum::<f64>() / n;
            let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
            StudyPoint {
                size: per_shape * base.shapes.len(),
                rates,
                mean,
                std: var.sqrt(),
            }
        })
        .collect()
}

/// Fraction of the five library shapes matched by some layer-0 symbol.
pub fn recovery_rate(net: &dsn_core::SymbolNetwork, config: &TrainingConfig) -> f64 {
    let g = config.grid_size;
    let recovered = ShapeKind::GROUND
        .iter()
        .filter(|&&kind| {
            let oracle = operator::blur(
                &synth::shape_template(kind, g).unwrap(),
                g,
                config.blur_sigma,
            );
            net.symbols_at_layer(0).any(|s| {
                let t = s.operators[0].effective_template();
                let dot: f64 = t.iter().zip(&oracle).map(|(a, b)| a * b).sum();
                dot > 0.9
            })
        })
        .count();
    recovered as f64 / ShapeKind::GROUND.len() as f64
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("network has no symbols or tables")]
    UntrainedNetwork,
    #[error("empty test set")]
    EmptySet,
    #[error("{images} images but {labels} labels")]
    LengthMismatch { images: usize, labels: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// (true class, predicted class) -> count.
    pub confusion: BTreeMap<(u32, u32), usize>,
    /// Samples where recognition produced no usable evidence, per true class.
    pub unclassified: BTreeMap<u32, usize>,
    pub total: usize,
}

impl EvalReport {
    /// Row sum plus unclassified equals the per-class test count.
    pub fn class_total(&self, class: u32) -> usize {
        self.confusion
            .iter()
            .filter(|((t, _), _)| *t == class)
            .map(|(_, &n)| n)
            .sum::<usize>()
            + self.unclassified.get(&class).copied().unwrap_or(0)
    }
}

pub fn evaluate_classifier(
    network: &dsn_core::SymbolNetwork,
    posteriors: &ClassPosteriors,
    images: &[Image],
    labels: &[u32],
    config: &TrainingConfig,
) -> Result<EvalReport, EvalError> {
    if network.is_empty() || network.tables.is_empty() {
        return Err(EvalError::UntrainedNetwork);
    }
    if images.is_empty() {
        return Err(EvalError::EmptySet);
    }
    if images.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    let predictions: Vec<Option<u32>> = images
        .par_iter()
        .map(|img| posteriors.classify(network, img, config))
        .collect();
    let mut confusion: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    let mut unclassified: BTreeMap<u32, usize> = BTreeMap::new();
    let mut correct = 0usize;
    for (&truth, pred) in labels.iter().zip(&predictions) {
        match pred {
            Some(p) => {
                *confusion.entry((truth, *p)).or_insert(0) += 1;
                if *p == truth {
                    correct += 1;
                }
            }
            None => *unclassified.entry(truth).or_insert(0) += 1,
        }
    }
    Ok(EvalReport {
        accuracy: correct as f64 / images.len() as f64,
        confusion,
        unclassified,
        total: images.len(),
    })
}
