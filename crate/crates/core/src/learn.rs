//! Layer-by-layer unsupervised learning: cluster canonicalized data pieces
//! into ground symbols with thresholds (lambda, mu), re-express parent pieces
//! over the identified children and cluster those into composites, create
//! composition links, and record the probability tables. Also supervised
//! threshold tuning by grid search over (lambda, mu).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::image::Image;
use crate::math;
use crate::network::{
    CompositionSlot, NetworkError, ProbabilityTables, Symbol, SymbolId, SymbolNetwork,
};
use crate::operator::{
    self, ChildVector, IdentifyingOperator, OperatorError, OperatorSpace, SpaceVectors, Transform,
    TransformGrid,
};
use crate::signal::{self, DataPiece, DetectorConfig, SignalError};

/// One child occurrence inside a parent piece: identity plus its state
/// parameters (a, bx, by, c, angle).
type StateEntry = (SymbolId, f64, f64, f64, f64, f64);

/// Clusters, per-input assignment, and pass statistics of one clustering run.
pub type ClusterPass = (Vec<Cluster>, Vec<Option<usize>>, ClusterPassStats);

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Per-layer acceptance threshold (cosine) and minimum cluster support.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LayerThresholds {
    pub lambda: f64,
    pub mu: usize,
}

/// Everything the learner needs to be reproducible from a seed.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TrainingConfig {
    /// Thresholds per layer; the last entry repeats for deeper layers.
    pub thresholds: Vec<LayerThresholds>,
    /// Canonical grid side G.
    pub grid_size: usize,
    pub transform_grid: TransformGrid,
    /// Evaluation-time blur of pixel templates.
    pub blur_sigma: f64,
    pub max_layers: u32,
    pub detector: DetectorConfig,
    pub seed: u64,
    /// Threshold given to state-parameter operators.
    pub state_threshold: f64,
    /// Max ground symbols tried per box during recognition.
    pub scan_limit: usize,
    /// Path-length bound for Bayesian decisions.
    pub max_path_len: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![
                LayerThresholds { lambda: 0.85, mu: 3 },
                LayerThresholds { lambda: 0.75, mu: 3 },
            ],
            grid_size: 16,
            transform_grid: TransformGrid::rotations_15deg(),
            blur_sigma: 1.0,
            max_layers: 4,
            detector: DetectorConfig::default(),
            seed: 0,
            state_threshold: 0.0,
            scan_limit: 32,
            max_path_len: 4,
        }
    }
}

impl TrainingConfig {
    pub fn thresholds_for(&self, layer: u32) -> LayerThresholds {
        let idx = (layer as usize).min(self.thresholds.len().saturating_sub(1));
        self.thresholds
            .get(idx)
            .copied()
            .unwrap_or(LayerThresholds { lambda: 0.85, mu: 3 })
    }

    /// Layer-0 support floor: max(mu, 0.1% of the piece count).
    pub fn effective_mu(&self, layer: u32, piece_count: usize) -> usize {
        let base = self.thresholds_for(layer).mu;
        if layer == 0 {
            base.max(piece_count / 1000)
        } else {
            base
        }
    }
}

/// One member of a cluster: piece index, aligning transform, aligned vector.
#[derive(Debug, Clone)]
pub struct ClusterMember {
    pub piece: usize,
    pub transform: Transform,
    pub aligned: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Cluster {
    pub operator: IdentifyingOperator,
    pub members: Vec<ClusterMember>,
    pub layer: u32,
}

/// Counters accumulated during one clustering pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ClusterPassStats {
    /// Pieces matching two clusters whose templates were too far to merge.
    pub ambiguous: usize,
    pub merges: usize,
    pub dissolved: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum StopReason {
    NoNewSymbols,
    MaxLayers,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LayerReport {
    pub layer: u32,
    pub lambda: f64,
    pub mu: usize,
    pub pieces_in: usize,
    pub pieces_clustered: usize,
    pub pieces_unassigned: usize,
    pub clusters_formed: usize,
    pub symbols_created: usize,
    pub stats: ClusterPassStats,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LearnReport {
    pub layers: Vec<LayerReport>,
    pub stop: Option<StopReason>,
    pub total_pieces: usize,
    pub samples: usize,
}

impl LearnReport {
    pub fn symbols_created(&self) -> usize {
        self.layers.iter().map(|l| l.symbols_created).sum()
    }

    pub fn symbols_at_layer(&self, layer: u32) -> usize {
        self.layers
            .iter()
            .filter(|l| l.layer == layer)
            .map(|l| l.symbols_created)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LearnError {
    EmptyInput,
    /// Layer 0 produced zero surviving clusters.
    NoSymbols,
    /// A class has fewer than two labeled samples.
    InsufficientData(u32),
    Signal(SignalError),
    Network(NetworkError),
    Operator(OperatorError),
}

impl fmt::Display for LearnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LearnError::EmptyInput => write!(f, "no input pieces or samples"),
            LearnError::NoSymbols => write!(f, "no ground symbols survived clustering"),
            LearnError::InsufficientData(c) => {
                write!(f, "class {c} has fewer than two samples")
            }
            LearnError::Signal(e) => write!(f, "signal analysis failed: {e}"),
            LearnError::Network(e) => write!(f, "network construction failed: {e}"),
            LearnError::Operator(e) => write!(f, "operator evaluation failed: {e}"),
        }
    }
}

impl core::error::Error for LearnError {}

impl From<SignalError> for LearnError {
    fn from(e: SignalError) -> Self {
        LearnError::Signal(e)
    }
}

impl From<NetworkError> for LearnError {
    fn from(e: NetworkError) -> Self {
        LearnError::Network(e)
    }
}

impl From<OperatorError> for LearnError {
    fn from(e: OperatorError) -> Self {
        LearnError::Operator(e)
    }
}

// ---------------------------------------------------------------------------
// Single-layer clustering
// ---------------------------------------------------------------------------

/// Sequential threshold-gated clustering of unit vectors in one space.
///
/// The first piece seeds cluster 0. Each subsequent piece is scored against
/// all clusters with transform search: best score above `lambda` joins (and
/// the operator absorbs the aligned vector); two qualifying clusters merge
/// when their templates are within `lambda` of each other, otherwise the
/// ambiguity is counted; no qualifying cluster seeds a new one. Clusters
/// with fewer than `mu` members are dissolved at the end.
///
/// Returns the surviving clusters, a piece -> cluster assignment (None =
/// unassigned), and the pass counters.
pub fn cluster_layer(
    vectors: &[Vec<f64>],
    space: OperatorSpace,
    thresholds: LayerThresholds,
    grid: &TransformGrid,
    blur_sigma: f64,
) -> Result<ClusterPass, LearnError> {
    if vectors.is_empty() {
        return Err(LearnError::EmptyInput);
    }
    let lambda = thresholds.lambda;
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut stats = ClusterPassStats::default();

    for (piece_idx, v) in vectors.iter().enumerate() {
        // score against every existing cluster
        let mut best: Option<(usize, f64, Transform)> = None;
        let mut second: Option<(usize, f64)> = None;
        for (ci, cl) in clusters.iter().enumerate() {
            let (score, t) = cl.operator.identify(v, grid)?;
            match best {
                Some((_, bs, _)) if score <= bs => {
                    if second.is_none_or(|(_, ss)| score > ss) {
                        second = Some((ci, score));
                    }
                }
                _ => {
                    if let Some((bi, bs, _)) = best {
                        second = Some((bi, bs));
                    }
                    best = Some((ci, score, t));
                }
            }
        }
        match best {
            Some((bi, bs, bt)) if bs > lambda => {
                let mut target = bi;
                if let Some((si, ss)) = second {
                    if ss > lambda {
                        let tcos = math::cosine(
                            &clusters[bi].operator.template,
                            &clusters[si].operator.template,
                        );
                        if tcos > lambda {
                            target = merge_clusters(&mut clusters, bi, si);
                            stats.merges += 1;
                        } else {
                            stats.ambiguous += 1;
                        }
                    }
                }
                let aligned = if bt.is_identity() {
                    v.clone()
                } else {
                    operator::transform_grid_vector(v, clusters[target].operator.grid_size(), bt)
                };
                clusters[target].operator.absorb(&aligned)?;
                clusters[target].members.push(ClusterMember {
                    piece: piece_idx,
                    transform: bt,
                    aligned,
                });
            }
            _ => {
                let mut op = IdentifyingOperator::from_seed(space, v.clone(), lambda);
                if space == OperatorSpace::Pixel {
                    op.blur_sigma = blur_sigma;
                }
                op.member_count = 1;
                clusters.push(Cluster {
                    operator: op,
                    members: vec![ClusterMember {
                        piece: piece_idx,
                        transform: Transform::IDENTITY,
                        aligned: v.clone(),
                    }],
                    layer: 0,
                });
            }
        }
    }

    // dissolve under-supported clusters
    let mut survivors = Vec::new();
    for cl in clusters {
        if cl.members.len() >= thresholds.mu {
            survivors.push(cl);
        } else {
            stats.dissolved += 1;
        }
    }
    let mut assignment = vec![None; vectors.len()];
    for (ci, cl) in survivors.iter().enumerate() {
        for m in &cl.members {
            assignment[m.piece] = Some(ci);
        }
    }
    Ok((survivors, assignment, stats))
}

/// Merge cluster `b` into cluster `a` (weighted mean of operators), removing
/// `b` from the list. Returns the index of the merged cluster.
fn merge_clusters(clusters: &mut Vec<Cluster>, a: usize, b: usize) -> usize {
    debug_assert_ne!(a, b);
    let cl_b = clusters.swap_remove(b);
    // swap_remove may have moved `a`
    let a = if a == clusters.len() { b } else { a };
    let cl_a = &mut clusters[a];
    let na = cl_a.operator.member_count as f64;
    let nb = cl_b.operator.member_count as f64;
    for (m, &v) in cl_a.operator.mean.iter_mut().zip(&cl_b.operator.mean) {
        *m = (na * *m + nb * v) / (na + nb);
    }
    cl_a.operator.member_count += cl_b.operator.member_count;
    cl_a.operator.template = operator::normalized(&cl_a.operator.mean);
    cl_a.members.extend(cl_b.members);
    a
}

// ---------------------------------------------------------------------------
// Piece pools: extraction + provenance over a whole corpus
// ---------------------------------------------------------------------------

/// A corpus-wide pool of data pieces with hierarchy indices.
pub(crate) struct PiecePool {
    pub pieces: Vec<DataPiece>,
    /// Children indices per piece (inverse of `parent_piece`).
    pub children: Vec<Vec<usize>>,
    /// Piece index -> identified symbol, magnitude/placement and angle.
    pub assigned: Vec<Option<PieceAssignment>>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PieceAssignment {
    pub symbol: SymbolId,
    pub angle: f64,
    pub score: f64,
}

impl PiecePool {
    pub fn from_samples(samples: &[Image], config: &TrainingConfig) -> Result<Self, LearnError> {
        let mut pieces: Vec<DataPiece> = Vec::new();
        for (sid, img) in samples.iter().enumerate() {
            let mut sample_pieces =
                signal::extract_pieces(img, sid as u64, &config.detector, config.grid_size)?;
            let base = pieces.len();
            for p in &mut sample_pieces {
                if let Some(par) = p.parent_piece.as_mut() {
                    *par += base;
                }
            }
            pieces.extend(sample_pieces);
        }
        let mut children = vec![Vec::new(); pieces.len()];
        for (i, p) in pieces.iter().enumerate() {
            if let Some(par) = p.parent_piece {
                children[par].push(i);
            }
        }
        let assigned = vec![None; pieces.len()];
        Ok(Self {
            pieces,
            children,
            assigned,
        })
    }

    /// Leaf pieces (no children) in deterministic scan order: sample id,
    /// then box y, then box x.
    pub fn ground_candidates(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.pieces.len())
            .filter(|&i| self.children[i].is_empty())
            .collect();
        idx.sort_by_key(|&i| {
            let p = &self.pieces[i];
            (p.sample_id, p.raw_box.y0, p.raw_box.x0)
        });
        idx
    }

    /// Unassigned internal pieces with at least two identified children, in
    /// scan order.
    pub fn composite_candidates(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.pieces.len())
            .filter(|&i| {
                self.assigned[i].is_none()
                    && self
                        .children[i]
                        .iter()
                        .filter(|&&c| self.assigned[c].is_some())
                        .count()
                        >= 2
            })
            .collect();
        idx.sort_by_key(|&i| {
            let p = &self.pieces[i];
            (p.sample_id, p.raw_box.y0, p.raw_box.x0)
        });
        idx
    }

    /// State entry (child symbol, a, bx, by, c, angle) of child piece `c`
    /// relative to parent piece `p`, normalized to the parent box.
    pub fn state_entry(&self, p: usize, c: usize) -> Option<(SymbolId, f64, f64, f64, f64, f64)> {
        let asg = self.assigned[c]?;
        let parent = &self.pieces[p];
        let child = &self.pieces[c];
        let pw = parent.raw_box.width().max(1) as f64;
        let ph = parent.raw_box.height().max(1) as f64;
        let ext = parent.raw_box.extent().max(1.0);
        let a = if parent.a_raw > 0.0 {
            child.a_raw / parent.a_raw
        } else {
            0.0
        };
        let bx = (child.b_raw.0 - parent.raw_box.x0 as f64) / pw;
        let by = (child.b_raw.1 - parent.raw_box.y0 as f64) / ph;
        let c_rel = child.c_raw / ext;
        Some((asg.symbol, a, bx, by, c_rel, asg.angle))
    }

    /// Per-sample sets of symbols present (for probability recording).
    pub fn occurrences(&self, samples: usize) -> Vec<BTreeSet<SymbolId>> {
        let mut occ = vec![BTreeSet::new(); samples];
        for (i, asg) in self.assigned.iter().enumerate() {
            if let Some(a) = asg {
                occ[self.pieces[i].sample_id as usize].insert(a.symbol);
            }
        }
        occ
    }
}

// ---------------------------------------------------------------------------
// Unsupervised learning
// ---------------------------------------------------------------------------

/// Run the full pipeline: singularity isolation, ground clustering, layer
/// iteration over child/state vectors, link creation and probability
/// recording. Deterministic for fixed samples + config.
pub fn learn_unsupervised(
    samples: &[Image],
    config: &TrainingConfig,
) -> Result<(SymbolNetwork, LearnReport), LearnError> {
    if samples.is_empty() {
        return Err(LearnError::EmptyInput);
    }
    let mut pool = PiecePool::from_samples(samples, config)?;
    let mut network = SymbolNetwork::new();
    let mut report = LearnReport {
        total_pieces: pool.pieces.len(),
        samples: samples.len(),
        ..LearnReport::default()
    };

    learn_ground_layer(&mut pool, &mut network, config, &mut report, true)?;
    learn_upper_layers(&mut pool, &mut network, config, &mut report, 1)?;

    let occ = pool.occurrences(samples.len());
    network.tables = record_probabilities(&network, &occ);
    network.meta.config = Some(config.clone());
    debug_assert!(network.validate().is_ok());
    Ok((network, report))
}

/// Cluster ground candidates into layer-0 symbols. With `require_symbols`,
/// an empty survivor set is an error (fresh training); incremental runs
/// tolerate it.
fn learn_ground_layer(
    pool: &mut PiecePool,
    network: &mut SymbolNetwork,
    config: &TrainingConfig,
    report: &mut LearnReport,
    require_symbols: bool,
) -> Result<(), LearnError> {
    let candidates = pool.ground_candidates();
    let unassigned: Vec<usize> = candidates
        .into_iter()
        .filter(|&i| pool.assigned[i].is_none())
        .collect();
    if unassigned.is_empty() {
        if require_symbols {
            return Err(LearnError::NoSymbols);
        }
        return Ok(());
    }
    let vectors: Vec<Vec<f64>> = unassigned
        .iter()
        .map(|&i| pool.pieces[i].vector.clone())
        .collect();
    let thr = LayerThresholds {
        lambda: config.thresholds_for(0).lambda,
        mu: config.effective_mu(0, vectors.len()),
    };
    let (clusters, assignment, stats) = cluster_layer(
        &vectors,
        OperatorSpace::Pixel,
        thr,
        &config.transform_grid,
        config.blur_sigma,
    )?;
    if clusters.is_empty() && require_symbols {
        return Err(LearnError::NoSymbols);
    }
    let mut created = 0usize;
    let mut cluster_ids = Vec::with_capacity(clusters.len());
    for cl in &clusters {
        let mut op = cl.operator.clone();
        op.blur_sigma = config.blur_sigma;
        op.threshold = thr.lambda;
        let mut sym = Symbol::ground(op);
        sym.instance_count = cl.members.len() as u64;
        let id = network.add_symbol(sym)?;
        cluster_ids.push(id);
        created += 1;
    }
    for (local, &piece) in unassigned.iter().enumerate() {
        if let Some(ci) = assignment[local] {
            let member = clusters[ci]
                .members
                .iter()
                .find(|m| m.piece == local)
                .expect("assignment and members agree");
            pool.assigned[piece] = Some(PieceAssignment {
                symbol: cluster_ids[ci],
                angle: member.transform.angle,
                score: math::cosine(&clusters[ci].operator.template, &member.aligned),
            });
        }
    }
    report.layers.push(LayerReport {
        layer: 0,
        lambda: thr.lambda,
        mu: thr.mu,
        pieces_in: vectors.len(),
        pieces_clustered: assignment.iter().flatten().count(),
        pieces_unassigned: vectors.len() - assignment.iter().flatten().count(),
        clusters_formed: clusters.len(),
        symbols_created: created,
        stats,
    });
    Ok(())
}

/// Iterate upper layers until a pass creates no symbols or `max_layers` is
/// reached.
fn learn_upper_layers(
    pool: &mut PiecePool,
    network: &mut SymbolNetwork,
    config: &TrainingConfig,
    report: &mut LearnReport,
    first_layer: u32,
) -> Result<(), LearnError> {
    let mut layer = first_layer;
    loop {
        if layer >= config.max_layers {
            report.stop = Some(StopReason::MaxLayers);
            break;
        }
        let created = learn_one_upper_layer(pool, network, config, report, layer)?;
        if created == 0 {
            report.stop = Some(StopReason::NoNewSymbols);
            break;
        }
        layer += 1;
    }
    Ok(())
}

fn learn_one_upper_layer(
    pool: &mut PiecePool,
    network: &mut SymbolNetwork,
    config: &TrainingConfig,
    report: &mut LearnReport,
    layer: u32,
) -> Result<usize, LearnError> {
    let candidates = pool.composite_candidates();
    if candidates.is_empty() {
        return Ok(0);
    }
    let basis: Vec<SymbolId> = network.ids().collect();
    let thr = LayerThresholds {
        lambda: config.thresholds_for(layer).lambda,
        mu: config.effective_mu(layer, candidates.len()),
    };

    // Re-express candidates as unit child vectors over the current basis.
    let mut child_vecs: Vec<ChildVector> = Vec::with_capacity(candidates.len());
    let mut dense: Vec<Vec<f64>> = Vec::with_capacity(candidates.len());
    let mut states: Vec<Vec<StateEntry>> = Vec::new();
    for &p in &candidates {
        let entries: Vec<_> = pool.children[p]
            .iter()
            .filter_map(|&c| pool.state_entry(p, c))
            .collect();
        let cv = ChildVector::from_children(entries.iter().map(|e| e.0));
        dense.push(cv.to_unit_dense(&basis));
        child_vecs.push(cv);
        states.push(entries);
    }

    let identity = TransformGrid::identity();
    let (clusters, assignment, stats) =
        cluster_layer(&dense, OperatorSpace::ChildComposition, thr, &identity, 0.0)?;

    let mut created = 0usize;
    for cl in &clusters {
        let (groups, state_model) = split_by_state(cl, &states, thr);
        for group in groups {
            let sym_id = build_composite_symbol(
                network,
                &basis,
                cl,
                &group,
                &states,
                state_model.as_ref(),
                thr.lambda,
                config.state_threshold,
            )?;
            for &member_idx in &group {
                let m = &cl.members[member_idx];
                let piece = candidates[m.piece];
                pool.assigned[piece] = Some(PieceAssignment {
                    symbol: sym_id,
                    angle: 0.0,
                    score: math::cosine(&cl.operator.template, &m.aligned),
                });
            }
            created += 1;
        }
    }
    report.layers.push(LayerReport {
        layer,
        lambda: thr.lambda,
        mu: thr.mu,
        pieces_in: candidates.len(),
        pieces_clustered: assignment.iter().flatten().count(),
        pieces_unassigned: candidates.len() - assignment.iter().flatten().count(),
        clusters_formed: clusters.len(),
        symbols_created: created,
        stats,
    });
    Ok(created)
}

/// Per-dimension standardization frozen at the cluster level, shared by the
/// symbols a split produces so their state templates stay comparable.
#[derive(Debug, Clone)]
struct StateModel {
    mean: Vec<f64>,
    std: Vec<f64>,
}

/// Split one child-vector cluster by its state parameters when they are
/// clearly multi-modal: standardized state vectors are clustered with the
/// same threshold rule, and a split is accepted only if at least two
/// sub-clusters reach `mu` members. Otherwise the whole cluster stays one
/// symbol. Returns groups of member indices into `cluster.members`, plus
/// the cluster-level standardization when states were comparable at all.
fn split_by_state(
    cluster: &Cluster,
    states: &[Vec<StateEntry>],
    thr: LayerThresholds,
) -> (Vec<Vec<usize>>, Option<StateModel>) {
    let all: Vec<usize> = (0..cluster.members.len()).collect();
    // Canonical child multiset of the cluster: the modal one.
    let mut multiset_counts: BTreeMap<Vec<SymbolId>, usize> = BTreeMap::new();
    for m in &cluster.members {
        let mut ms: Vec<SymbolId> = states[m.piece].iter().map(|e| e.0).collect();
        ms.sort_unstable();
        *multiset_counts.entry(ms).or_insert(0) += 1;
    }
    let modal = multiset_counts
        .iter()
        .max_by_key(|(_, &n)| n)
        .map(|(k, _)| k.clone())
        .unwrap_or_default();
    let modal_members: Vec<usize> = all
        .iter()
        .copied()
        .filter(|&i| {
            let mut ms: Vec<SymbolId> =
                states[cluster.members[i].piece].iter().map(|e| e.0).collect();
            ms.sort_unstable();
            ms == modal
        })
        .collect();
    if modal_members.len() < 2 * thr.mu {
        return (vec![all], None);
    }
    let raw: Vec<Vec<f64>> = modal_members
        .iter()
        .map(|&i| operator::state_vector(&states[cluster.members[i].piece]))
        .collect();
    let dim = raw[0].len();
    if dim == 0 || raw.iter().any(|v| v.len() != dim) {
        return (vec![all], None);
    }
    let stand = standardize_columns(&raw);
    let model = StateModel {
        mean: stand.mean.clone(),
        std: stand.std.clone(),
    };
    let total_var: f64 = stand.var.iter().sum();
    if total_var < 1e-9 {
        return (vec![all], None);
    }
    let unit: Vec<Vec<f64>> = stand.standardized.iter().map(|v| operator::normalized(v)).collect();
    let identity = TransformGrid::identity();
    let sub = cluster_layer(&unit, OperatorSpace::StateParameter, thr, &identity, 0.0);
    let Ok((subclusters, subassign, _)) = sub else {
        return (vec![all], Some(model));
    };
    if subclusters.len() < 2 {
        return (vec![all], Some(model));
    }
    // Split: each sub-cluster becomes a group; members outside the modal
    // multiset (and sub-unassigned ones) join the largest group.
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); subclusters.len()];
    for (local, &member_idx) in modal_members.iter().enumerate() {
        if let Some(ci) = subassign[local] {
            groups[ci].push(member_idx);
        }
    }
    let largest = groups
        .iter()
        .enumerate()
        .max_by_key(|(_, g)| g.len())
        .map(|(i, _)| i)
        .unwrap_or(0);
    let placed: BTreeSet<usize> = groups.iter().flatten().copied().collect();
    for i in all {
        if !placed.contains(&i) {
            groups[largest].push(i);
        }
    }
    groups.retain(|g| !g.is_empty());
    for g in &mut groups {
        g.sort_unstable();
    }
    (groups, Some(model))
}

struct Standardized {
    standardized: Vec<Vec<f64>>,
    mean: Vec<f64>,
    std: Vec<f64>,
    var: Vec<f64>,
}

fn standardize_columns(rows: &[Vec<f64>]) -> Standardized {
    let dim = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, &v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((s, &v), &m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let std: Vec<f64> = var.iter().map(|&v| math::sqrt(v).max(1e-9)).collect();
    let standardized = rows
        .iter()
        .map(|r| {
            r.iter()
                .zip(&mean)
                .zip(&std)
                .map(|((&v, &m), &s)| (v - m) / s)
                .collect()
        })
        .collect();
    Standardized {
        standardized,
        mean,
        std,
        var,
    }
}

/// Build one composite symbol from a member group of a child-vector cluster:
/// a ChildComposition operator over the basis, slot statistics from the
/// members, and (when state variance exists) a StateParameter operator with
/// frozen standardization.
#[allow(clippy::too_many_arguments)]
fn build_composite_symbol(
    network: &mut SymbolNetwork,
    basis: &[SymbolId],
    cluster: &Cluster,
    group: &[usize],
    states: &[Vec<StateEntry>],
    state_model: Option<&StateModel>,
    lambda: f64,
    state_threshold: f64,
) -> Result<SymbolId, LearnError> {
    // ChildComposition operator: mean of the group's child vectors.
    let dim = cluster.operator.dim();
    let mut mean = vec![0.0; dim];
    for &gi in group {
        for (m, &v) in mean.iter_mut().zip(&cluster.members[gi].aligned) {
            *m += v / group.len() as f64;
        }
    }
    let mut child_op = IdentifyingOperator {
        space: OperatorSpace::ChildComposition,
        template: operator::normalized(&mean),
        mean,
        threshold: lambda,
        blur_sigma: 0.0,
        member_count: group.len() as u64,
        basis: Some(basis.to_vec()),
        standardize: None,
    };
    child_op.threshold = lambda;

    // Modal child multiset of the group defines the slots.
    let mut multiset_counts: BTreeMap<Vec<SymbolId>, usize> = BTreeMap::new();
    for &gi in group {
        let mut ms: Vec<SymbolId> = states[cluster.members[gi].piece]
            .iter()
            .map(|e| e.0)
            .collect();
        ms.sort_unstable();
        *multiset_counts.entry(ms).or_insert(0) += 1;
    }
    let modal = multiset_counts
        .iter()
        .max_by_key(|(_, &n)| n)
        .map(|(k, _)| k.clone())
        .unwrap_or_default();

    // Canonically sorted state entries of modal members feed the slots.
    let modal_entries: Vec<Vec<StateEntry>> = group
        .iter()
        .filter_map(|&gi| {
            let e = &states[cluster.members[gi].piece];
            let mut ms: Vec<SymbolId> = e.iter().map(|x| x.0).collect();
            ms.sort_unstable();
            (ms == modal).then(|| {
                let mut sorted = e.clone();
                sorted.sort_by(|l, r| {
                    (l.0)
                        .cmp(&r.0)
                        .then(l.3.partial_cmp(&r.3).unwrap_or(core::cmp::Ordering::Equal))
                        .then(l.2.partial_cmp(&r.2).unwrap_or(core::cmp::Ordering::Equal))
                });
                sorted
            })
        })
        .collect();

    let mut slots: Vec<CompositionSlot> = modal.iter().map(|&id| CompositionSlot::new(id)).collect();
    for entries in &modal_entries {
        for (slot, e) in slots.iter_mut().zip(entries) {
            debug_assert_eq!(slot.child, e.0);
            slot.stats.push(e.1, e.2, e.3, e.4, e.5);
        }
    }

    let mut operators = vec![child_op];
    // State operator: only when a cluster-level standardization exists and
    // this group sits away from the cluster mean (a split happened). The
    // standardization is frozen from the cluster so sibling symbols born of
    // one split score candidates in the same space.
    if let Some(model) = state_model {
        let raw: Vec<Vec<f64>> = modal_entries
            .iter()
            .map(|e| operator::state_vector(e))
            .filter(|v| v.len() == model.mean.len())
            .collect();
        if !raw.is_empty() {
            let mut smean = vec![0.0; model.mean.len()];
            for v in &raw {
                for (((m, &x), &cm), &cs) in
                    smean.iter_mut().zip(v).zip(&model.mean).zip(&model.std)
                {
                    *m += (x - cm) / cs / raw.len() as f64;
                }
            }
            if math::l2_norm(&smean) > 1e-6 {
                operators.push(IdentifyingOperator {
                    space: OperatorSpace::StateParameter,
                    template: operator::normalized(&smean),
                    mean: smean,
                    threshold: state_threshold,
                    blur_sigma: 0.0,
                    member_count: raw.len() as u64,
                    basis: Some(modal.clone()),
                    standardize: Some(
                        model.mean.iter().copied().zip(model.std.iter().copied()).collect(),
                    ),
                });
            }
        }
    }

    let mut sym = Symbol::composite(operators, slots);
    sym.instance_count = group.len() as u64;
    Ok(network.add_symbol(sym)?)
}

// ---------------------------------------------------------------------------
// Incremental learning
// ---------------------------------------------------------------------------

/// Accumulate knowledge: pieces identified by existing symbols are absorbed
/// (operators and statistics update); unmatched pieces feed fresh clustering
/// to mint new symbols. Existing symbol ids never change.
pub fn incremental_learn(
    network: &SymbolNetwork,
    samples: &[Image],
    config: &TrainingConfig,
) -> Result<(SymbolNetwork, LearnReport), LearnError> {
    let mut net = network.clone();
    if samples.is_empty() {
        return Ok((net, LearnReport::default()));
    }
    let mut pool = PiecePool::from_samples(samples, config)?;
    let mut report = LearnReport {
        total_pieces: pool.pieces.len(),
        samples: samples.len(),
        ..LearnReport::default()
    };

    // 1. identify leaf pieces with known ground symbols, absorbing matches
    let ground_ids: Vec<SymbolId> = net
        .symbols
        .values()
        .filter(|s| s.layer == 0)
        .map(|s| s.id)
        .collect();
    for i in pool.ground_candidates() {
        let v = pool.pieces[i].vector.clone();
        let mut best: Option<(SymbolId, f64, Transform)> = None;
        for &gid in &ground_ids {
            let sym = &net.symbols[&gid];
            let d = operator::decide(sym, &SpaceVectors::pixel(&v), &config.transform_grid)?;
            if d.accepted {
                let s = d.scores.first().copied().unwrap_or(0.0);
                if best.is_none_or(|(_, bs, _)| s > bs) {
                    best = Some((gid, s, d.transform));
                }
            }
        }
        if let Some((gid, score, t)) = best {
            let aligned = if t.is_identity() {
                v
            } else {
                let g = config.grid_size;
                operator::transform_grid_vector(&v, g, t)
            };
            let sym = net.symbol_mut(gid).expect("ground id exists");
            sym.operators[0].absorb(&aligned)?;
            sym.instance_count += 1;
            pool.assigned[i] = Some(PieceAssignment {
                symbol: gid,
                angle: t.angle,
                score,
            });
        }
    }

    // 2. new ground symbols from the leftovers
    learn_ground_layer(&mut pool, &mut net, config, &mut report, false)?;

    // 3. identify internal pieces with known composites, layer by layer,
    //    then mint new composites from what remains
    identify_known_composites(&mut pool, &mut net)?;
    learn_upper_layers(&mut pool, &mut net, config, &mut report, 1)?;

    let occ = pool.occurrences(samples.len());
    net.tables = merge_probabilities(&net, &occ, &network.tables);
    debug_assert!(net.validate().is_ok());
    Ok((net, report))
}

fn identify_known_composites(
    pool: &mut PiecePool,
    net: &mut SymbolNetwork,
) -> Result<(), LearnError> {
    let identity = TransformGrid::identity();
    loop {
        let mut progressed = false;
        for p in pool.composite_candidates() {
            let entries: Vec<_> = pool.children[p]
                .iter()
                .filter_map(|&c| pool.state_entry(p, c))
                .collect();
            let cv = ChildVector::from_children(entries.iter().map(|e| e.0));
            let mut best: Option<(SymbolId, f64)> = None;
            let composite_ids: Vec<SymbolId> = net
                .symbols
                .values()
                .filter(|s| s.layer >= 1)
                .map(|s| s.id)
                .collect();
            for cid in composite_ids {
                let sym = &net.symbols[&cid];
                let Some(basis) = sym.operators[0].basis.as_deref() else {
                    continue;
                };
                let dense = dense_over_basis(&cv, basis);
                let raw_state = operator::state_vector(&entries);
                let vecs = SpaceVectors {
                    pixel: None,
                    child: Some(&dense),
                    state: Some(&raw_state),
                };
                match operator::decide(sym, &vecs, &identity) {
                    Ok(d) if d.accepted => {
                        let s = d.scores.first().copied().unwrap_or(0.0);
                        if best.is_none_or(|(_, bs)| s > bs) {
                            best = Some((cid, s));
                        }
                    }
                    // state dimension may not match this symbol's slots
                    Ok(_) | Err(OperatorError::DimensionMismatch { .. }) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            if let Some((cid, score)) = best {
                absorb_composite_member(net, cid, &cv, &entries)?;
                pool.assigned[p] = Some(PieceAssignment {
                    symbol: cid,
                    angle: 0.0,
                    score,
                });
                progressed = true;
            }
        }
        if !progressed {
            return Ok(());
        }
    }
}

/// Unit-direction embedding of a child multiset over a basis, where counts
/// outside the basis still contribute to the norm (so missing children
/// lower, never raise, the similarity).
pub(crate) fn dense_over_basis(cv: &ChildVector, basis: &[SymbolId]) -> Vec<f64> {
    let norm = math::sqrt(cv.counts.values().map(|v| v * v).sum());
    if norm <= 0.0 {
        return vec![0.0; basis.len()];
    }
    basis
        .iter()
        .map(|id| cv.counts.get(id).copied().unwrap_or(0.0) / norm)
        .collect()
}

fn absorb_composite_member(
    net: &mut SymbolNetwork,
    cid: SymbolId,
    cv: &ChildVector,
    entries: &[(SymbolId, f64, f64, f64, f64, f64)],
) -> Result<(), LearnError> {
    let sym = net.symbol_mut(cid).expect("composite id exists");
    let basis = sym.operators[0].basis.clone().unwrap_or_default();
    let dense = dense_over_basis(cv, &basis);
    sym.operators[0].absorb(&dense)?;
    sym.instance_count += 1;
    // push slot stats when the multiset matches the slots exactly
    let mut ms: Vec<SymbolId> = entries.iter().map(|e| e.0).collect();
    ms.sort_unstable();
    let slot_ms: Vec<SymbolId> = sym.children.iter().map(|s| s.child).collect();
    if ms == slot_ms {
        let mut sorted = entries.to_vec();
        sorted.sort_by(|l, r| {
            (l.0)
                .cmp(&r.0)
                .then(l.3.partial_cmp(&r.3).unwrap_or(core::cmp::Ordering::Equal))
                .then(l.2.partial_cmp(&r.2).unwrap_or(core::cmp::Ordering::Equal))
        });
        for (slot, e) in sym.children.iter_mut().zip(&sorted) {
            slot.stats.push(e.1, e.2, e.3, e.4, e.5);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Probability recording
// ---------------------------------------------------------------------------

/// Laplace-smoothed prior and conditional tables from per-sample symbol
/// occurrence sets.
///
/// prior(s) = (occ(s) + 1) / (total occurrences at s's layer + |layer|);
/// cond(t | g) = (co-occ(g, t) + 1) / (occ(g) + 2), a smoothed Bernoulli
/// estimate of "t appears in a sample given g does". Per-pair estimation
/// keeps a never-co-occurring pair near zero even when the target's layer
/// holds few symbols; normalizing across the layer would instead force the
/// leftover mass onto it.
pub fn record_probabilities(
    network: &SymbolNetwork,
    occurrences: &[BTreeSet<SymbolId>],
) -> ProbabilityTables {
    let mut tables = ProbabilityTables::default();
    let mut by_layer: BTreeMap<u32, Vec<SymbolId>> = BTreeMap::new();
    for s in network.symbols.values() {
        by_layer.entry(s.layer).or_default().push(s.id);
    }
    let mut occ_count: BTreeMap<SymbolId, u64> = BTreeMap::new();
    for set in occurrences {
        for &s in set {
            *occ_count.entry(s).or_insert(0) += 1;
        }
    }
    for ids in by_layer.values() {
        let total: u64 = ids.iter().map(|id| occ_count.get(id).copied().unwrap_or(0)).sum();
        let denom = total as f64 + ids.len() as f64;
        for &id in ids {
            let n = occ_count.get(&id).copied().unwrap_or(0) as f64;
            tables.prior.insert(id, (n + 1.0) / denom);
        }
    }
    // co-occurrence counts over samples
    let mut co: BTreeMap<(SymbolId, SymbolId), u64> = BTreeMap::new();
    for set in occurrences {
        for &g in set {
            for &t in set {
                if g != t {
                    *co.entry((g, t)).or_insert(0) += 1;
                }
            }
        }
    }
    for &g in network.symbols.keys() {
        let denom = occ_count.get(&g).copied().unwrap_or(0) as f64 + 2.0;
        for &t in network.symbols.keys() {
            if t == g {
                continue;
            }
            let n = co.get(&(g, t)).copied().unwrap_or(0) as f64;
            tables.cond.insert((g, t), (n + 1.0) / denom);
        }
    }
    tables
}

/// Incremental runs re-derive tables from the new occurrence sets but keep
/// entries for symbols absent from the new data.
fn merge_probabilities(
    network: &SymbolNetwork,
    occurrences: &[BTreeSet<SymbolId>],
    previous: &ProbabilityTables,
) -> ProbabilityTables {
    let mut tables = record_probabilities(network, occurrences);
    for (&k, &v) in &previous.cond {
        tables.cond.entry(k).or_insert(v);
    }
    tables
}

// ---------------------------------------------------------------------------
// Supervised threshold tuning
// ---------------------------------------------------------------------------

/// One evaluated grid point of the supervised sweep.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TunePoint {
    pub lambda: f64,
    pub mu: usize,
    pub accuracy: f64,
    pub symbols: usize,
    pub failed: bool,
}

/// Grid search over layer-0 thresholds against held-out classification
/// accuracy. Ties break to the smallest lambda, then the smallest mu.
/// Returns the winning network, its thresholds, and the full trace.
pub fn tune_supervised(
    samples: &[Image],
    labels: &[u32],
    config: &TrainingConfig,
    grid: &[LayerThresholds],
) -> Result<(SymbolNetwork, LayerThresholds, Vec<TunePoint>), LearnError> {
    assert_eq!(samples.len(), labels.len());
    if samples.is_empty() || grid.is_empty() {
        return Err(LearnError::EmptyInput);
    }
    let mut class_counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &l in labels {
        *class_counts.entry(l).or_insert(0) += 1;
    }
    for (&class, &n) in &class_counts {
        if n < 2 {
            return Err(LearnError::InsufficientData(class));
        }
    }
    // Deterministic split: every 5th sample is held out.
    let holdout: Vec<usize> = (0..samples.len()).filter(|i| i % 5 == 4).collect();
    let train: Vec<usize> = (0..samples.len()).filter(|i| i % 5 != 4).collect();
    let (holdout, train) = if holdout.is_empty() {
        (train.clone(), train)
    } else {
        (holdout, train)
    };

    let mut trace = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64)> = None;
    let mut best_net: Option<SymbolNetwork> = None;
    for (gi, &point) in grid.iter().enumerate() {
        let mut cfg = config.clone();
        if cfg.thresholds.is_empty() {
            cfg.thresholds.push(point);
        } else {
            cfg.thresholds[0] = point;
        }
        let train_imgs: Vec<Image> = train.iter().map(|&i| samples[i].clone()).collect();
        let outcome = learn_unsupervised(&train_imgs, &cfg);
        let (accuracy, symbols, failed, net) = match outcome {
            Ok((net, _)) => {
                let train_labels: Vec<u32> = train.iter().map(|&i| labels[i]).collect();
                let posteriors =
                    crate::infer::ClassPosteriors::fit(&net, &train_imgs, &train_labels, &cfg);
                let mut correct = 0usize;
                for &i in &holdout {
                    if let Some(pred) = posteriors.classify(&net, &samples[i], &cfg) {
                        if pred == labels[i] {
                            correct += 1;
                        }
                    }
                }
                (
                    correct as f64 / holdout.len() as f64,
                    net.len(),
                    false,
                    Some(net),
                )
            }
            Err(_) => (0.0, 0, true, None),
        };
        trace.push(TunePoint {
            lambda: point.lambda,
            mu: point.mu,
            accuracy,
            symbols,
            failed,
        });
        let better = match best {
            None => true,
            Some((bi, ba)) => {
                accuracy > ba
                    || (accuracy == ba
                        && (point.lambda, point.mu) < (grid[bi].lambda, grid[bi].mu))
            }
        };
        if better && net.is_some() {
            best = Some((gi, accuracy));
            best_net = net;
        }
    }
    let (bi, _) = best.ok_or(LearnError::NoSymbols)?;
    Ok((best_net.expect("best tracked with net"), grid[bi], trace))
}
