//! The symbol graph: symbols, typed links, probability tables, instances,
//! and the structural invariants (acyclic composition, link/children
//! coherence) that every accepted network satisfies.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::operator::IdentifyingOperator;
use crate::stats::RunningStats;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Opaque symbol identifier, unique within one network and never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(transparent))]
pub struct SymbolId(pub u32);

impl fmt::Display for SymbolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Boolean combination of per-operator decisions, by operator index.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum BoolExpr {
    Op(usize),
    And(Vec<BoolExpr>),
    Or(Vec<BoolExpr>),
    Not(Box<BoolExpr>),
}

impl BoolExpr {
    /// AND over operator indices `0..n`; the default combination.
    pub fn and_all(n: usize) -> Self {
        BoolExpr::And((0..n).map(BoolExpr::Op).collect())
    }

    pub fn eval(&self, decisions: &[bool]) -> bool {
        match self {
            BoolExpr::Op(i) => decisions.get(*i).copied().unwrap_or(false),
            BoolExpr::And(xs) => xs.iter().all(|x| x.eval(decisions)),
            BoolExpr::Or(xs) => xs.iter().any(|x| x.eval(decisions)),
            BoolExpr::Not(x) => !x.eval(decisions),
        }
    }

    /// Largest operator index referenced, if any.
    pub fn max_op_index(&self) -> Option<usize> {
        match self {
            BoolExpr::Op(i) => Some(*i),
            BoolExpr::And(xs) | BoolExpr::Or(xs) => xs.iter().filter_map(|x| x.max_op_index()).max(),
            BoolExpr::Not(x) => x.max_op_index(),
        }
    }
}

/// Per-parameter running statistics of one child occurrence within a parent.
///
/// Positions and scales are normalized to the parent bounding box; magnitude
/// is dimensionless; angle is radians in [0, 2π). All five accumulators are
/// pushed together so their counts always agree.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SlotStats {
    pub a: RunningStats,
    pub bx: RunningStats,
    pub by: RunningStats,
    pub c: RunningStats,
    pub angle: RunningStats,
}

impl SlotStats {
    pub fn push(&mut self, a: f64, bx: f64, by: f64, c: f64, angle: f64) {
        self.a.push(a);
        self.bx.push(bx);
        self.by.push(by);
        self.c.push(c);
        self.angle.push(crate::math::wrap_angle(angle));
    }

    pub fn count(&self) -> u64 {
        self.a.count
    }
}

/// One "made-of" slot of a parent symbol.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct CompositionSlot {
    pub child: SymbolId,
    pub stats: SlotStats,
}

impl CompositionSlot {
    pub fn new(child: SymbolId) -> Self {
        Self {
            child,
            stats: SlotStats::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum LinkKind {
    Composition,
    Inheritance,
    Dependence,
    Causality,
    Abstraction,
    HigherOrder,
}

impl LinkKind {
    pub fn name(self) -> &'static str {
        match self {
            LinkKind::Composition => "composition",
            LinkKind::Inheritance => "inheritance",
            LinkKind::Dependence => "dependence",
            LinkKind::Causality => "causality",
            LinkKind::Abstraction => "abstraction",
            LinkKind::HigherOrder => "higher-order",
        }
    }
}

/// A typed, directed link between two symbols. Higher-order links carry the
/// path of symbols they summarize.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Link {
    pub kind: LinkKind,
    pub from: SymbolId,
    pub to: SymbolId,
    pub via: Option<Vec<SymbolId>>,
}

impl Link {
    pub fn composition(from: SymbolId, to: SymbolId) -> Self {
        Self {
            kind: LinkKind::Composition,
            from,
            to,
            via: None,
        }
    }
}

/// Prior and conditional probability tables recorded after training.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ProbabilityTables {
    /// P(symbol), normalized per layer.
    pub prior: BTreeMap<SymbolId, f64>,
    /// P(target | given), keyed by (given, target).
    #[cfg_attr(feature = "serde", serde(with = "cond_serde"))]
    pub cond: BTreeMap<(SymbolId, SymbolId), f64>,
}

impl ProbabilityTables {
    pub fn prior(&self, s: SymbolId) -> f64 {
        self.prior.get(&s).copied().unwrap_or(0.0)
    }

    pub fn cond(&self, given: SymbolId, target: SymbolId) -> f64 {
        self.cond.get(&(given, target)).copied().unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.prior.is_empty() && self.cond.is_empty()
    }
}

#[cfg(feature = "serde")]
mod cond_serde {
    //! (SymbolId, SymbolId) map keys flattened to entry lists for text formats.
    use super::SymbolId;
    use alloc::collections::BTreeMap;
    use alloc::vec::Vec;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<(SymbolId, SymbolId), f64>,
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        let entries: Vec<(SymbolId, SymbolId, f64)> =
            map.iter().map(|(&(a, b), &p)| (a, b, p)).collect();
        entries.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> Result<BTreeMap<(SymbolId, SymbolId), f64>, D::Error> {
        let entries = Vec::<(SymbolId, SymbolId, f64)>::deserialize(de)?;
        Ok(entries.into_iter().map(|(a, b, p)| ((a, b), p)).collect())
    }
}

/// A symbol: identifying operators plus composition structure.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Symbol {
    pub id: SymbolId,
    pub name: Option<String>,
    /// 0 = ground (pixel space); >= 1 = composite.
    pub layer: u32,
    pub operators: Vec<IdentifyingOperator>,
    pub operator_combination: BoolExpr,
    pub children: Vec<CompositionSlot>,
    /// Training data pieces absorbed into this symbol.
    pub instance_count: u64,
}

impl Symbol {
    /// A ground (layer-0) symbol with a single pixel-space operator.
    pub fn ground(operator: IdentifyingOperator) -> Self {
        Self {
            id: SymbolId(u32::MAX),
            name: None,
            layer: 0,
            operators: vec![operator],
            operator_combination: BoolExpr::and_all(1),
            children: Vec::new(),
            instance_count: 0,
        }
    }

    /// A composite symbol; layer is assigned on insertion.
    pub fn composite(operators: Vec<IdentifyingOperator>, children: Vec<CompositionSlot>) -> Self {
        let n = operators.len();
        Self {
            id: SymbolId(u32::MAX),
            name: None,
            layer: 1,
            operators,
            operator_combination: BoolExpr::and_all(n),
            children,
            instance_count: 0,
        }
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = Some(String::from(name));
        self
    }
}

/// A recognized occurrence of a symbol in one sample.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SymbolInstance {
    pub symbol: SymbolId,
    /// Magnitude.
    pub a: f64,
    /// Position (x, y), normalized to the parent extent when nested.
    pub b: (f64, f64),
    /// Scale relative to the parent extent.
    pub c: f64,
    /// Rotation, radians in [0, 2π).
    pub angle: f64,
    /// Identification cosine that accepted this instance.
    pub score: f64,
    pub children: Vec<SymbolInstance>,
    /// Composition slots for which no child instance was found.
    pub missing: Vec<SymbolId>,
    pub source: InstanceSource,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct InstanceSource {
    pub sample_id: u64,
    /// (x0, y0, x1, y1) in source-sample pixel coordinates.
    pub bbox: (f64, f64, f64, f64),
}

/// Training-configuration snapshot stored alongside a trained network.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct NetworkMeta {
    pub config: Option<crate::learn::TrainingConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NetworkError {
    /// Adding the edge would create a composition cycle.
    Cycle { from: SymbolId, to: SymbolId },
    /// A referenced child id does not exist in the network.
    DanglingChild(SymbolId),
    UnknownSymbol(SymbolId),
    /// A structural invariant does not hold; the message names it.
    Invalid(String),
}

impl fmt::Display for NetworkError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkError::Cycle { from, to } => {
                write!(f, "composition cycle: {from} -> {to} closes a loop")
            }
            NetworkError::DanglingChild(id) => write!(f, "unknown child symbol {id}"),
            NetworkError::UnknownSymbol(id) => write!(f, "unknown symbol {id}"),
            NetworkError::Invalid(msg) => write!(f, "invalid network: {msg}"),
        }
    }
}

impl core::error::Error for NetworkError {}

/// The full symbol graph plus its probability tables. Immutable once training
/// completes; construction follows a single-writer contract.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SymbolNetwork {
    pub symbols: BTreeMap<SymbolId, Symbol>,
    pub links: Vec<Link>,
    pub tables: ProbabilityTables,
    pub meta: NetworkMeta,
    next_id: u32,
}

impl SymbolNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, id: SymbolId) -> Option<&Symbol> {
        self.symbols.get(&id)
    }

    pub fn symbol_mut(&mut self, id: SymbolId) -> Option<&mut Symbol> {
        self.symbols.get_mut(&id)
    }

    /// Ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = SymbolId> + '_ {
        self.symbols.keys().copied()
    }

    pub fn symbols_at_layer(&self, layer: u32) -> impl Iterator<Item = &Symbol> {
        self.symbols.values().filter(move |s| s.layer == layer)
    }

    pub fn max_layer(&self) -> u32 {
        self.symbols.values().map(|s| s.layer).max().unwrap_or(0)
    }

    /// Insert a symbol, assigning it a fresh id. Composition links are created
    /// for every child slot. The symbol's layer is set to
    /// `1 + max(child layers)` for composites (0 for ground symbols).
    pub fn add_symbol(&mut self, mut symbol: Symbol) -> Result<SymbolId, NetworkError> {
        if symbol.operators.is_empty() {
            return Err(NetworkError::Invalid(String::from(
                "symbol must have at least one identifying operator",
            )));
        }
        if let Some(max_idx) = symbol.operator_combination.max_op_index() {
            if max_idx >= symbol.operators.len() {
                return Err(NetworkError::Invalid(String::from(
                    "operator combination references a missing operator",
                )));
            }
        }
        let mut max_child_layer = None;
        for slot in &symbol.children {
            match self.symbols.get(&slot.child) {
                None => return Err(NetworkError::DanglingChild(slot.child)),
                Some(c) => {
                    max_child_layer = Some(max_child_layer.unwrap_or(0).max(c.layer));
                }
            }
        }
        symbol.layer = match max_child_layer {
            None => 0,
            Some(l) => l + 1,
        };
        let id = SymbolId(self.next_id);
        self.next_id += 1;
        symbol.id = id;
        for slot in &symbol.children {
            self.links.push(Link::composition(id, slot.child));
        }
        self.symbols.insert(id, symbol);
        debug_assert!(self.topological_order().is_ok());
        Ok(id)
    }

    /// Append a child slot to an existing symbol, rejecting edges that would
    /// close a composition cycle. Re-derives the parent's layer.
    pub fn add_child_slot(
        &mut self,
        parent: SymbolId,
        slot: CompositionSlot,
    ) -> Result<(), NetworkError> {
        if !self.symbols.contains_key(&parent) {
            return Err(NetworkError::UnknownSymbol(parent));
        }
        let child_sym = self
            .symbols
            .get(&slot.child)
            .ok_or(NetworkError::DanglingChild(slot.child))?;
        if slot.child == parent || self.composition_path_exists(parent, slot.child, true) {
            return Err(NetworkError::Cycle {
                from: parent,
                to: slot.child,
            });
        }
        let child_layer = child_sym.layer;
        let link = Link::composition(parent, slot.child);
        let sym = self.symbols.get_mut(&parent).expect("checked above");
        sym.children.push(slot);
        sym.layer = sym.layer.max(child_layer + 1);
        self.links.push(link);
        Ok(())
    }

    /// Whether `to` is reachable from `from` along composition edges.
    /// With `reverse`, walks edges child -> parent instead.
    fn composition_path_exists(&self, from: SymbolId, to: SymbolId, reverse: bool) -> bool {
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(cur) = stack.pop() {
            if cur == to {
                return true;
            }
            if !seen.insert(cur) {
                continue;
            }
            if reverse {
                for s in self.symbols.values() {
                    if s.children.iter().any(|c| c.child == cur) {
                        stack.push(s.id);
                    }
                }
            } else if let Some(s) = self.symbols.get(&cur) {
                for c in &s.children {
                    stack.push(c.child);
                }
            }
        }
        false
    }

    /// Kahn topological sort of the composition graph (parents before
    /// children). Errors when a cycle exists.
    pub fn topological_order(&self) -> Result<Vec<SymbolId>, NetworkError> {
        let mut indegree: BTreeMap<SymbolId, usize> =
            self.symbols.keys().map(|&id| (id, 0)).collect();
        for s in self.symbols.values() {
            for c in &s.children {
                if let Some(d) = indegree.get_mut(&c.child) {
                    *d += 1;
                }
            }
        }
        let mut queue: Vec<SymbolId> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&id, _)| id)
            .collect();
        let mut order = Vec::with_capacity(self.symbols.len());
        while let Some(id) = queue.pop() {
            order.push(id);
            if let Some(s) = self.symbols.get(&id) {
                for c in &s.children {
                    let d = indegree.get_mut(&c.child).expect("child present");
                    *d -= 1;
                    if *d == 0 {
                        queue.push(c.child);
                    }
                }
            }
        }
        if order.len() != self.symbols.len() {
            return Err(NetworkError::Invalid(String::from(
                "composition graph contains a cycle",
            )));
        }
        Ok(order)
    }

    /// Check every structural invariant; used by persistence and tests.
    pub fn validate(&self) -> Result<(), NetworkError> {
        for (&id, s) in &self.symbols {
            if s.id != id {
                return Err(NetworkError::Invalid(String::from("symbol id/key mismatch")));
            }
            if s.operators.is_empty() {
                return Err(NetworkError::Invalid(String::from(
                    "symbol without identifying operators",
                )));
            }
            if s.layer == 0 && !s.children.is_empty() {
                return Err(NetworkError::Invalid(String::from(
                    "ground symbol with children",
                )));
            }
            if s.layer >= 1 && s.children.is_empty() {
                return Err(NetworkError::Invalid(String::from(
                    "composite symbol without children",
                )));
            }
            for c in &s.children {
                if !self.symbols.contains_key(&c.child) {
                    return Err(NetworkError::DanglingChild(c.child));
                }
            }
        }
        self.topological_order()?;
        for l in &self.links {
            if !self.symbols.contains_key(&l.from) {
                return Err(NetworkError::UnknownSymbol(l.from));
            }
            if !self.symbols.contains_key(&l.to) {
                return Err(NetworkError::UnknownSymbol(l.to));
            }
            if l.kind == LinkKind::HigherOrder {
                let via = l.via.as_ref().ok_or_else(|| {
                    NetworkError::Invalid(String::from("higher-order link without via path"))
                })?;
                let mut nodes = Vec::with_capacity(via.len() + 2);
                nodes.push(l.from);
                nodes.extend(via.iter().copied());
                nodes.push(l.to);
                for pair in nodes.windows(2) {
                    let hop_exists = self.links.iter().any(|k| {
                        k.kind != LinkKind::HigherOrder && k.from == pair[0] && k.to == pair[1]
                    });
                    if !hop_exists {
                        return Err(NetworkError::Invalid(String::from(
                            "higher-order link hop has no underlying link",
                        )));
                    }
                }
            }
        }
        // Composition links must mirror the children lists exactly.
        let mut from_links: Vec<(SymbolId, SymbolId)> = self
            .links
            .iter()
            .filter(|l| l.kind == LinkKind::Composition)
            .map(|l| (l.from, l.to))
            .collect();
        let mut from_slots: Vec<(SymbolId, SymbolId)> = self
            .symbols
            .values()
            .flat_map(|s| s.children.iter().map(move |c| (s.id, c.child)))
            .collect();
        from_links.sort_unstable();
        from_slots.sort_unstable();
        if from_links != from_slots {
            return Err(NetworkError::Invalid(String::from(
                "composition links do not mirror children lists",
            )));
        }
        self.validate_tables()?;
        Ok(())
    }

    fn validate_tables(&self) -> Result<(), NetworkError> {
        for (&id, &p) in &self.tables.prior {
            if !self.symbols.contains_key(&id) {
                return Err(NetworkError::UnknownSymbol(id));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(NetworkError::Invalid(String::from("prior outside [0,1]")));
            }
        }
        // Priors over each layer must sum to 1 (when any are recorded there).
        let mut layer_sums: BTreeMap<u32, f64> = BTreeMap::new();
        for (&id, &p) in &self.tables.prior {
            let layer = self.symbols[&id].layer;
            *layer_sums.entry(layer).or_insert(0.0) += p;
        }
        for (_, sum) in layer_sums {
            if (sum - 1.0).abs() > 1e-9 {
                return Err(NetworkError::Invalid(String::from(
                    "layer priors do not sum to 1",
                )));
            }
        }
        for (&(g, t), &p) in &self.tables.cond {
            if !self.symbols.contains_key(&g) {
                return Err(NetworkError::UnknownSymbol(g));
            }
            if !self.symbols.contains_key(&t) {
                return Err(NetworkError::UnknownSymbol(t));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(NetworkError::Invalid(String::from(
                    "conditional outside [0,1]",
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{IdentifyingOperator, OperatorSpace};
    use alloc::vec;

    fn op2(x: f64, y: f64) -> IdentifyingOperator {
        IdentifyingOperator::from_seed(OperatorSpace::Pixel, vec![x, y], 0.8)
    }

    #[test]
    fn empty_network_plus_ground_symbol() {
        let mut net = SymbolNetwork::new();
        let id = net.add_symbol(Symbol::ground(op2(1.0, 0.0))).unwrap();
        assert_eq!(id, SymbolId(0));
        assert!(net.links.is_empty());
        net.validate().unwrap();
    }

    #[test]
    fn composite_creates_composition_links() {
        let mut net = SymbolNetwork::new();
        let a = net.add_symbol(Symbol::ground(op2(1.0, 0.0))).unwrap();
        let b = net.add_symbol(Symbol::ground(op2(0.0, 1.0))).unwrap();
        let p = net
            .add_symbol(Symbol::composite(
                vec![op2(1.0, 1.0)],
                vec![CompositionSlot::new(a), CompositionSlot::new(b)],
            ))
            .unwrap();
        assert_eq!(net.symbols[&p].layer, 1);
        let comp: Vec<_> = net
            .links
            .iter()
            .filter(|l| l.kind == LinkKind::Composition)
            .collect();
        assert_eq!(comp.len(), 2);
        net.validate().unwrap();
    }

    #[test]
    fn cycle_is_rejected() {
        let mut net = SymbolNetwork::new();
        let a = net.add_symbol(Symbol::ground(op2(1.0, 0.0))).unwrap();
        let p = net
            .add_symbol(Symbol::composite(
                vec![op2(1.0, 1.0)],
                vec![CompositionSlot::new(a)],
            ))
            .unwrap();
        let err = net.add_child_slot(a, CompositionSlot::new(p)).unwrap_err();
        assert!(matches!(err, NetworkError::Cycle { .. }));
        // self-loop
        let err = net.add_child_slot(a, CompositionSlot::new(a)).unwrap_err();
        assert!(matches!(err, NetworkError::Cycle { .. }));
    }

    #[test]
    fn dangling_child_is_rejected() {
        let mut net = SymbolNetwork::new();
        let err = net
            .add_symbol(Symbol::composite(
                vec![op2(1.0, 0.0)],
                vec![CompositionSlot::new(SymbolId(42))],
            ))
            .unwrap_err();
        assert!(matches!(err, NetworkError::DanglingChild(SymbolId(42))));
    }

    #[test]
    fn bool_expr_combinations() {
        let and = BoolExpr::and_all(2);
        assert!(and.eval(&[true, true]));
        assert!(!and.eval(&[true, false]));
        let or = BoolExpr::Or(vec![BoolExpr::Op(0), BoolExpr::Op(1)]);
        assert!(or.eval(&[false, true]));
        let not = BoolExpr::Not(alloc::boxed::Box::new(BoolExpr::Op(0)));
        assert!(not.eval(&[false]));
    }

    #[test]
    fn layer_is_one_plus_max_child_layer() {
        let mut net = SymbolNetwork::new();
        let a = net.add_symbol(Symbol::ground(op2(1.0, 0.0))).unwrap();
        let p1 = net
            .add_symbol(Symbol::composite(
                vec![op2(1.0, 1.0)],
                vec![CompositionSlot::new(a)],
            ))
            .unwrap();
        let p2 = net
            .add_symbol(Symbol::composite(
                vec![op2(1.0, 1.0)],
                vec![CompositionSlot::new(a), CompositionSlot::new(p1)],
            ))
            .unwrap();
        assert_eq!(net.symbols[&p2].layer, 2);
    }
}
