//! Graphviz DOT export of a symbol network. Output is deterministic: nodes
//! in id order, edges in stored link order, one style per link kind.

use std::fmt::Write;

use dsn_core::network::LinkKind;
use dsn_core::SymbolNetwork;

fn edge_style(kind: LinkKind) -> &'static str {
    match kind {
        LinkKind::Composition => "style=solid",
        LinkKind::Inheritance => "style=dashed",
        LinkKind::Dependence => "style=dotted",
        LinkKind::Causality => "style=bold",
        LinkKind::Abstraction => "style=dashed, color=gray50",
        LinkKind::HigherOrder => "style=dotted, color=gray50",
    }
}

pub fn to_dot(network: &SymbolNetwork) -> String {
    let mut out = String::from("digraph symbols {\n");
    out.push_str("  rankdir=BT;\n  node [shape=box, fontname=\"monospace\"];\n");
    for sym in network.symbols.values() {
        let name = sym
            .name
            .as_deref()
            .map(|n| format!("\\n{n}"))
            .unwrap_or_default();
        let prior = network.tables.prior(sym.id);
        let prior = if prior > 0.0 {
            format!("\\nprior {prior:.3}")
        } else {
            String::new()
        };
        writeln!(
            out,
            "  {} [label=\"{}{name}\\nlayer {}{prior}\"];",
            sym.id.0, sym.id, sym.layer
        )
        .unwrap();
    }
    for link in &network.links {
        writeln!(
            out,
            "  {} -> {} [{}, label=\"{}\"];",
            link.from.0,
            link.to.0,
            edge_style(link.kind),
            link.kind.name()
        )
        .unwrap();
    }
    out.push_str("}\n");
    out
}
