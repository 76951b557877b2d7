use std::fmt::Write;

use super::{CompGraph, Device, EdgeAction, OpKind};

/// Graphviz rendering. Read edges are solid, update edges dotted, control
/// edges dashed; parameterized nodes are double circles and host-placed
/// swap nodes are boxes.
pub fn to_dot(g: &CompGraph) -> String {
    let mut s = String::from("digraph G {\n  node [shape=circle];\n");
    for n in g.nodes() {
        let shape = if n.parameterized {
            "doublecircle"
        } else if n.kind.is_swap() {
            "box"
        } else {
            "circle"
        };
        let mut label = n.name.clone();
        if n.kind == OpKind::SwapOut {
            label.push_str("\\n(swap-out)");
        } else if n.kind == OpKind::SwapIn {
            label.push_str("\\n(swap-in)");
        }
        let color = if n.device == Device::Host {
            ", color=blue"
        } else {
            ""
        };
        let _ = writeln!(
            s,
            "  {} [label=\"{}\", shape={}{}];",
            n.id.0,
            escape(&label),
            shape,
            color
        );
    }
    for e in g.edges() {
        let style = match e.action {
            EdgeAction::Read => "solid",
            EdgeAction::Update => "dotted",
            EdgeAction::Control => "dashed",
        };
        match e.tensor {
            Some(t) => {
                let _ = writeln!(
                    s,
                    "  {} -> {} [style={}, label=\"{}\"];",
                    e.src.0, e.dst.0, style, t
                );
            }
            None => {
                let _ = writeln!(s, "  {} -> {} [style={}];", e.src.0, e.dst.0, style);
            }
        }
    }
    s.push_str("}\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('"', "\\\"")
}
