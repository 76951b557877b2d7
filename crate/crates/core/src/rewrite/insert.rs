use std::collections::BTreeMap;

use crate::graph::{
    CompGraph, Device, EdgeAction, EdgeRec, NodeId, OpKind, OpNode, OrderMap, Phase, TensorId,
    TensorSpec,
};
use crate::{Error, Result};

fn swap_node(id: NodeId, name: String, kind: OpKind) -> OpNode {
    OpNode {
        id,
        name,
        scope: "swap".into(),
        kind,
        parameterized: false,
        phase: Phase::Unknown,
        device: Device::Host,
        cost_hint: 0.0,
    }
}

/// Splices `f1 -> swap_out -> swap_in -> f2` into the read edge `f1 -> f2`
/// carrying `t`. Every read of `t` by `f2` is redirected, keeping its
/// operand position. Returns `(swap_out, swap_in)`.
pub(crate) fn insert_swap_pair_in_place(
    g: &mut CompGraph,
    f1: NodeId,
    f2: NodeId,
    t: TensorId,
) -> Result<(NodeId, NodeId)> {
    g.try_node(f1)?;
    g.try_node(f2)?;
    let spec = g.try_tensor(t)?.clone();
    let matches = |e: &EdgeRec| e.src == f1 && e.dst == f2 && e.tensor == Some(t);
    let Some(first) = g.find_edge(matches) else {
        return Err(Error::EdgeNotFound {
            src: f1,
            dst: f2,
            tensor: t,
        });
    };
    if g.edges()[first].action != EdgeAction::Read {
        return Err(Error::NotReadEdge { src: f1, dst: f2 });
    }

    let so = g.next_node_id();
    let si = NodeId(so.0 + 1);
    let t_so = g.next_tensor_id();
    let t_si = TensorId(t_so.0 + 1);

    g.push_node(swap_node(so, format!("swap_out:{t}"), OpKind::SwapOut));
    g.push_node(swap_node(si, format!("swap_in:{t}:{f2}"), OpKind::SwapIn));
    for (id, producer) in [(t_so, so), (t_si, si)] {
        g.push_tensor(TensorSpec {
            id,
            producer,
            size_bytes: spec.size_bytes,
            dtype: spec.dtype.clone(),
        });
    }
    let redirect: Vec<usize> = g
        .edges()
        .iter()
        .enumerate()
        .filter(|(_, e)| matches(e) && e.action == EdgeAction::Read)
        .map(|(i, _)| i)
        .collect();
    for i in redirect {
        let e = g.edge_mut(i);
        e.src = si;
        e.tensor = Some(t_si);
    }
    g.push_edge(EdgeRec::read(f1, so, t));
    g.push_edge(EdgeRec::read(so, si, t_so));
    Ok((so, si))
}

/// Copying form of [`insert_swap_pair_in_place`].
pub fn insert_swap_pair(
    g: &CompGraph,
    f1: NodeId,
    f2: NodeId,
    t: TensorId,
) -> Result<(CompGraph, (NodeId, NodeId))> {
    let mut out = g.clone();
    let pair = insert_swap_pair_in_place(&mut out, f1, f2, t)?;
    Ok((out, pair))
}

fn input_tensor(g: &CompGraph, n: NodeId) -> Option<TensorId> {
    g.inputs(n).next().and_then(|e| e.tensor)
}

fn output_tensor(g: &CompGraph, n: NodeId) -> TensorId {
    g.outputs(n).next().expect("swap node has an output").id
}

/// Moves every read of `from`'s output onto `to`'s output, then drops `from`.
fn merge_into(g: &mut CompGraph, from: NodeId, to: NodeId) {
    let (t_from, t_to) = (output_tensor(g, from), output_tensor(g, to));
    let moved: Vec<usize> = g
        .edges()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.src == from && e.tensor == Some(t_from))
        .map(|(i, _)| i)
        .collect();
    for i in moved {
        let e = g.edge_mut(i);
        e.src = to;
        e.tensor = Some(t_to);
    }
    g.remove_node(from);
}

/// Keeps one swap-out per swapped tensor (the lowest id); the swap-ins of
/// the others read from it instead.
pub(crate) fn fuse_swap_outs_in_place(g: &mut CompGraph) {
    let mut groups: BTreeMap<TensorId, Vec<NodeId>> = BTreeMap::new();
    for n in g.nodes().iter().filter(|n| n.kind == OpKind::SwapOut) {
        if let Some(t) = input_tensor(g, n.id) {
            groups.entry(t).or_default().push(n.id);
        }
    }
    for ids in groups.into_values() {
        let (keep, rest) = ids.split_first().expect("groups are non-empty");
        for &dup in rest {
            merge_into(g, dup, *keep);
        }
    }
}

pub fn fuse_swap_outs(g: &CompGraph) -> CompGraph {
    let mut out = g.clone();
    fuse_swap_outs_in_place(&mut out);
    out
}

/// Merges swap-ins of the same host tensor whose earliest consumers lie
/// within `distance` orders of the earliest consumer in their cluster. The
/// swap-in serving the earliest consumer survives.
pub(crate) fn fuse_swap_ins_in_place(g: &mut CompGraph, order: &OrderMap, distance: u32) {
    let mut groups: BTreeMap<TensorId, Vec<(u32, NodeId)>> = BTreeMap::new();
    for n in g.nodes().iter().filter(|n| n.kind == OpKind::SwapIn) {
        let Some(t) = input_tensor(g, n.id) else {
            continue;
        };
        let Some(first_use) = g
            .out_edges(n.id)
            .filter(|e| e.action == EdgeAction::Read)
            .map(|e| order[e.dst])
            .min()
        else {
            continue;
        };
        groups.entry(t).or_default().push((first_use, n.id));
    }
    for mut members in groups.into_values() {
        members.sort();
        let mut head = members[0];
        for &(at, id) in &members[1..] {
            if at - head.0 <= distance {
                merge_into(g, id, head.1);
            } else {
                head = (at, id);
            }
        }
    }
}

/// Copying form of [`fuse_swap_ins_in_place`] that orders the graph itself.
pub fn fuse_swap_ins(g: &CompGraph, distance: u32) -> Result<CompGraph> {
    let order = g.topo_order()?;
    let mut out = g.clone();
    fuse_swap_ins_in_place(&mut out, &order, distance);
    Ok(out)
}
