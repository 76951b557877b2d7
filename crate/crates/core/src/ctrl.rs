//! Choosing the operation that triggers a swap-in.
//!
//! A swap-in must run late enough that its tensor does not sit on the device
//! for long, and early enough that the consumer does not stall on the copy.
//! Both strategies search the window `γ(source) < γ(n) < γ(target)` for a node
//! `n` from which `target` is reachable, so that adding the control edge
//! `n -> swap_in` never creates a cycle. Where the underlying procedure
//! picks "any" member of a candidate set, these implementations pick the
//! lowest node id.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::graph::{CompGraph, EdgeRec, NodeId, OpKind, OrderMap, Phase};
use crate::{Error, Result};

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CtrlStrategy {
    #[default]
    ChainRule,
    DirectOrder,
}

impl fmt::Display for CtrlStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CtrlStrategy::ChainRule => "chain_rule",
            CtrlStrategy::DirectOrder => "direct_order",
        })
    }
}

impl FromStr for CtrlStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "chain_rule" => Ok(CtrlStrategy::ChainRule),
            "direct_order" => Ok(CtrlStrategy::DirectOrder),
            _ => Err(format!(
                "unknown strategy `{s}` (chain_rule | direct_order)"
            )),
        }
    }
}

/// `source` is the swap-out node for [`direct_order`] and the producing
/// forward operation for [`chain_rule`]; `target` is the consumer.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct CtrlQuery {
    pub source: NodeId,
    pub target: NodeId,
    pub lb: i64,
    pub ub: i64,
}

/// Nodes from which `target` is reachable over read/control edges, `target` included.
pub(crate) fn ancestors(g: &CompGraph, target: NodeId) -> BTreeSet<NodeId> {
    let mut seen = BTreeSet::from([target]);
    let mut stack = vec![target];
    while let Some(n) = stack.pop() {
        for e in g.in_edges(n) {
            if e.orders_execution() && seen.insert(e.src) {
                stack.push(e.src);
            }
        }
    }
    seen
}

fn eligible(g: &CompGraph, n: NodeId) -> bool {
    g.node(n)
        .is_some_and(|node| !node.kind.is_swap() && !node.parameterized)
}

/// Walks back from `target` one order at a time, starting `lb` orders before
/// it, and returns the first order level holding a node that reaches
/// `target`. Gives up once the level drops to
/// `max(γ(target) − ub + 1, γ(source))`.
pub fn direct_order(g: &CompGraph, order: &OrderMap, q: &CtrlQuery) -> Option<NodeId> {
    let target_order = i64::from(order.get(q.target)?);
    let source_order = i64::from(order.get(q.source)?);
    let lowest = (target_order - q.ub + 1).max(source_order);

    let mut by_order: BTreeMap<i64, Vec<NodeId>> = BTreeMap::new();
    for n in ancestors(g, q.target) {
        if n != q.target && eligible(g, n) {
            by_order.entry(i64::from(order[n])).or_default().push(n);
        }
    }

    let mut i = q.lb;
    while i <= q.ub {
        let k = target_order - i;
        if k <= lowest {
            return None;
        }
        if i >= 1 {
            // Ancestors were collected in ascending id order.
            if let Some(first) = by_order.get(&k).and_then(|v| v.first()) {
                return Some(*first);
            }
        }
        i += 1;
    }
    None
}

/// Successors of `n` over read/control edges, looking through swap nodes so
/// that an already-rewritten edge still connects producer and consumer.
pub(crate) fn successors_through_swaps(g: &CompGraph, n: NodeId) -> BTreeSet<NodeId> {
    let mut out = BTreeSet::new();
    let mut stack: Vec<NodeId> = g
        .out_edges(n)
        .filter(|e| e.orders_execution())
        .map(|e: &EdgeRec| e.dst)
        .collect();
    let mut seen = BTreeSet::new();
    while let Some(d) = stack.pop() {
        if !seen.insert(d) {
            continue;
        }
        match g.node(d).map(|node| node.kind) {
            Some(OpKind::SwapOut | OpKind::SwapIn) => {
                stack.extend(
                    g.out_edges(d)
                        .filter(|e| e.orders_execution())
                        .map(|e| e.dst),
                );
            }
            Some(_) => {
                out.insert(d);
            }
            None => {}
        }
    }
    out
}

/// Breadth-first walk down the forward phase from `source`. At each level
/// whose depth is at least `lb` (and below `ub`), the backward operations fed
/// by the current forward node are checked against the order window and for
/// reachability of `target`.
pub fn chain_rule(g: &CompGraph, order: &OrderMap, q: &CtrlQuery) -> Option<NodeId> {
    let source_order = order.get(q.source)?;
    let target_order = order.get(q.target)?;
    let reaches_target = ancestors(g, q.target);
    let phase = |n: NodeId| g.node(n).map_or(Phase::Unknown, |node| node.phase);

    let (mut lb, mut ub) = (q.lb, q.ub);
    let mut current: BTreeSet<NodeId> = BTreeSet::from([q.source]);
    let mut next: BTreeSet<NodeId> = BTreeSet::new();
    let mut visited: BTreeSet<NodeId> = BTreeSet::new();

    while let Some(s) = current.pop_first() {
        if ub == 0 || lb > ub {
            return None;
        }
        let out = successors_through_swaps(g, s);
        if lb <= 0 {
            let hit = out.iter().copied().find(|&b| {
                phase(b) == Phase::Backward
                    && eligible(g, b)
                    && order[b] > source_order
                    && order[b] < target_order
                    && reaches_target.contains(&b)
            });
            if hit.is_some() {
                return hit;
            }
        }
        for f in out {
            if phase(f) == Phase::Forward && !visited.contains(&f) {
                next.insert(f);
            }
        }
        visited.insert(s);
        if current.is_empty() {
            lb -= 1;
            ub -= 1;
            current = std::mem::take(&mut next);
        }
    }
    None
}

/// The latest node before `target` that reaches it, searched over the whole
/// window above the swap-out. Used when a strategy finds nothing.
pub fn fallback(
    g: &CompGraph,
    order: &OrderMap,
    swap_out: NodeId,
    target: NodeId,
) -> Option<NodeId> {
    let span = i64::from(order.get(target)?) - i64::from(order.get(swap_out)?);
    direct_order(
        g,
        order,
        &CtrlQuery {
            source: swap_out,
            target,
            lb: 1,
            ub: span,
        },
    )
}

pub(crate) fn attach_in_place(g: &mut CompGraph, ctrl: NodeId, swap_in: NodeId) -> Result<()> {
    g.try_node(ctrl)?;
    let target = g.try_node(swap_in)?;
    if target.parameterized {
        return Err(Error::Config(format!(
            "control edge into parameterized node {swap_in}"
        )));
    }
    if ctrl == swap_in || g.reachable(swap_in)?.contains(&ctrl) {
        return Err(Error::ControlCycle {
            ctrl,
            target: swap_in,
        });
    }
    g.push_edge(EdgeRec::control(ctrl, swap_in));
    Ok(())
}

/// Adds the control edge `ctrl -> swap_in`, refusing edges that would make
/// the execution subgraph cyclic.
pub fn attach_control(g: &CompGraph, ctrl: NodeId, swap_in: NodeId) -> Result<CompGraph> {
    let mut out = g.clone();
    attach_in_place(&mut out, ctrl, swap_in)?;
    Ok(out)
}
