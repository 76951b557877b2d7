use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{RewriteConfig, SkipNote};
use crate::graph::{CompGraph, EdgeAction, NodeId, OpNode, OrderMap, Phase, TensorId};
use crate::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub src: NodeId,
    pub dst: NodeId,
    pub tensor: TensorId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Selection {
    /// Edges to rewrite, in breadth-first discovery order.
    pub candidates: Vec<Candidate>,
    pub skipped: Vec<SkipNote>,
}

impl Selection {
    pub fn tensor_count(&self) -> usize {
        self.candidates
            .iter()
            .map(|c| c.tensor)
            .collect::<BTreeSet<_>>()
            .len()
    }
}

/// Fills in missing phases. Explicit phases are kept. Otherwise a node under
/// one of the optimizer scopes is `update` if it writes a variable and
/// `backward` if not; every other node is `forward`. Parameterized nodes are
/// left alone.
pub fn resolve_phases(g: &CompGraph, cfg: &RewriteConfig) -> Result<CompGraph> {
    let mut out = g.clone();
    for n in g.nodes() {
        if n.parameterized || n.phase != Phase::Unknown {
            continue;
        }
        if cfg.optimizer_scopes.is_empty() {
            return Err(Error::UnresolvedPhase(n.id));
        }
        let phase = if cfg.optimizer_scopes.iter().any(|s| n.in_scope(s)) {
            if g.out_edges(n.id).any(|e| e.action == EdgeAction::Update) {
                Phase::Update
            } else {
                Phase::Backward
            }
        } else {
            Phase::Forward
        };
        out.node_mut(n.id).expect("node exists").phase = phase;
    }
    Ok(out)
}

fn starting_points(g: &CompGraph, cfg: &RewriteConfig) -> Result<Vec<NodeId>> {
    if cfg.starting_scope.is_none() && cfg.starting_op_names.is_empty() {
        return Ok(g
            .nodes()
            .iter()
            .filter(|n| n.parameterized)
            .map(|n| n.id)
            .collect());
    }
    let mut starts = BTreeSet::new();
    if let Some(scope) = &cfg.starting_scope {
        let before = starts.len();
        starts.extend(g.nodes().iter().filter(|n| n.in_scope(scope)).map(|n| n.id));
        if starts.len() == before {
            return Err(Error::UnknownStart(format!("scope `{scope}`")));
        }
    }
    for name in &cfg.starting_op_names {
        match g.node_by_name(name) {
            Some(n) => {
                starts.insert(n.id);
            }
            None => return Err(Error::UnknownStart(format!("operation `{name}`"))),
        }
    }
    Ok(starts.into_iter().collect())
}

fn type_matches(n: &OpNode, types: &BTreeSet<String>) -> bool {
    types.contains(n.kind.as_str()) || types.contains(n.op_type())
}

/// Why the producer's output may not be swapped, if it may not.
fn filter_reason(n: &OpNode, cfg: &RewriteConfig) -> Option<&'static str> {
    if cfg.excl_scopes.iter().any(|s| n.in_scope(s)) {
        return Some("producer in excluded scope");
    }
    if type_matches(n, &cfg.excl_types) {
        return Some("producer has excluded type");
    }
    let has_incl = !cfg.incl_scopes.is_empty() || !cfg.incl_types.is_empty();
    if has_incl
        && !cfg.incl_scopes.iter().any(|s| n.in_scope(s))
        && !type_matches(n, &cfg.incl_types)
    {
        return Some("producer not in any included scope or type");
    }
    None
}

/// Breadth-first walk from the starting points (all parameterized nodes by
/// default), siblings in ascending id order, collecting read edges that
/// cross from the forward to the backward phase, plus long forward-to-forward
/// edges when `swap_branches` is on. The list is cut after `n_tensors`
/// distinct tensors.
pub fn select_candidates(
    g: &CompGraph,
    order: &OrderMap,
    cfg: &RewriteConfig,
) -> Result<Selection> {
    let starts = starting_points(g, cfg)?;
    let cap = usize::try_from(cfg.n_tensors).ok();

    let mut sel = Selection::default();
    let mut chosen_tensors: BTreeSet<TensorId> = BTreeSet::new();
    let mut visited: BTreeSet<NodeId> = starts.iter().copied().collect();
    let mut queue: VecDeque<NodeId> = starts.into_iter().collect();

    while let Some(u) = queue.pop_front() {
        let src = g.try_node(u)?;
        let mut out: Vec<_> = g
            .out_edges(u)
            .filter(|e| e.orders_execution())
            .copied()
            .collect();
        out.sort_by_key(|e| (e.dst, e.tensor));
        // A node reading one tensor twice is a single rewrite.
        out.dedup_by_key(|e| (e.dst, e.action, e.tensor));

        for e in &out {
            if e.action != EdgeAction::Read {
                continue;
            }
            let t = e.tensor.expect("read edges carry tensors");
            let dst = g.try_node(e.dst)?;
            let gap = i64::from(order[e.dst]) - i64::from(order[u]);
            let skip = |reason: String| SkipNote {
                src: u,
                dst: e.dst,
                tensor: Some(t),
                reason,
            };

            let crosses = src.phase == Phase::Forward && dst.phase == Phase::Backward;
            let branch =
                cfg.swap_branches && src.phase == Phase::Forward && dst.phase == Phase::Forward;
            if !crosses && !branch {
                continue;
            }
            if !crosses && gap <= i64::from(cfg.branch_threshold) {
                sel.skipped.push(skip(format!(
                    "order gap {gap} not above branch threshold {}",
                    cfg.branch_threshold
                )));
                continue;
            }
            if src.parameterized || dst.parameterized {
                sel.skipped.push(skip("variable-adjacent edge".into()));
                continue;
            }
            if src.device.is_host() || dst.device.is_host() {
                sel.skipped
                    .push(skip("endpoint not placed on an accelerator".into()));
                continue;
            }
            if let Some(reason) = filter_reason(src, cfg) {
                sel.skipped.push(skip(reason.into()));
                continue;
            }
            if !chosen_tensors.contains(&t) {
                if cap.is_some_and(|c| chosen_tensors.len() >= c) {
                    sel.skipped.push(skip("n_tensors limit reached".into()));
                    continue;
                }
                chosen_tensors.insert(t);
            }
            sel.candidates.push(Candidate {
                src: u,
                dst: e.dst,
                tensor: t,
            });
        }

        let mut next: Vec<NodeId> = out.iter().map(|e| e.dst).collect();
        next.dedup();
        for n in next {
            if visited.insert(n) {
                queue.push_back(n);
            }
        }
    }
    Ok(sel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::graph::GraphBuilder;

    fn fanout_selection(cfg: &RewriteConfig) -> (fixtures::FanoutChain, Selection) {
        let fx = fixtures::fanout_chain();
        let o = fx.graph.topo_order().unwrap();
        let sel = select_candidates(&fx.graph, &o, cfg).unwrap();
        (fx, sel)
    }

    #[test]
    fn branch_threshold_picks_the_two_long_edges() {
        let cfg = RewriteConfig {
            swap_branches: true,
            branch_threshold: 5,
            ..RewriteConfig::default()
        };
        let (fx, sel) = fanout_selection(&cfg);
        let picked: Vec<_> = sel.candidates.iter().map(|c| (c.src, c.dst)).collect();
        assert_eq!(picked, vec![(fx.f1, fx.f3), (fx.f1, fx.f2)]);
        assert_eq!(sel.tensor_count(), 1);
        let f4_skip = sel.skipped.iter().find(|s| s.dst == fx.f4).unwrap();
        assert!(f4_skip.reason.contains("branch threshold"));
    }

    #[test]
    fn zero_cap_selects_nothing() {
        let cfg = RewriteConfig {
            swap_branches: true,
            branch_threshold: 5,
            n_tensors: 0,
            ..RewriteConfig::default()
        };
        let (_, sel) = fanout_selection(&cfg);
        assert!(sel.candidates.is_empty());
    }

    /// x -> f1 .. f10 forward, each fi also read by a backward op bi.
    fn ten_layer() -> (CompGraph, Vec<(NodeId, NodeId)>) {
        let mut b = GraphBuilder::new();
        let (_, mut prev) = b.variable("x");
        let mut fwd = Vec::new();
        for i in 1..=10 {
            let (f, t) = b.op(&format!("neg:f{i}"), Phase::Forward, &[prev]);
            fwd.push((f, t));
            prev = t;
        }
        let mut grad = prev;
        let mut pairs = Vec::new();
        for (f, t) in fwd.iter().rev() {
            let (bi, tb) = b.op("mul:b", Phase::Backward, &[grad, *t]);
            pairs.push((*f, bi));
            grad = tb;
        }
        (b.build(), pairs)
    }

    #[test]
    fn default_selection_takes_every_forward_to_backward_edge() {
        let (g, pairs) = ten_layer();
        let o = g.topo_order().unwrap();
        let sel = select_candidates(&g, &o, &RewriteConfig::default()).unwrap();
        // Independent scan: every read edge from a forward node into a backward node.
        let expected: BTreeSet<(NodeId, NodeId)> = g
            .edges()
            .iter()
            .filter(|e| e.action == EdgeAction::Read)
            .filter(|e| {
                g.node(e.src).unwrap().phase == Phase::Forward
                    && g.node(e.dst).unwrap().phase == Phase::Backward
            })
            .map(|e| (e.src, e.dst))
            .collect();
        let got: BTreeSet<_> = sel.candidates.iter().map(|c| (c.src, c.dst)).collect();
        assert_eq!(got, expected);
        // b10 reads f10's output twice; that is still one candidate.
        assert_eq!(sel.candidates.len(), 10);
        assert_eq!(got.len(), 10);
        assert_eq!(sel.tensor_count(), 10);
        assert!(pairs.iter().all(|p| got.contains(p)));
    }

    #[test]
    fn cap_counts_tensors_in_discovery_order() {
        let (g, _) = ten_layer();
        let o = g.topo_order().unwrap();
        let cfg = RewriteConfig {
            n_tensors: 3,
            ..RewriteConfig::default()
        };
        let sel = select_candidates(&g, &o, &cfg).unwrap();
        assert_eq!(sel.tensor_count(), 3);
        let srcs: Vec<u32> = sel.candidates.iter().map(|c| c.src.0).collect();
        assert_eq!(srcs, vec![1, 2, 3]);
    }

    #[test]
    fn exclusion_beats_inclusion() {
        let (mut g, _) = ten_layer();
        for id in 1..=10u32 {
            g.node_mut(NodeId(id)).unwrap().scope = format!("block{}", id % 2);
        }
        let o = g.topo_order().unwrap();
        let cfg = RewriteConfig {
            incl_scopes: BTreeSet::from(["block0".to_owned(), "block1".to_owned()]),
            excl_scopes: BTreeSet::from(["block1".to_owned()]),
            ..RewriteConfig::default()
        };
        let sel = select_candidates(&g, &o, &cfg).unwrap();
        assert!(sel.candidates.iter().all(|c| c.src.0 % 2 == 0));
        assert_eq!(sel.tensor_count(), 5);

        let cfg = RewriteConfig {
            incl_types: BTreeSet::from(["matmul".to_owned()]),
            ..RewriteConfig::default()
        };
        assert!(select_candidates(&g, &o, &cfg)
            .unwrap()
            .candidates
            .is_empty());
        let cfg = RewriteConfig {
            excl_types: BTreeSet::from(["neg".to_owned()]),
            ..RewriteConfig::default()
        };
        assert!(select_candidates(&g, &o, &cfg)
            .unwrap()
            .candidates
            .is_empty());
    }

    #[test]
    fn starting_points_restrict_the_walk() {
        let (g, _) = ten_layer();
        let o = g.topo_order().unwrap();
        let cfg = RewriteConfig {
            starting_op_names: BTreeSet::from(["neg:f8".to_owned()]),
            ..RewriteConfig::default()
        };
        let sel = select_candidates(&g, &o, &cfg).unwrap();
        assert_eq!(sel.tensor_count(), 3);

        let cfg = RewriteConfig {
            starting_scope: Some("nowhere".into()),
            ..RewriteConfig::default()
        };
        assert!(matches!(
            select_candidates(&g, &o, &cfg),
            Err(Error::UnknownStart(_))
        ));
        let cfg = RewriteConfig {
            starting_op_names: BTreeSet::from(["missing".to_owned()]),
            ..RewriteConfig::default()
        };
        assert!(matches!(
            select_candidates(&g, &o, &cfg),
            Err(Error::UnknownStart(_))
        ));
    }

    #[test]
    fn phases_resolve_from_optimizer_scopes() {
        let mut b = GraphBuilder::new();
        let (w, tw) = b.variable("w");
        let (f, tf) = b.op("neg:f", Phase::Unknown, &[tw]);
        b.set_scope("adam/grads");
        let (gr, tg) = b.op("mul:g", Phase::Unknown, &[tf]);
        let (u, tu) = b.op("sub:u", Phase::Unknown, &[tw, tg]);
        b.update(tu, w);
        let g = b.build();
        assert!(matches!(
            resolve_phases(&g, &RewriteConfig::default()),
            Err(Error::UnresolvedPhase(_))
        ));
        let cfg = RewriteConfig {
            optimizer_scopes: BTreeSet::from(["adam".to_owned()]),
            ..RewriteConfig::default()
        };
        let r = resolve_phases(&g, &cfg).unwrap();
        assert_eq!(r.node(f).unwrap().phase, Phase::Forward);
        assert_eq!(r.node(gr).unwrap().phase, Phase::Backward);
        assert_eq!(r.node(u).unwrap().phase, Phase::Update);
        assert_eq!(r.node(w).unwrap().phase, Phase::Unknown);
    }
}
