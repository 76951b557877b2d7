//! Shared helpers for integration tests: a seeded random graph generator and
//! brute-force oracles that do not call into the algorithms they check.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swapgraph_core::{
    fixtures, generate, CompGraph, CtrlQuery, EdgeAction, GraphBuilder, NodeId, OpKind, Phase,
    TensorId, TensorValue, Topology,
};

/// A valid graph of at most `max_nodes` nodes using only interpreter ops.
///
/// Variables hold 2x2 matrices; the optional constant is a scalar. The first
/// part of the ops is forward, the rest backward, and up to two variables get
/// an update op. Every other reader of an updated variable gets a control
/// edge into its updater, so the update never races with a read.
pub fn random_graph(seed: u64, max_nodes: usize) -> CompGraph {
    assert!(max_nodes >= 8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new();

    let n_vars = rng.gen_range(1..=3);
    let mut vars = Vec::new();
    // (tensor, is_matrix)
    let mut pool: Vec<(TensorId, bool)> = Vec::new();
    b.set_scope("params");
    for i in 0..n_vars {
        let (v, t) = b.variable(&format!("v{i}"));
        vars.push((v, t));
        pool.push((t, true));
    }
    let mut used = n_vars;
    if rng.gen_bool(0.5) {
        let (_, t) = b.constant(&format!("const:{}", rng.gen_range(1..=4)));
        pool.push((t, false));
        used += 1;
    }

    let n_updates = rng.gen_range(0..=n_vars.min(2));
    let n_ops = rng.gen_range(3..=max_nodes - used - n_updates);
    let split = (n_ops as f64 * rng.gen_range(0.4..0.8)) as usize;

    let mut readers: BTreeMap<TensorId, BTreeSet<NodeId>> = BTreeMap::new();
    let mut op_tensors: Vec<(TensorId, bool)> = Vec::new();
    for i in 0..n_ops {
        let (phase, scope) = if i < split {
            (Phase::Forward, "forward")
        } else {
            (Phase::Backward, "backward")
        };
        b.set_scope(scope);
        let pick = |rng: &mut ChaCha8Rng, pool: &[(TensorId, bool)]| -> (TensorId, bool) {
            // Bias towards recent tensors so the graphs have long chains
            // as well as long skips.
            if rng.gen_bool(0.6) && pool.len() > 3 {
                pool[rng.gen_range(pool.len() - 3..pool.len())]
            } else {
                *pool.choose(rng).unwrap()
            }
        };
        let (op, ins): (&str, Vec<(TensorId, bool)>) = match rng.gen_range(0..6) {
            0 => ("neg", vec![pick(&mut rng, &pool)]),
            1 => ("identity", vec![pick(&mut rng, &pool)]),
            2 => {
                let k = rng.gen_range(1..=3);
                ("add", (0..k).map(|_| pick(&mut rng, &pool)).collect())
            }
            3 => {
                let k = rng.gen_range(1..=3);
                ("mul", (0..k).map(|_| pick(&mut rng, &pool)).collect())
            }
            4 => ("sub", vec![pick(&mut rng, &pool), pick(&mut rng, &pool)]),
            _ => {
                let mats: Vec<(TensorId, bool)> = pool.iter().copied().filter(|p| p.1).collect();
                ("matmul", vec![pick(&mut rng, &mats), pick(&mut rng, &mats)])
            }
        };
        let ids: Vec<TensorId> = ins.iter().map(|p| p.0).collect();
        let is_mat = ins.iter().any(|p| p.1);
        let (n, t) = b.op(&format!("{op}:n{i}"), phase, &ids);
        b.tensor_mut(t).size_bytes = rng.gen_range(1..=4096);
        for id in ids {
            readers.entry(id).or_default().insert(n);
        }
        pool.push((t, is_mat));
        op_tensors.push((t, is_mat));
    }

    b.set_scope("optimizer");
    let mut chosen = vars.clone();
    chosen.shuffle(&mut rng);
    for (i, (v, tv)) in chosen.into_iter().take(n_updates).enumerate() {
        let other = *op_tensors.choose(&mut rng).unwrap();
        let (u, tu) = b.op(&format!("sub:upd{i}"), Phase::Update, &[tv, other.0]);
        b.tensor_mut(tu).size_bytes = rng.gen_range(1..=4096);
        b.update(tu, v);
        for &r in readers.get(&tv).into_iter().flatten() {
            b.control(r, u);
        }
    }
    let g = b.build();
    debug_assert!(g.validate().is_valid(), "{}", g.validate());
    g
}

/// Random 2x2 values for every variable in `g`.
pub fn random_inputs(g: &CompGraph, seed: u64) -> BTreeMap<String, TensorValue> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    g.nodes()
        .iter()
        .filter(|n| n.kind == OpKind::Variable)
        .map(|n| {
            let data = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            (n.name.clone(), TensorValue::new(vec![2, 2], data).unwrap())
        })
        .collect()
}

/// Layered order recomputed from scratch: parameterized nodes at 0, every
/// other node one above its highest read/control predecessor.
pub fn layers(g: &CompGraph) -> BTreeMap<NodeId, u32> {
    let mut memo: BTreeMap<NodeId, u32> = BTreeMap::new();
    fn visit(g: &CompGraph, n: NodeId, memo: &mut BTreeMap<NodeId, u32>) -> u32 {
        if let Some(&v) = memo.get(&n) {
            return v;
        }
        let node = g.node(n).unwrap();
        let v = if node.parameterized {
            0
        } else {
            let preds: Vec<NodeId> = g
                .edges()
                .iter()
                .filter(|e| e.dst == n && e.action != EdgeAction::Update)
                .map(|e| e.src)
                .collect();
            preds
                .into_iter()
                .map(|p| visit(g, p, memo) + 1)
                .max()
                .unwrap_or(0)
        };
        memo.insert(n, v);
        v
    }
    for n in g.nodes() {
        visit(g, n.id, &mut memo);
    }
    memo
}

/// Free step of `t` in a serial run: the producer's layer plus the tensor's
/// lifetime, where an update consumer counts at the producer's own layer.
pub fn expected_free_step(g: &CompGraph, layer: &BTreeMap<NodeId, u32>, t: TensorId) -> u32 {
    let producer = g.tensor(t).unwrap().producer;
    let p = layer[&producer];
    g.edges()
        .iter()
        .filter(|e| e.tensor == Some(t))
        .map(|e| match e.action {
            EdgeAction::Update => p,
            _ => layer[&e.dst],
        })
        .max()
        .unwrap_or(p)
        .max(p)
}

/// `closure[n]` holds every node reachable from `n` over read/control edges,
/// `n` included.
pub fn closure(g: &CompGraph) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
    let ids: Vec<NodeId> = g.nodes().iter().map(|n| n.id).collect();
    let mut reach: BTreeMap<NodeId, BTreeSet<NodeId>> =
        ids.iter().map(|&n| (n, BTreeSet::from([n]))).collect();
    // Warshall-style relaxation to a fixed point.
    loop {
        let mut changed = false;
        for e in g.edges().iter().filter(|e| e.action != EdgeAction::Update) {
            let add = reach[&e.dst].clone();
            let src = reach.get_mut(&e.src).unwrap();
            let before = src.len();
            src.extend(add);
            changed |= src.len() != before;
        }
        if !changed {
            return reach;
        }
    }
}

fn eligible(g: &CompGraph, n: NodeId) -> bool {
    let node = g.node(n).unwrap();
    !node.kind.is_swap() && !node.parameterized
}

/// Successors over read/control edges, with swap nodes replaced by their own
/// successors.
pub fn out_through_swaps(g: &CompGraph, n: NodeId) -> BTreeSet<NodeId> {
    let mut out = BTreeSet::new();
    for e in g
        .edges()
        .iter()
        .filter(|e| e.src == n && e.action != EdgeAction::Update)
    {
        if g.node(e.dst).unwrap().kind.is_swap() {
            out.extend(out_through_swaps(g, e.dst));
        } else {
            out.insert(e.dst);
        }
    }
    out
}

/// Brute-force reference for both control-op strategies. Everything that
/// depends only on the graph is computed once up front.
pub struct CtrlOracle<'a> {
    g: &'a CompGraph,
    pub layer: BTreeMap<NodeId, u32>,
    reach: BTreeMap<NodeId, BTreeSet<NodeId>>,
    outs: BTreeMap<NodeId, BTreeSet<NodeId>>,
    levels: BTreeMap<NodeId, Vec<BTreeSet<NodeId>>>,
}

impl<'a> CtrlOracle<'a> {
    pub fn new(g: &'a CompGraph) -> Self {
        let outs: BTreeMap<NodeId, BTreeSet<NodeId>> = g
            .nodes()
            .iter()
            .map(|n| (n.id, out_through_swaps(g, n.id)))
            .collect();
        let mut o = CtrlOracle {
            g,
            layer: layers(g),
            reach: closure(g),
            outs,
            levels: BTreeMap::new(),
        };
        for n in g.nodes() {
            let lv = o.chain_levels(n.id);
            o.levels.insert(n.id, lv);
        }
        o
    }

    /// Forward nodes processed at each depth of the chain-rule walk.
    ///
    /// Depth 0 is the source. A forward successor `f` of `u` at depth `d`
    /// joins depth `d + 1` unless it was already processed: at an earlier
    /// depth, or at depth `d` with an id below `u`'s.
    fn chain_levels(&self, source: NodeId) -> Vec<BTreeSet<NodeId>> {
        let mut levels = vec![BTreeSet::from([source])];
        loop {
            let d = levels.len() - 1;
            let earlier: BTreeSet<NodeId> = levels[..d].iter().flatten().copied().collect();
            let mut next = BTreeSet::new();
            for &u in &levels[d] {
                for &f in &self.outs[&u] {
                    let done = earlier.contains(&f) || (levels[d].contains(&f) && f < u);
                    if self.g.node(f).unwrap().phase == Phase::Forward && !done {
                        next.insert(f);
                    }
                }
            }
            if next.is_empty() {
                return levels;
            }
            levels.push(next);
        }
    }

    /// Every node in the open order window above `source` and below
    /// `target` that may carry a control edge and reaches `target`.
    pub fn window(&self, q: &CtrlQuery) -> Vec<NodeId> {
        let (gs, gt) = (self.layer[&q.source], self.layer[&q.target]);
        self.layer
            .iter()
            .filter(|&(&n, &l)| {
                l > gs && l < gt && eligible(self.g, n) && self.reach[&n].contains(&q.target)
            })
            .map(|(&n, _)| n)
            .collect()
    }

    /// The window candidate closest below the target whose distance `k`
    /// satisfies `max(lb, 1) <= k <= ub` and
    /// `γ(target) - k > max(γ(target) - ub + 1, γ(source))`; ties go to the
    /// lowest id.
    pub fn direct_order(&self, q: &CtrlQuery) -> Option<NodeId> {
        if q.lb > q.ub {
            return None;
        }
        let (gs, gt) = (
            i64::from(self.layer[&q.source]),
            i64::from(self.layer[&q.target]),
        );
        let floor = (gt - q.ub + 1).max(gs);
        self.window(q)
            .into_iter()
            .filter(|n| {
                let l = i64::from(self.layer[n]);
                let k = gt - l;
                k >= q.lb.max(1) && k <= q.ub && l > floor
            })
            .min_by_key(|n| (std::cmp::Reverse(self.layer[n]), *n))
    }

    /// Each backward window candidate is ranked by the first
    /// `(depth, forward node, candidate)` triple through which the walk
    /// sees it, over depths `lb <= d < ub`; the lowest rank wins.
    pub fn chain_rule(&self, q: &CtrlQuery) -> Option<NodeId> {
        if q.ub <= 0 || q.lb > q.ub {
            return None;
        }
        let levels = &self.levels[&q.source];
        let mut best: Option<(usize, NodeId, NodeId)> = None;
        for b in self.window(q) {
            if self.g.node(b).unwrap().phase != Phase::Backward {
                continue;
            }
            for (d, level) in levels.iter().enumerate() {
                if (d as i64) < q.lb || (d as i64) >= q.ub {
                    continue;
                }
                for &u in level {
                    if self.outs[&u].contains(&b) {
                        let key = (d, u, b);
                        if best.is_none_or(|k| key < k) {
                            best = Some(key);
                        }
                    }
                }
            }
        }
        best.map(|k| k.2)
    }
}

/// Read edges from forward to backward nodes that are not adjacent to a
/// variable or constant, as distinct tensors.
pub fn crossing_tensors(g: &CompGraph) -> BTreeSet<TensorId> {
    g.edges()
        .iter()
        .filter(|e| e.action == EdgeAction::Read)
        .filter(|e| {
            let (s, d) = (g.node(e.src).unwrap(), g.node(e.dst).unwrap());
            s.phase == Phase::Forward
                && d.phase == Phase::Backward
                && !s.parameterized
                && !d.parameterized
        })
        .filter_map(|e| e.tensor)
        .collect()
}

/// Small graphs with explicit phases: hand-built fixtures and tiny
/// generated training graphs.
pub fn small_fixtures() -> Vec<(String, CompGraph)> {
    let mut out = vec![
        ("expression".to_owned(), fixtures::expression_graph()),
        ("fanout_core".to_owned(), fixtures::fanout_core().0),
        ("fanout_chain".to_owned(), fixtures::fanout_chain().graph),
    ];
    let topologies = [
        Topology::Chain { n: 1 },
        Topology::Chain { n: 3 },
        Topology::Chain { n: 5 },
        Topology::Chain { n: 7 },
        Topology::Branchy {
            stages: 1,
            width: 2,
        },
        Topology::Branchy {
            stages: 2,
            width: 2,
        },
        Topology::Unet {
            depth: 1,
            convs_per_level: 1,
        },
        Topology::ResnetLike { blocks: 1 },
        Topology::ResnetLike { blocks: 2 },
    ];
    for t in topologies {
        out.push((format!("{t:?}"), generate(t, 64).unwrap()));
    }
    out
}
