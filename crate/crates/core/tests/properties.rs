mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use swapgraph_core::rewrite::{fuse_swap_ins, fuse_swap_outs, insert_swap_pair, select_candidates};
use swapgraph_core::{
    chain_rule, direct_order, generate, rewrite, simulate, CompGraph, CtrlQuery, CtrlStrategy,
    Device, EdgeAction, EdgeRec, EventKind, NodeId, OpKind, OpNode, Phase, RewriteConfig,
    SimConfig, TensorId, TensorSpec, Topology,
};

use common::*;

fn config_strategy() -> impl Strategy<Value = RewriteConfig> {
    (
        prop_oneof![Just(-1i64), 0i64..6],
        1i64..5,
        prop_oneof![Just(10000i64), 1i64..12],
        any::<bool>(),
        any::<bool>(),
        1u32..4,
        any::<bool>(),
        0u32..4,
    )
        .prop_map(
            |(n_tensors, lb, ub, chain, fuse, dist, branches, alpha)| RewriteConfig {
                n_tensors,
                lb,
                ub: ub.max(lb),
                ctrld_strategy: if chain {
                    CtrlStrategy::ChainRule
                } else {
                    CtrlStrategy::DirectOrder
                },
                fuse_swapins: fuse,
                swapin_fuse_distance: dist,
                swap_branches: branches,
                branch_threshold: alpha,
                ..RewriteConfig::default()
            },
        )
}

/// Appends a forward sink that reads `input`.
fn with_sink(g: &CompGraph, input: TensorId) -> CompGraph {
    let id = g.next_node_id();
    let out = g.next_tensor_id();
    let mut nodes = g.nodes().to_vec();
    nodes.push(OpNode {
        id,
        name: "neg:extra".into(),
        scope: "forward".into(),
        kind: OpKind::Compute,
        parameterized: false,
        phase: Phase::Forward,
        device: Device::Accelerator(0),
        cost_hint: 1.0,
    });
    let producer = g.tensor(input).unwrap().producer;
    let mut edges = g.edges().to_vec();
    edges.push(EdgeRec::read(producer, id, input));
    let mut tensors = g.tensors().to_vec();
    tensors.push(TensorSpec {
        id: out,
        producer: id,
        size_bytes: 8,
        dtype: "f64".into(),
    });
    CompGraph::from_parts(nodes, edges, tensors)
}

/// Consumer of a swap-in's output with the lowest `(order, id)`.
fn swap_in_target(g: &CompGraph, order: &swapgraph_core::OrderMap, si: NodeId) -> NodeId {
    g.out_edges(si)
        .filter(|e| e.action == EdgeAction::Read)
        .map(|e| e.dst)
        .min_by_key(|&c| (order[c], c))
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn topo_order_satisfies_both_clauses(seed in any::<u64>()) {
        let g = random_graph(seed, 50);
        let o = g.topo_order().unwrap();
        let layer = layers(&g);
        for n in g.nodes() {
            if n.parameterized {
                prop_assert_eq!(o[n.id], 0);
            }
            prop_assert_eq!(o[n.id], layer[&n.id]);
        }
        for e in g.edges().iter().filter(|e| e.action != EdgeAction::Update) {
            prop_assert!(o[e.src] < o[e.dst], "edge {:?}", e);
        }
    }

    #[test]
    fn reachability_is_closed_and_monotone(seed in any::<u64>()) {
        let g = random_graph(seed, 40);
        let reach = closure(&g);
        let lib: BTreeMap<NodeId, BTreeSet<NodeId>> =
            g.nodes().iter().map(|n| (n.id, g.reachable(n.id).unwrap())).collect();
        for (v, rv) in &lib {
            prop_assert_eq!(rv, &reach[v]);
            for w in rv {
                prop_assert!(lib[w].is_subset(rv));
            }
        }
    }

    #[test]
    fn lifetime_ignores_nodes_that_do_not_read_the_tensor(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let g = random_graph(seed, 40);
        let tensors: Vec<TensorId> = g.tensors().iter().map(|t| t.id).collect();
        let other = tensors[pick.index(tensors.len())];
        let h = with_sink(&g, other);
        let (og, oh) = (g.topo_order().unwrap(), h.topo_order().unwrap());
        for &t in tensors.iter().filter(|&&t| t != other) {
            prop_assert_eq!(g.lifetime(&og, t).unwrap(), h.lifetime(&oh, t).unwrap());
        }
    }

    #[test]
    fn rewrites_are_valid_acyclic_and_deterministic(seed in any::<u64>(), cfg in config_strategy()) {
        let g = random_graph(seed, 50);
        let (r, rep) = rewrite(&g, &cfg).unwrap();
        let v = r.validate();
        prop_assert!(v.is_valid(), "{}", v);
        let o = r.topo_order().unwrap();
        prop_assert_eq!(&rewrite(&g, &cfg).unwrap().0, &r);

        prop_assert!(rep.swap_outs_added <= rep.tensors_swapped);
        prop_assert_eq!(rep.swap_outs_added, r.count_kind(OpKind::SwapOut));
        prop_assert_eq!(rep.swap_ins_added, r.count_kind(OpKind::SwapIn));
        prop_assert_eq!(
            rep.control_edges_added,
            r.count_action(EdgeAction::Control) - g.count_action(EdgeAction::Control)
        );

        // Every new control edge triggers a swap-in strictly before the
        // consumer it feeds, from a node that reaches that consumer.
        for e in r.edges().iter().filter(|e| e.action == EdgeAction::Control) {
            if r.node(e.dst).unwrap().kind != OpKind::SwapIn {
                continue;
            }
            let target = swap_in_target(&r, &o, e.dst);
            prop_assert!(o[e.src] < o[target]);
            prop_assert!(r.reachable(e.src).unwrap().contains(&target));
        }

        // One swap-out per swapped tensor.
        let mut seen = BTreeSet::new();
        for n in r.nodes().iter().filter(|n| n.kind == OpKind::SwapOut) {
            let t = r.inputs(n.id).next().unwrap().tensor.unwrap();
            prop_assert!(seen.insert(t), "tensor {} has two swap-outs", t);
        }
    }

    #[test]
    fn the_cap_counts_distinct_tensors(seed in any::<u64>(), cap in prop_oneof![Just(-1i64), 0i64..8]) {
        let g = random_graph(seed, 50);
        let cfg = RewriteConfig { n_tensors: cap, ..RewriteConfig::default() };
        let (_, rep) = rewrite(&g, &cfg).unwrap();
        let all = crossing_tensors(&g).len();
        let want = if cap < 0 { all } else { all.min(cap as usize) };
        prop_assert_eq!(rep.tensors_swapped, want);
    }

    #[test]
    fn fused_swap_ins_serve_nearby_consumers(seed in any::<u64>(), d in 1u32..5) {
        let g = random_graph(seed, 50);
        let o = g.topo_order().unwrap();
        let sel = select_candidates(&g, &o, &RewriteConfig::default()).unwrap();
        let mut h = g.clone();
        for c in &sel.candidates {
            h = insert_swap_pair(&h, c.src, c.dst, c.tensor).unwrap().0;
        }
        let h = fuse_swap_outs(&h);
        prop_assert_eq!(&fuse_swap_outs(&h), &h);
        let ho = h.topo_order().unwrap();
        let f = fuse_swap_ins(&h, d).unwrap();
        prop_assert!(f.validate().is_valid());
        prop_assert!(f.count_kind(OpKind::SwapIn) <= h.count_kind(OpKind::SwapIn));
        for si in f.nodes().iter().filter(|n| n.kind == OpKind::SwapIn) {
            let orders: Vec<u32> = f.out_edges(si.id).map(|e| ho[e.dst]).collect();
            let (lo, hi) = (orders.iter().min().unwrap(), orders.iter().max().unwrap());
            prop_assert!(hi - lo <= d, "swap-in {} serves orders {:?}", si.id, orders);
        }
    }

    #[test]
    fn simulation_conserves_memory_and_respects_liveness(seed in any::<u64>(), swap in any::<bool>(), overlap in any::<bool>()) {
        let g0 = random_graph(seed, 50);
        let g = if swap { rewrite(&g0, &RewriteConfig::default()).unwrap().0 } else { g0 };
        let sim = SimConfig {
            host_to_device_bandwidth: 1000.0,
            device_to_host_bandwidth: 1000.0,
            overlap_transfers: overlap,
            ..SimConfig::default()
        };
        let r = simulate(&g, &g.topo_order().unwrap(), &sim).unwrap();
        prop_assert_eq!(&simulate(&g, &g.topo_order().unwrap(), &sim).unwrap(), &r);
        prop_assert_eq!(r.oom, r.peak_device_bytes > sim.device_capacity_bytes);

        let device = |n: NodeId| g.node(n).unwrap().device;
        let mut usage: BTreeMap<Device, i64> = BTreeMap::new();
        let mut finished: BTreeSet<NodeId> = BTreeSet::new();
        let mut last_time = 0.0;
        for e in &r.event_trace {
            prop_assert!(e.time >= last_time);
            last_time = e.time;
            match e.kind {
                EventKind::Alloc => *usage.entry(e.device).or_default() += e.bytes as i64,
                EventKind::Free => *usage.entry(e.device).or_default() -= e.bytes as i64,
                EventKind::Finish => {
                    finished.insert(e.node.unwrap());
                }
                _ => {}
            }
            prop_assert!(usage.values().all(|&u| u >= 0));
            // Tensors already produced that an unfinished op on the same
            // accelerator still has to read.
            let mut live: BTreeMap<Device, i64> = BTreeMap::new();
            for t in g.tensors() {
                let p = g.node(t.producer).unwrap();
                if p.parameterized || !finished.contains(&p.id) || p.device.is_host() {
                    continue;
                }
                let pending = g.consumers(t.id).iter().any(|&(c, a)| {
                    a == EdgeAction::Read && !finished.contains(&c) && device(c) == p.device
                });
                if pending {
                    *live.entry(p.device).or_default() += t.size_bytes as i64;
                }
            }
            for (d, bytes) in live {
                prop_assert!(usage.get(&d).copied().unwrap_or(0) >= bytes, "at {:?}", e);
            }
        }
        prop_assert!(usage.values().all(|&u| u == 0), "leaked {:?}", usage);
    }

    #[test]
    fn control_choices_lie_in_the_window(seed in any::<u64>(), lb in 0i64..6, span in 0i64..8, picks in any::<(prop::sample::Index, prop::sample::Index)>()) {
        let g0 = random_graph(seed, 40);
        let g = rewrite(&g0, &RewriteConfig::default()).unwrap().0;
        let o = g.topo_order().unwrap();
        let ids: Vec<NodeId> = g.nodes().iter().map(|n| n.id).collect();
        let (s, t) = (ids[picks.0.index(ids.len())], ids[picks.1.index(ids.len())]);
        prop_assume!(o[s] < o[t]);
        let q = CtrlQuery { source: s, target: t, lb, ub: lb + span };
        for (strategy, found) in [("direct", direct_order(&g, &o, &q)), ("chain", chain_rule(&g, &o, &q))] {
            let Some(n) = found else { continue };
            prop_assert!(o[s] < o[n] && o[n] < o[t], "{} picked {}", strategy, n);
            prop_assert!(g.reachable(n).unwrap().contains(&t));
            let node = g.node(n).unwrap();
            prop_assert!(!node.parameterized && !node.kind.is_swap());
        }
        if let Some(n) = direct_order(&g, &o, &q) {
            let k = i64::from(o[t] - o[n]);
            prop_assert!(q.lb <= k && k <= q.ub);
        }
        prop_assert_eq!(direct_order(&g, &o, &q), direct_order(&g, &o, &q));
        prop_assert_eq!(chain_rule(&g, &o, &q), chain_rule(&g, &o, &q));
    }

    #[test]
    fn chain_peak_does_not_grow_with_more_swapping(n in 3usize..40) {
        let g = generate(Topology::Chain { n }, 1 << 16).unwrap();
        let sim = SimConfig::default();
        let mut last = u64::MAX;
        for cap in 0..=(n as i64) {
            let cfg = RewriteConfig { n_tensors: cap, ..RewriteConfig::default() };
            let (r, _) = rewrite(&g, &cfg).unwrap();
            let peak = simulate(&r, &r.topo_order().unwrap(), &sim).unwrap().peak_device_bytes;
            prop_assert!(peak <= last, "n_tensors {}: {} after {}", cap, peak, last);
            last = peak;
        }
    }

    #[test]
    fn chain_peak_does_not_shrink_with_later_triggers(n in 20usize..80, chain in any::<bool>()) {
        let g = generate(Topology::Chain { n }, 1 << 20).unwrap();
        let sim = SimConfig::default();
        let strategy = if chain { CtrlStrategy::ChainRule } else { CtrlStrategy::DirectOrder };
        let mut last = 0;
        for lb in 1..=10 {
            let cfg = RewriteConfig { lb, ctrld_strategy: strategy, ..RewriteConfig::default() };
            let (r, _) = rewrite(&g, &cfg).unwrap();
            let peak = simulate(&r, &r.topo_order().unwrap(), &sim).unwrap().peak_device_bytes;
            prop_assert!(peak >= last, "{} lb {}: {} after {}", strategy, lb, peak, last);
            last = peak;
        }
    }
}
