//! The swap rewriter.
//!
//! Pipeline: order the graph, select candidate edges, splice a swap-out /
//! swap-in pair into each, fuse redundant swap-outs (always) and nearby
//! swap-ins (optionally), then give every swap-in a control dependency so it
//! fires shortly before its consumer.

mod insert;
mod select;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ctrl::{self, CtrlQuery, CtrlStrategy};
use crate::graph::{CompGraph, EdgeAction, NodeId, OpKind, OrderMap, Phase, TensorId};
use crate::{Error, Result};

pub use insert::{fuse_swap_ins, fuse_swap_outs, insert_swap_pair};
pub(crate) use insert::{
    fuse_swap_ins_in_place, fuse_swap_outs_in_place, insert_swap_pair_in_place,
};
pub use select::{resolve_phases, select_candidates, Candidate, Selection};

/// Tuning surface of the rewriter. Defaults: `n_tensors = -1` (all),
/// `lb = 1`, `ub = 10000`, `chain_rule`, no swap-in fusion, no branch swapping.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewriteConfig {
    /// Scopes holding optimizer operations; unphased nodes under them are
    /// treated as backward (or update, if they write a variable).
    pub optimizer_scopes: BTreeSet<String>,
    pub starting_scope: Option<String>,
    pub starting_op_names: BTreeSet<String>,
    pub excl_scopes: BTreeSet<String>,
    pub incl_scopes: BTreeSet<String>,
    pub excl_types: BTreeSet<String>,
    pub incl_types: BTreeSet<String>,
    /// Number of distinct tensors to swap, in discovery order; `-1` for all.
    pub n_tensors: i64,
    pub lb: i64,
    pub ub: i64,
    pub ctrld_strategy: CtrlStrategy,
    pub fuse_swapins: bool,
    /// Largest order distance between consumers served by one fused swap-in.
    pub swapin_fuse_distance: u32,
    pub swap_branches: bool,
    /// Forward-to-forward edges are swapped when their order gap exceeds this.
    pub branch_threshold: u32,
}

impl Default for RewriteConfig {
    fn default() -> Self {
        RewriteConfig {
            optimizer_scopes: BTreeSet::new(),
            starting_scope: None,
            starting_op_names: BTreeSet::new(),
            excl_scopes: BTreeSet::new(),
            incl_scopes: BTreeSet::new(),
            excl_types: BTreeSet::new(),
            incl_types: BTreeSet::new(),
            n_tensors: -1,
            lb: 1,
            ub: 10000,
            ctrld_strategy: CtrlStrategy::ChainRule,
            fuse_swapins: false,
            swapin_fuse_distance: 1,
            swap_branches: false,
            branch_threshold: 0,
        }
    }
}

impl RewriteConfig {
    pub fn check(&self) -> Result<()> {
        if self.lb < 1 {
            return Err(Error::Config(format!(
                "lb must be positive, got {}",
                self.lb
            )));
        }
        if self.ub < self.lb {
            return Err(Error::Config(format!(
                "lb ({}) must not exceed ub ({})",
                self.lb, self.ub
            )));
        }
        if self.n_tensors < -1 {
            return Err(Error::Config(format!(
                "n_tensors must be -1 or non-negative, got {}",
                self.n_tensors
            )));
        }
        if self.swapin_fuse_distance == 0 {
            return Err(Error::Config(
                "swapin_fuse_distance must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipNote {
    pub src: NodeId,
    pub dst: NodeId,
    pub tensor: Option<TensorId>,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteReport {
    pub tensors_swapped: usize,
    pub swap_outs_added: usize,
    pub swap_ins_added: usize,
    pub control_edges_added: usize,
    pub edges_rewritten: Vec<(NodeId, NodeId, TensorId)>,
    pub skipped: Vec<SkipNote>,
}

/// Earliest consumer of a swap-in's output by `(order, id)`.
fn earliest_consumer(g: &CompGraph, order: &OrderMap, si: NodeId) -> Option<NodeId> {
    g.out_edges(si)
        .filter(|e| e.action == EdgeAction::Read)
        .map(|e| e.dst)
        .min_by_key(|&c| (order[c], c))
}

/// Producer of the (single) tensor read by a swap node.
fn swap_input_producer(g: &CompGraph, n: NodeId) -> Option<NodeId> {
    g.inputs(n).next().map(|e| e.src)
}

/// Rewrites `g` under `cfg`. The input is never modified.
pub fn rewrite(g: &CompGraph, cfg: &RewriteConfig) -> Result<(CompGraph, RewriteReport)> {
    cfg.check()?;
    if g.has_swap_nodes() {
        return Err(Error::AlreadyRewritten);
    }
    let validation = g.validate();
    if !validation.is_valid() {
        return Err(Error::at("validate input")(Error::Invalid(validation)));
    }

    let original_phases: BTreeMap<NodeId, Phase> =
        g.nodes().iter().map(|n| (n.id, n.phase)).collect();
    let mut work = resolve_phases(g, cfg).map_err(Error::at("resolve phases"))?;
    let order = work.topo_order().map_err(Error::at("topo_order"))?;
    let selection =
        select_candidates(&work, &order, cfg).map_err(Error::at("select_candidates"))?;
    log::info!(
        "selected {} edges over {} tensors",
        selection.candidates.len(),
        selection.tensor_count()
    );

    let mut report = RewriteReport {
        tensors_swapped: selection.tensor_count(),
        skipped: selection.skipped.clone(),
        ..RewriteReport::default()
    };
    for c in &selection.candidates {
        insert_swap_pair_in_place(&mut work, c.src, c.dst, c.tensor)
            .map_err(Error::at("insert_swap_pair"))?;
        report.edges_rewritten.push((c.src, c.dst, c.tensor));
    }
    fuse_swap_outs_in_place(&mut work);

    if cfg.fuse_swapins {
        let order = work.topo_order().map_err(Error::at("fuse_swap_ins"))?;
        fuse_swap_ins_in_place(&mut work, &order, cfg.swapin_fuse_distance);
    }

    // One ordering for every query: all non-control edges increase it, and
    // each chosen control node sits below its swap-in's earliest consumer,
    // so no combination of the new edges can close a cycle.
    let order = work.topo_order().map_err(Error::at("ctrl_select"))?;
    let swap_ins: Vec<NodeId> = work
        .nodes()
        .iter()
        .filter(|n| n.kind == OpKind::SwapIn)
        .map(|n| n.id)
        .collect();
    let controls_before = g.count_action(EdgeAction::Control);
    for si in swap_ins {
        let Some(target) = earliest_consumer(&work, &order, si) else {
            continue;
        };
        let so = swap_input_producer(&work, si).expect("swap-in reads its swap-out");
        let producer = swap_input_producer(&work, so).expect("swap-out reads a tensor");
        let query = CtrlQuery {
            source: match cfg.ctrld_strategy {
                CtrlStrategy::DirectOrder => so,
                CtrlStrategy::ChainRule => producer,
            },
            target,
            lb: cfg.lb,
            ub: cfg.ub,
        };
        let chosen = match cfg.ctrld_strategy {
            CtrlStrategy::DirectOrder => ctrl::direct_order(&work, &order, &query),
            CtrlStrategy::ChainRule => ctrl::chain_rule(&work, &order, &query),
        };
        let chosen = match chosen {
            Some(n) => Some(n),
            None => {
                let fb = ctrl::fallback(&work, &order, so, target);
                let reason = match fb {
                    Some(n) => format!(
                        "{} found no control op; fell back to {n}",
                        cfg.ctrld_strategy
                    ),
                    None => "no control op in window; swap-in runs eagerly".to_owned(),
                };
                log::debug!("swap-in {si}: {reason}");
                report.skipped.push(SkipNote {
                    src: si,
                    dst: target,
                    tensor: None,
                    reason,
                });
                fb
            }
        };
        if let Some(c) = chosen {
            ctrl::attach_in_place(&mut work, c, si).map_err(Error::at("attach_control"))?;
        }
    }

    for n in g.nodes() {
        if let Some(node) = work.node_mut(n.id) {
            node.phase = original_phases[&n.id];
        }
    }

    let validation = work.validate();
    if !validation.is_valid() {
        return Err(Error::at("validate output")(Error::Invalid(validation)));
    }
    report.swap_outs_added = work.count_kind(OpKind::SwapOut);
    report.swap_ins_added = work.count_kind(OpKind::SwapIn);
    report.control_edges_added = work.count_action(EdgeAction::Control) - controls_before;
    Ok((work, report))
}
