use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::ops::Index;

use serde::{Deserialize, Serialize};

use super::{CompGraph, EdgeAction, EdgeRec, NodeId, TensorId};
use crate::{Error, Result};

/// Topological ordering: parameterized nodes map to 0 and every read or
/// control edge into a non-parameterized node strictly increases the order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderMap {
    pub order: BTreeMap<NodeId, u32>,
}

impl OrderMap {
    pub fn get(&self, id: NodeId) -> Option<u32> {
        self.order.get(&id).copied()
    }

    pub fn max_order(&self) -> u32 {
        self.order.values().copied().max().unwrap_or(0)
    }

    /// Nodes at exactly order `k`, ascending by id.
    pub fn at(&self, k: u32) -> impl Iterator<Item = NodeId> + '_ {
        self.order
            .iter()
            .filter(move |(_, &o)| o == k)
            .map(|(&n, _)| n)
    }
}

impl Index<NodeId> for OrderMap {
    type Output = u32;

    fn index(&self, id: NodeId) -> &u32 {
        self.order
            .get(&id)
            .unwrap_or_else(|| panic!("node {id} has no order"))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lifetime {
    pub steps: u32,
    /// The tensor has no consumer; `steps` is 0 by definition.
    pub unconsumed: bool,
}

impl CompGraph {
    /// Edges that constrain ordering: read/control edges into non-parameterized nodes.
    fn ordering_edge(&self, e: &EdgeRec) -> bool {
        e.orders_execution() && self.node(e.dst).is_some_and(|n| !n.parameterized)
    }

    /// ASAP layering: parameterized nodes get 0, every other node gets one
    /// more than the largest order among its read/control predecessors
    /// (0 if it has none).
    pub fn topo_order(&self) -> Result<OrderMap> {
        let adj = self.adjacency();
        let n = self.nodes().len();
        let mut indeg = vec![0usize; n];
        for (i, list) in adj.inc.iter().enumerate() {
            indeg[i] = list
                .iter()
                .filter(|&&ei| self.ordering_edge(&self.edges()[ei]))
                .count();
        }
        let mut level = vec![0u32; n];
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut done = 0;
        while let Some(i) = queue.pop_front() {
            done += 1;
            for &ei in &adj.out[i] {
                let e = &self.edges()[ei];
                if !self.ordering_edge(e) {
                    continue;
                }
                let j = adj.pos[&e.dst];
                level[j] = level[j].max(level[i] + 1);
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    queue.push_back(j);
                }
            }
        }
        if done < n {
            return Err(Error::Cycle(self.find_cycle(&indeg)));
        }
        let order = self
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, node)| (node.id, if node.parameterized { 0 } else { level[i] }))
            .collect();
        Ok(OrderMap { order })
    }

    /// Extracts one cycle among nodes left with non-zero in-degree after Kahn.
    fn find_cycle(&self, indeg: &[usize]) -> Vec<NodeId> {
        let adj = self.adjacency();
        let stuck: Vec<usize> = (0..indeg.len()).filter(|&i| indeg[i] > 0).collect();
        // Every stuck node has a stuck predecessor, so walking predecessors must revisit.
        let mut at = stuck[0];
        let mut path: Vec<usize> = Vec::new();
        let mut seen_at = vec![usize::MAX; indeg.len()];
        loop {
            if seen_at[at] != usize::MAX {
                let mut cyc: Vec<NodeId> = path[seen_at[at]..]
                    .iter()
                    .map(|&i| self.nodes()[i].id)
                    .collect();
                cyc.reverse();
                return cyc;
            }
            seen_at[at] = path.len();
            path.push(at);
            at = adj.inc[at]
                .iter()
                .map(|&ei| &self.edges()[ei])
                .filter(|e| self.ordering_edge(e))
                .map(|e| adj.pos[&e.src])
                .find(|&p| indeg[p] > 0)
                .expect("stuck node has a stuck predecessor");
        }
    }

    /// Transitive closure from `from` over read and control edges, including `from`.
    pub fn reachable(&self, from: NodeId) -> Result<BTreeSet<NodeId>> {
        self.try_node(from)?;
        Ok(self.reachable_from(&[from]))
    }

    /// `max(γ(consumer)) − γ(producer)`. An update consumer commits as soon as
    /// the producer finishes, so it counts at the producer's own order.
    pub fn lifetime(&self, order: &OrderMap, t: TensorId) -> Result<Lifetime> {
        let spec = self.try_tensor(t)?;
        let start = order
            .get(spec.producer)
            .ok_or(Error::UnknownNode(spec.producer))?;
        let consumers = self.consumers(t);
        if consumers.is_empty() {
            return Ok(Lifetime {
                steps: 0,
                unconsumed: true,
            });
        }
        let mut last = start;
        for (c, action) in consumers {
            let at = match action {
                EdgeAction::Update => start,
                _ => order.get(c).ok_or(Error::UnknownNode(c))?,
            };
            last = last.max(at);
        }
        Ok(Lifetime {
            steps: last - start,
            unconsumed: false,
        })
    }
}
