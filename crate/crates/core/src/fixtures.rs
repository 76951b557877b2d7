//! Small hand-built graphs shared by unit tests, integration tests and the CLI.

use crate::graph::{CompGraph, GraphBuilder, NodeId, Phase, TensorId};

/// `z = (x + y) * (x - 5)`, with `z` a variable updated by the product.
pub fn expression_graph() -> CompGraph {
    let mut b = GraphBuilder::new();
    let (_, x) = b.variable("x");
    let (_, y) = b.variable("y");
    let (_, five) = b.constant("const:5");
    let (z, _) = b.variable("z");
    let (_, z1) = b.op("add", Phase::Forward, &[x, y]);
    let (_, z2) = b.op("sub", Phase::Forward, &[x, five]);
    let (_, tz) = b.op("mul", Phase::Forward, &[z1, z2]);
    b.update(tz, z);
    b.build()
}

/// Handles into [`fanout_chain`].
#[derive(Clone, Debug)]
pub struct FanoutChain {
    pub graph: CompGraph,
    pub f1: NodeId,
    pub f2: NodeId,
    pub f3: NodeId,
    pub f4: NodeId,
    /// Chain node at order 20, on the path into `f2`.
    pub fi: NodeId,
    /// Chain node at order 13, on the path into `f3`.
    pub fj: NodeId,
    pub t1: TensorId,
}

/// A forward-only chain where `f1` (order 10) produces `t1`, read by
/// `f4` (order 11), `f3` (order 18) and `f2` (order 25). The chain itself
/// threads `x -> a1 .. a9 -> f1 -> f4 -> c12 .. -> f3 -> .. -> f2`, which
/// pins the layered orders and gives every consumer a path of candidate
/// control operations.
pub fn fanout_chain() -> FanoutChain {
    let mut b = GraphBuilder::new();
    let (_, x) = b.variable("x");
    let mut prev = x;
    for i in 1..=9 {
        prev = b.op(&format!("neg:a{i}"), Phase::Forward, &[prev]).1;
    }
    let (f1, t1) = b.op("neg:f1", Phase::Forward, &[prev]);
    let (f4, t4) = b.op("neg:f4", Phase::Forward, &[t1]);
    prev = t4;
    let mut fi = None;
    let mut fj = None;
    let mut f3 = None;
    let mut f2 = None;
    for order in 12..=25 {
        let (id, out) = match order {
            18 => b.op("add:f3", Phase::Forward, &[prev, t1]),
            25 => b.op("add:f2", Phase::Forward, &[prev, t1]),
            13 => b.op("neg:f_j", Phase::Forward, &[prev]),
            20 => b.op("neg:f_i", Phase::Forward, &[prev]),
            _ => b.op(&format!("neg:c{order}"), Phase::Forward, &[prev]),
        };
        match order {
            18 => f3 = Some(id),
            25 => f2 = Some(id),
            13 => fj = Some(id),
            20 => fi = Some(id),
            _ => {}
        }
        prev = out;
    }
    FanoutChain {
        graph: b.build(),
        f1,
        f2: f2.unwrap(),
        f3: f3.unwrap(),
        f4,
        fi: fi.unwrap(),
        fj: fj.unwrap(),
        t1,
    }
}

/// Just the four operations: `x -> f1`, and `f1`'s output read by `f2`, `f3`, `f4`.
pub fn fanout_core() -> (CompGraph, [NodeId; 4]) {
    let mut b = GraphBuilder::new();
    let (_, x) = b.variable("x");
    let (f1, t1) = b.op("neg:f1", Phase::Forward, &[x]);
    let (f2, _) = b.op("neg:f2", Phase::Forward, &[t1]);
    let (f3, _) = b.op("neg:f3", Phase::Forward, &[t1]);
    let (f4, _) = b.op("neg:f4", Phase::Forward, &[t1]);
    (b.build(), [f1, f2, f3, f4])
}
