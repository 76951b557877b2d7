use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::Serialize;

use super::{CompGraph, Device, EdgeAction, EdgeRec, NodeId, OpKind, TensorId};

/// One broken invariant, carrying the identity of the offending element.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    DuplicateNodeId { node: NodeId },
    DuplicateTensorId { tensor: TensorId },
    ParameterizedMismatch { node: NodeId },
    SwapNotOnHost { node: NodeId },
    NegativeCost { node: NodeId },
    DanglingEdge { edge: EdgeRec },
    SelfLoop { edge: EdgeRec },
    MissingTensor { edge: EdgeRec },
    ControlCarriesTensor { edge: EdgeRec },
    UnknownTensor { edge: EdgeRec },
    WrongProducer { edge: EdgeRec, producer: NodeId },
    UpdateToNonVariable { edge: EdgeRec },
    ControlToVariable { edge: EdgeRec },
    ReadIntoParameterized { edge: EdgeRec },
    UnknownProducer { tensor: TensorId, producer: NodeId },
    CyclicExecution { nodes: Vec<NodeId> },
    NoReadInput { node: NodeId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = |edge: &EdgeRec| format!("{} -{}-> {}", edge.src, edge.action.as_str(), edge.dst);
        match self {
            Violation::DuplicateNodeId { node } => write!(f, "duplicate node id {node}"),
            Violation::DuplicateTensorId { tensor } => write!(f, "duplicate tensor id {tensor}"),
            Violation::ParameterizedMismatch { node } => write!(
                f,
                "node {node}: parameterized flag disagrees with kind (variables and constants only)"
            ),
            Violation::SwapNotOnHost { node } => {
                write!(f, "swap node {node} is not placed on host")
            }
            Violation::NegativeCost { node } => {
                write!(f, "node {node}: cost_hint must be finite and non-negative")
            }
            Violation::DanglingEdge { edge } => {
                write!(f, "edge {} references a missing node", e(edge))
            }
            Violation::SelfLoop { edge } => write!(f, "self-loop {}", e(edge)),
            Violation::MissingTensor { edge } => write!(f, "data edge {} has no tensor", e(edge)),
            Violation::ControlCarriesTensor { edge } => {
                write!(f, "control edge {} carries a tensor", e(edge))
            }
            Violation::UnknownTensor { edge } => {
                write!(f, "edge {} references an unknown tensor", e(edge))
            }
            Violation::WrongProducer { edge, producer } => write!(
                f,
                "edge {} carries a tensor produced by {producer}, not by its source",
                e(edge)
            ),
            Violation::UpdateToNonVariable { edge } => {
                write!(f, "update edge {} does not target a variable", e(edge))
            }
            Violation::ControlToVariable { edge } => {
                write!(f, "control edge to variable: {}", e(edge))
            }
            Violation::ReadIntoParameterized { edge } => {
                write!(f, "read edge into parameterized node: {}", e(edge))
            }
            Violation::UnknownProducer { tensor, producer } => {
                write!(f, "tensor {tensor} names missing producer {producer}")
            }
            Violation::CyclicExecution { nodes } => {
                let ids: Vec<String> = nodes.iter().map(|n| n.to_string()).collect();
                write!(f, "execution subgraph cyclic through [{}]", ids.join(", "))
            }
            Violation::NoReadInput { node } => {
                write!(f, "reachable node {node} has no incoming read edge")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("valid");
        }
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

impl CompGraph {
    /// Checks every structural invariant. Violations are collected, never raised.
    pub fn validate(&self) -> ValidationReport {
        let mut out = Vec::new();

        let mut seen = HashSet::new();
        for n in self.nodes() {
            if !seen.insert(n.id) {
                out.push(Violation::DuplicateNodeId { node: n.id });
            }
            if n.kind.is_parameterized() != n.parameterized {
                out.push(Violation::ParameterizedMismatch { node: n.id });
            }
            if n.kind.is_swap() && n.device != Device::Host {
                out.push(Violation::SwapNotOnHost { node: n.id });
            }
            if !(n.cost_hint.is_finite() && n.cost_hint >= 0.0) {
                out.push(Violation::NegativeCost { node: n.id });
            }
        }

        let mut seen_t = HashSet::new();
        for t in self.tensors() {
            if !seen_t.insert(t.id) {
                out.push(Violation::DuplicateTensorId { tensor: t.id });
            }
            if self.node(t.producer).is_none() {
                out.push(Violation::UnknownProducer {
                    tensor: t.id,
                    producer: t.producer,
                });
            }
        }

        for edge in self.edges() {
            let (Some(_src), Some(dst)) = (self.node(edge.src), self.node(edge.dst)) else {
                out.push(Violation::DanglingEdge { edge: *edge });
                continue;
            };
            if edge.src == edge.dst {
                out.push(Violation::SelfLoop { edge: *edge });
            }
            match (edge.action, edge.tensor) {
                (EdgeAction::Control, Some(_)) => {
                    out.push(Violation::ControlCarriesTensor { edge: *edge })
                }
                (EdgeAction::Read | EdgeAction::Update, None) => {
                    out.push(Violation::MissingTensor { edge: *edge })
                }
                (_, Some(t)) => match self.tensor(t) {
                    None => out.push(Violation::UnknownTensor { edge: *edge }),
                    Some(spec) if spec.producer != edge.src => out.push(Violation::WrongProducer {
                        edge: *edge,
                        producer: spec.producer,
                    }),
                    Some(_) => {}
                },
                (EdgeAction::Control, None) => {}
            }
            match edge.action {
                EdgeAction::Update if dst.kind != OpKind::Variable => {
                    out.push(Violation::UpdateToNonVariable { edge: *edge })
                }
                EdgeAction::Control if dst.parameterized => {
                    out.push(Violation::ControlToVariable { edge: *edge })
                }
                EdgeAction::Read if dst.parameterized => {
                    out.push(Violation::ReadIntoParameterized { edge: *edge })
                }
                _ => {}
            }
        }

        if let Err(crate::Error::Cycle(nodes)) = self.topo_order() {
            out.push(Violation::CyclicExecution { nodes });
        }

        let roots: Vec<NodeId> = self
            .nodes()
            .iter()
            .filter(|n| n.parameterized)
            .map(|n| n.id)
            .collect();
        let reach = self.reachable_from(&roots);
        for n in self.nodes() {
            if !n.parameterized && reach.contains(&n.id) && self.inputs(n.id).next().is_none() {
                out.push(Violation::NoReadInput { node: n.id });
            }
        }

        ValidationReport { violations: out }
    }

    /// Nodes reachable from any of `roots` over read and control edges.
    pub fn reachable_from(&self, roots: &[NodeId]) -> BTreeSet<NodeId> {
        let mut seen: BTreeSet<NodeId> = BTreeSet::new();
        let mut stack: Vec<NodeId> = Vec::new();
        for &r in roots {
            if self.node(r).is_some() && seen.insert(r) {
                stack.push(r);
            }
        }
        while let Some(n) = stack.pop() {
            for e in self.out_edges(n) {
                if e.orders_execution() && seen.insert(e.dst) {
                    stack.push(e.dst);
                }
            }
        }
        seen
    }
}
