//! Computational graph data model.
//!
//! A [`CompGraph`] is a vertex- and edge-labeled directed graph. Vertices are
//! operations ([`OpNode`]); edges ([`EdgeRec`]) either carry a tensor
//! (`read`, `update`) or only constrain execution order (`control`).
//! Variables and constants are *parameterized*: they sit at order 0, and the
//! `update` edges flowing into them do not take part in ordering.

mod builder;
mod dot;
mod io;
mod order;
mod validate;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub use builder::GraphBuilder;
pub use dot::to_dot;
pub use io::{from_json, from_json_reader, to_json};
pub use order::{Lifetime, OrderMap};
pub use validate::{ValidationReport, Violation};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TensorId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for TensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Compute,
    Variable,
    Constant,
    SwapOut,
    SwapIn,
}

impl OpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Compute => "compute",
            OpKind::Variable => "variable",
            OpKind::Constant => "constant",
            OpKind::SwapOut => "swap_out",
            OpKind::SwapIn => "swap_in",
        }
    }

    pub fn is_parameterized(self) -> bool {
        matches!(self, OpKind::Variable | OpKind::Constant)
    }

    pub fn is_swap(self) -> bool {
        matches!(self, OpKind::SwapOut | OpKind::SwapIn)
    }
}

#[derive(
    Copy, Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Forward,
    Backward,
    Update,
    #[default]
    Unknown,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Forward => "forward",
            Phase::Backward => "backward",
            Phase::Update => "update",
            Phase::Unknown => "unknown",
        }
    }
}

/// Placement of an operation. Serialized as `"host"` or `"accelerator:<index>"`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Device {
    Host,
    Accelerator(u16),
}

impl Default for Device {
    fn default() -> Self {
        Device::Accelerator(0)
    }
}

impl Device {
    pub fn is_host(self) -> bool {
        self == Device::Host
    }
}

impl fmt::Display for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Device::Host => f.write_str("host"),
            Device::Accelerator(i) => write!(f, "accelerator:{i}"),
        }
    }
}

impl FromStr for Device {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "host" {
            return Ok(Device::Host);
        }
        match s.strip_prefix("accelerator:") {
            Some(idx) => idx
                .parse()
                .map(Device::Accelerator)
                .map_err(|_| format!("bad accelerator index in `{s}`")),
            None => Err(format!(
                "unknown device `{s}` (expected `host` or `accelerator:<n>`)"
            )),
        }
    }
}

impl TryFrom<String> for Device {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Device> for String {
    fn from(d: Device) -> String {
        d.to_string()
    }
}

fn default_cost() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpNode {
    pub id: NodeId,
    pub name: String,
    pub scope: String,
    pub kind: OpKind,
    pub parameterized: bool,
    pub phase: Phase,
    pub device: Device,
    #[serde(default = "default_cost")]
    pub cost_hint: f64,
}

impl OpNode {
    /// Operation type tag: the part of `name` before the first `:`.
    /// Swap nodes are identities regardless of their name.
    pub fn op_type(&self) -> &str {
        match self.kind {
            OpKind::SwapOut | OpKind::SwapIn => "identity",
            _ => self.name.split(':').next().unwrap_or(""),
        }
    }

    /// `true` if `scope` equals `prefix` or lies below it in the `/` hierarchy.
    pub fn in_scope(&self, prefix: &str) -> bool {
        scope_matches(&self.scope, prefix)
    }
}

pub(crate) fn scope_matches(scope: &str, prefix: &str) -> bool {
    let prefix = prefix.trim_end_matches('/');
    if prefix.is_empty() {
        return true;
    }
    match scope.strip_prefix(prefix) {
        Some(rest) => rest.is_empty() || rest.starts_with('/'),
        None => false,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub id: TensorId,
    pub producer: NodeId,
    pub size_bytes: u64,
    pub dtype: String,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeAction {
    Read,
    Update,
    Control,
}

impl EdgeAction {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeAction::Read => "read",
            EdgeAction::Update => "update",
            EdgeAction::Control => "control",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeRec {
    pub src: NodeId,
    pub dst: NodeId,
    pub action: EdgeAction,
    pub tensor: Option<TensorId>,
}

impl EdgeRec {
    pub fn read(src: NodeId, dst: NodeId, tensor: TensorId) -> Self {
        EdgeRec {
            src,
            dst,
            action: EdgeAction::Read,
            tensor: Some(tensor),
        }
    }

    pub fn update(src: NodeId, dst: NodeId, tensor: TensorId) -> Self {
        EdgeRec {
            src,
            dst,
            action: EdgeAction::Update,
            tensor: Some(tensor),
        }
    }

    pub fn control(src: NodeId, dst: NodeId) -> Self {
        EdgeRec {
            src,
            dst,
            action: EdgeAction::Control,
            tensor: None,
        }
    }

    /// Read and control edges order execution; update edges into variables do not.
    pub fn orders_execution(&self) -> bool {
        matches!(self.action, EdgeAction::Read | EdgeAction::Control)
    }
}

/// Per-node incoming/outgoing edge indices, built lazily and dropped on mutation.
#[derive(Debug, Default)]
pub(crate) struct Adjacency {
    pub pos: HashMap<NodeId, usize>,
    pub out: Vec<Vec<usize>>,
    pub inc: Vec<Vec<usize>>,
}

/// Nodes are kept sorted by id, tensors by id, and edges stably sorted by
/// destination. The relative order of read edges into one node is the
/// operand order of that node.
#[derive(Debug, Default)]
pub struct CompGraph {
    nodes: Vec<OpNode>,
    edges: Vec<EdgeRec>,
    tensors: Vec<TensorSpec>,
    adj: OnceLock<Adjacency>,
}

impl Clone for CompGraph {
    fn clone(&self) -> Self {
        CompGraph {
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
            tensors: self.tensors.clone(),
            adj: OnceLock::new(),
        }
    }
}

impl PartialEq for CompGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges && self.tensors == other.tensors
    }
}

impl CompGraph {
    pub fn from_parts(nodes: Vec<OpNode>, edges: Vec<EdgeRec>, tensors: Vec<TensorSpec>) -> Self {
        let mut g = CompGraph {
            nodes,
            edges,
            tensors,
            adj: OnceLock::new(),
        };
        g.canonicalize();
        g
    }

    fn canonicalize(&mut self) {
        self.nodes.sort_by_key(|n| n.id);
        self.tensors.sort_by_key(|t| t.id);
        self.edges.sort_by_key(|e| e.dst);
        self.adj = OnceLock::new();
    }

    pub fn nodes(&self) -> &[OpNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[EdgeRec] {
        &self.edges
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn node(&self, id: NodeId) -> Option<&OpNode> {
        self.nodes
            .binary_search_by_key(&id, |n| n.id)
            .ok()
            .map(|i| &self.nodes[i])
    }

    pub fn tensor(&self, id: TensorId) -> Option<&TensorSpec> {
        self.tensors
            .binary_search_by_key(&id, |t| t.id)
            .ok()
            .map(|i| &self.tensors[i])
    }

    pub fn try_node(&self, id: NodeId) -> crate::Result<&OpNode> {
        self.node(id).ok_or(crate::Error::UnknownNode(id))
    }

    pub fn try_tensor(&self, id: TensorId) -> crate::Result<&TensorSpec> {
        self.tensor(id).ok_or(crate::Error::UnknownTensor(id))
    }

    pub fn node_by_name(&self, name: &str) -> Option<&OpNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub(crate) fn adjacency(&self) -> &Adjacency {
        self.adj.get_or_init(|| {
            let pos: HashMap<NodeId, usize> = self
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| (n.id, i))
                .collect();
            let mut out = vec![Vec::new(); self.nodes.len()];
            let mut inc = vec![Vec::new(); self.nodes.len()];
            for (ei, e) in self.edges.iter().enumerate() {
                if let (Some(&s), Some(&d)) = (pos.get(&e.src), pos.get(&e.dst)) {
                    out[s].push(ei);
                    inc[d].push(ei);
                }
            }
            Adjacency { pos, out, inc }
        })
    }

    pub fn out_edges(&self, id: NodeId) -> impl Iterator<Item = &EdgeRec> + '_ {
        let adj = self.adjacency();
        let list: &[usize] = adj
            .pos
            .get(&id)
            .map(|&p| adj.out[p].as_slice())
            .unwrap_or(&[]);
        list.iter().map(move |&ei| &self.edges[ei])
    }

    pub fn in_edges(&self, id: NodeId) -> impl Iterator<Item = &EdgeRec> + '_ {
        let adj = self.adjacency();
        let list: &[usize] = adj
            .pos
            .get(&id)
            .map(|&p| adj.inc[p].as_slice())
            .unwrap_or(&[]);
        list.iter().map(move |&ei| &self.edges[ei])
    }

    /// Read edges into `id`, in operand order.
    pub fn inputs(&self, id: NodeId) -> impl Iterator<Item = &EdgeRec> + '_ {
        self.in_edges(id).filter(|e| e.action == EdgeAction::Read)
    }

    /// Tensors produced by `id`, ascending by tensor id.
    pub fn outputs(&self, id: NodeId) -> impl Iterator<Item = &TensorSpec> + '_ {
        self.tensors.iter().filter(move |t| t.producer == id)
    }

    /// Distinct nodes consuming `t` through read or update edges, ascending by id.
    pub fn consumers(&self, t: TensorId) -> Vec<(NodeId, EdgeAction)> {
        let mut v: Vec<(NodeId, EdgeAction)> = self
            .edges
            .iter()
            .filter(|e| e.tensor == Some(t) && e.action != EdgeAction::Control)
            .map(|e| (e.dst, e.action))
            .collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn next_node_id(&self) -> NodeId {
        NodeId(self.nodes.last().map_or(0, |n| n.id.0 + 1))
    }

    pub fn next_tensor_id(&self) -> TensorId {
        TensorId(self.tensors.last().map_or(0, |t| t.id.0 + 1))
    }

    pub fn has_swap_nodes(&self) -> bool {
        self.nodes.iter().any(|n| n.kind.is_swap())
    }

    pub fn count_kind(&self, kind: OpKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    pub fn count_action(&self, action: EdgeAction) -> usize {
        self.edges.iter().filter(|e| e.action == action).count()
    }

    // Mutation. Every method keeps the canonical ordering and drops the adjacency cache.

    pub(crate) fn push_node(&mut self, node: OpNode) {
        let at = self.nodes.partition_point(|n| n.id <= node.id);
        self.nodes.insert(at, node);
        self.adj = OnceLock::new();
    }

    pub(crate) fn push_tensor(&mut self, tensor: TensorSpec) {
        let at = self.tensors.partition_point(|t| t.id <= tensor.id);
        self.tensors.insert(at, tensor);
    }

    pub(crate) fn push_edge(&mut self, edge: EdgeRec) {
        let at = self.edges.partition_point(|e| e.dst <= edge.dst);
        self.edges.insert(at, edge);
        self.adj = OnceLock::new();
    }

    pub(crate) fn edge_mut(&mut self, index: usize) -> &mut EdgeRec {
        self.adj = OnceLock::new();
        &mut self.edges[index]
    }

    pub(crate) fn find_edge(&self, pred: impl Fn(&EdgeRec) -> bool) -> Option<usize> {
        self.edges.iter().position(pred)
    }

    pub(crate) fn remove_node(&mut self, id: NodeId) {
        self.nodes.retain(|n| n.id != id);
        self.tensors.retain(|t| t.producer != id);
        self.edges.retain(|e| e.src != id && e.dst != id);
        self.adj = OnceLock::new();
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> Option<&mut OpNode> {
        self.nodes
            .binary_search_by_key(&id, |n| n.id)
            .ok()
            .map(|i| &mut self.nodes[i])
    }
}
