use super::{CompGraph, Device, EdgeRec, NodeId, OpKind, OpNode, Phase, TensorId, TensorSpec};

/// Incremental constructor for [`CompGraph`]. Ids are assigned sequentially
/// from 0, so two builders fed the same calls produce identical graphs.
#[derive(Debug)]
pub struct GraphBuilder {
    nodes: Vec<OpNode>,
    edges: Vec<EdgeRec>,
    tensors: Vec<TensorSpec>,
    tensor_bytes: u64,
    dtype: String,
    scope: String,
    device: Device,
}

impl Default for GraphBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl GraphBuilder {
    pub fn new() -> Self {
        GraphBuilder {
            nodes: Vec::new(),
            edges: Vec::new(),
            tensors: Vec::new(),
            tensor_bytes: 4,
            dtype: "f32".to_owned(),
            scope: String::new(),
            device: Device::Accelerator(0),
        }
    }

    /// Size given to tensors created from now on.
    pub fn set_tensor_bytes(&mut self, bytes: u64) -> &mut Self {
        self.tensor_bytes = bytes;
        self
    }

    /// Scope given to nodes created from now on.
    pub fn set_scope(&mut self, scope: impl Into<String>) -> &mut Self {
        self.scope = scope.into();
        self
    }

    pub fn set_device(&mut self, device: Device) -> &mut Self {
        self.device = device;
        self
    }

    fn add_node(&mut self, name: &str, kind: OpKind, phase: Phase) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(OpNode {
            id,
            name: name.to_owned(),
            scope: self.scope.clone(),
            kind,
            parameterized: kind.is_parameterized(),
            phase,
            device: self.device,
            cost_hint: 1.0,
        });
        id
    }

    fn add_tensor(&mut self, producer: NodeId) -> TensorId {
        let id = TensorId(self.tensors.len() as u32);
        self.tensors.push(TensorSpec {
            id,
            producer,
            size_bytes: self.tensor_bytes,
            dtype: self.dtype.clone(),
        });
        id
    }

    pub fn variable(&mut self, name: &str) -> (NodeId, TensorId) {
        let n = self.add_node(name, OpKind::Variable, Phase::Unknown);
        (n, self.add_tensor(n))
    }

    pub fn constant(&mut self, name: &str) -> (NodeId, TensorId) {
        let n = self.add_node(name, OpKind::Constant, Phase::Unknown);
        (n, self.add_tensor(n))
    }

    /// A single-output operation reading `inputs` (in operand order).
    pub fn op(&mut self, name: &str, phase: Phase, inputs: &[TensorId]) -> (NodeId, TensorId) {
        let (n, outs) = self.op_multi(name, phase, inputs, 1);
        (n, outs[0])
    }

    pub fn op_multi(
        &mut self,
        name: &str,
        phase: Phase,
        inputs: &[TensorId],
        outputs: usize,
    ) -> (NodeId, Vec<TensorId>) {
        let n = self.add_node(name, OpKind::Compute, phase);
        for &t in inputs {
            let src = self.tensors[t.0 as usize].producer;
            self.edges.push(EdgeRec::read(src, n, t));
        }
        let outs = (0..outputs).map(|_| self.add_tensor(n)).collect();
        (n, outs)
    }

    /// Assigns tensor `t` into variable `var`.
    pub fn update(&mut self, t: TensorId, var: NodeId) -> &mut Self {
        let src = self.tensors[t.0 as usize].producer;
        self.edges.push(EdgeRec::update(src, var, t));
        self
    }

    pub fn control(&mut self, from: NodeId, to: NodeId) -> &mut Self {
        self.edges.push(EdgeRec::control(from, to));
        self
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut OpNode {
        &mut self.nodes[id.0 as usize]
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> &mut TensorSpec {
        &mut self.tensors[id.0 as usize]
    }

    pub fn build(self) -> CompGraph {
        CompGraph::from_parts(self.nodes, self.edges, self.tensors)
    }
}
