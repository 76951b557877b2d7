use thiserror::Error;

use crate::graph::{NodeId, TensorId, ValidationReport};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("unknown tensor {0}")]
    UnknownTensor(TensorId),

    #[error("execution subgraph has a cycle through nodes {}", fmt_ids(.0))]
    Cycle(Vec<NodeId>),

    #[error("graph is invalid:\n{0}")]
    Invalid(ValidationReport),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown starting point: {0}")]
    UnknownStart(String),

    #[error("no read edge {src} -> {dst} carrying tensor {tensor}")]
    EdgeNotFound {
        src: NodeId,
        dst: NodeId,
        tensor: TensorId,
    },

    #[error("edge {src} -> {dst} is not a read edge")]
    NotReadEdge { src: NodeId, dst: NodeId },

    #[error("control edge {ctrl} -> {target} would close a cycle (target already reaches {ctrl})")]
    ControlCycle { ctrl: NodeId, target: NodeId },

    #[error("graph already contains swap operations; rewriting is single-pass")]
    AlreadyRewritten,

    #[error("phases cannot be resolved: node {0} has no phase and no optimizer scopes were given")]
    UnresolvedPhase(NodeId),

    #[error("input variable `{0}` is not bound")]
    UnboundInput(String),

    #[error("node {node}: unsupported operation `{op}`")]
    UnsupportedOp { node: NodeId, op: String },

    #[error("node {node}: shape mismatch ({detail})")]
    ShapeMismatch { node: NodeId, detail: String },

    #[error("deadlock: no runnable node, blocked frontier {}", fmt_ids(.0))]
    Deadlock(Vec<NodeId>),

    #[error("tensor {0} has size 0 and cannot be simulated")]
    EmptyTensor(TensorId),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}

fn fmt_ids(ids: &[NodeId]) -> String {
    let parts: Vec<String> = ids.iter().map(|id| id.to_string()).collect();
    format!("[{}]", parts.join(", "))
}
