//! Swap-out/swap-in rewriting for computational graphs.
//!
//! The crate rewrites a training graph so that long-lived activations leave
//! accelerator memory after they are produced and come back shortly before
//! they are consumed. Alongside the rewriter it ships an interpreter (to check
//! that a rewrite preserves results) and a discrete-event memory simulator (to
//! measure what the rewrite buys).
//!
//! ```
//! use swapgraph_core::{generate, rewrite, simulate, RewriteConfig, SimConfig, Topology};
//!
//! let g = generate(Topology::Chain { n: 8 }, 1 << 20).unwrap();
//! let cfg = RewriteConfig::default();
//! let (swapped, report) = rewrite(&g, &cfg).unwrap();
//! assert_eq!(report.tensors_swapped, 8);
//!
//! let sim = SimConfig::default();
//! let before = simulate(&g, &g.topo_order().unwrap(), &sim).unwrap();
//! let after = simulate(&swapped, &swapped.topo_order().unwrap(), &sim).unwrap();
//! assert!(after.peak_device_bytes < before.peak_device_bytes);
//! ```

pub mod ctrl;
mod error;
pub mod fixtures;
pub mod generate;
pub mod graph;
pub mod rewrite;
pub mod sim;

pub use ctrl::{attach_control, chain_rule, direct_order, CtrlQuery, CtrlStrategy};
pub use error::{Error, Result};
pub use generate::{generate, Topology};
pub use graph::{
    CompGraph, Device, EdgeAction, EdgeRec, GraphBuilder, Lifetime, NodeId, OpKind, OpNode,
    OrderMap, Phase, TensorId, TensorSpec, ValidationReport, Violation,
};
pub use rewrite::{rewrite, RewriteConfig, RewriteReport};
pub use sim::{
    free_step_oracle, interpret, simulate, EventKind, SimConfig, SimReport, TensorValue, TraceEvent,
};
