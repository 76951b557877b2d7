//! Interpreter and memory/timing simulator.

mod interp;
mod memory;
mod value;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::graph::{CompGraph, Device, NodeId, OrderMap, TensorId};
use crate::{Error, Result};

pub use interp::interpret;
pub use memory::simulate;
pub use value::TensorValue;

/// Default link bandwidth in bytes per time unit: 80 GB/s when one unit is a
/// millisecond.
pub const DEFAULT_BANDWIDTH: f64 = 8.0e7;

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub device_capacity_bytes: u64,
    pub host_to_device_bandwidth: f64,
    pub device_to_host_bandwidth: f64,
    /// Give each accelerator its own host-to-device and device-to-host
    /// channels. Without it, transfers occupy the accelerator's compute engine.
    pub overlap_transfers: bool,
    /// One engine for every device and channel. Combined with infinite
    /// bandwidth this runs the graph strictly in `(γ, id)` order.
    pub serial: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            device_capacity_bytes: 16 << 30,
            host_to_device_bandwidth: DEFAULT_BANDWIDTH,
            device_to_host_bandwidth: DEFAULT_BANDWIDTH,
            overlap_transfers: true,
            serial: false,
        }
    }
}

impl SimConfig {
    /// Single engine, instantaneous transfers.
    pub fn serial() -> Self {
        SimConfig {
            host_to_device_bandwidth: f64::INFINITY,
            device_to_host_bandwidth: f64::INFINITY,
            overlap_transfers: false,
            serial: true,
            ..SimConfig::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.device_capacity_bytes == 0 {
            return Err(Error::Config(
                "device_capacity_bytes must be positive".into(),
            ));
        }
        for (name, bw) in [
            ("host_to_device_bandwidth", self.host_to_device_bandwidth),
            ("device_to_host_bandwidth", self.device_to_host_bandwidth),
        ] {
            if bw.is_nan() || bw <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {bw}")));
            }
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Start,
    Finish,
    Alloc,
    Free,
    TransferStart,
    TransferEnd,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Start => "start",
            EventKind::Finish => "finish",
            EventKind::Alloc => "alloc",
            EventKind::Free => "free",
            EventKind::TransferStart => "transfer_start",
            EventKind::TransferEnd => "transfer_end",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: f64,
    /// Order of the node whose start or completion caused the event; for
    /// transfers, the order of the tensor's producer.
    pub step: u32,
    pub kind: EventKind,
    pub node: Option<NodeId>,
    pub tensor: Option<TensorId>,
    pub bytes: u64,
    pub device: Device,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    /// Highest dynamic footprint of any accelerator. Variable and constant
    /// tensors are resident for the whole step and counted separately.
    pub peak_device_bytes: u64,
    pub peak_host_bytes: u64,
    pub static_device_bytes: u64,
    pub static_host_bytes: u64,
    pub makespan: f64,
    pub transfer_time_total: f64,
    /// Time an accelerator sat idle while an op whose predecessors had all
    /// finished still waited for a transferred input.
    pub transfer_wait_time: f64,
    pub oom: bool,
    pub event_trace: Vec<TraceEvent>,
}

#[derive(Serialize)]
struct CsvRow {
    time: f64,
    event: &'static str,
    node: Option<u32>,
    tensor: Option<u32>,
    bytes: u64,
}

impl SimReport {
    /// Writes the trace as CSV with columns `time,event,node,tensor,bytes`.
    pub fn write_trace_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for e in &self.event_trace {
            out.serialize(CsvRow {
                time: e.time,
                event: e.kind.as_str(),
                node: e.node.map(|n| n.0),
                tensor: e.tensor.map(|t| t.0),
                bytes: e.bytes,
            })?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Step at which a serial run frees `t`: `γ(producer) + lifetime(t)`.
pub fn free_step_oracle(g: &CompGraph, order: &OrderMap, t: TensorId) -> Result<u32> {
    let producer = g.try_tensor(t)?.producer;
    let start = order.get(producer).ok_or(Error::UnknownNode(producer))?;
    Ok(start + g.lifetime(order, t)?.steps)
}
