//! Discrete-event execution of one training step.
//!
//! Each tensor has a home residency on its producer's device and one copy per
//! other device that reads it. A residency holds a reference count: local
//! reader ops, plus one per outgoing transfer on the home copy. Swap nodes
//! are identities and alias their input's buffer instead of allocating.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{EventKind, SimConfig, SimReport, TraceEvent};
use crate::graph::{CompGraph, Device, EdgeAction, NodeId, OrderMap, TensorId};
use crate::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Job {
    Op(NodeId),
    Transfer { tensor: TensorId, to: Device },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Engine {
    Serial,
    Compute(Device),
    HostToDevice(u16),
    DeviceToHost(u16),
}

/// Ready-queue priority: `(order, 0 for ops / 1 for transfers, id, device)`.
type Key = (u32, u8, u32, Device);

#[derive(Default)]
struct EngineState {
    ready: BTreeSet<(Key, Job)>,
    running: Option<Running>,
}

#[derive(Copy, Clone)]
struct Running {
    job: Job,
    end: f64,
    seq: u64,
}

struct Buffer {
    device: Device,
    bytes: u64,
    holders: u32,
}

struct Residency {
    buffer: usize,
    refs: u32,
}

struct Sim<'a> {
    g: &'a CompGraph,
    order: &'a OrderMap,
    cfg: &'a SimConfig,
    device: HashMap<NodeId, Device>,
    /// Executed readers of each tensor, per device.
    readers: HashMap<TensorId, BTreeMap<Device, BTreeSet<NodeId>>>,
    /// Distinct read inputs of each executed op.
    inputs: HashMap<NodeId, BTreeSet<TensorId>>,
    /// Outstanding inputs and control predecessors.
    pending: HashMap<NodeId, usize>,
    /// Unfinished predecessor nodes (producers and control predecessors).
    pending_nodes: HashMap<NodeId, usize>,
    /// Successor nodes, flagged when at least one edge to them is a control edge.
    successors: HashMap<NodeId, BTreeMap<NodeId, bool>>,
    blocked: BTreeMap<Device, usize>,
    engines: BTreeMap<Engine, EngineState>,
    buffers: Vec<Buffer>,
    resident: HashMap<(TensorId, Device), Residency>,
    usage: BTreeMap<Device, u64>,
    peak: BTreeMap<Device, u64>,
    finished: BTreeSet<NodeId>,
    trace: Vec<TraceEvent>,
    now: f64,
    seq: u64,
    transfer_total: f64,
    transfer_wait: f64,
    makespan: f64,
}

/// Simulates one step of `g`. Only ops reachable from a parameterized node
/// run. `order` sets ready-queue priorities and the `step` of trace events.
pub fn simulate(g: &CompGraph, order: &OrderMap, cfg: &SimConfig) -> Result<SimReport> {
    cfg.check()?;
    let report = g.validate();
    if !report.is_valid() {
        return Err(Error::Invalid(report));
    }
    for n in g.nodes() {
        if order.get(n.id).is_none() {
            return Err(Error::UnknownNode(n.id));
        }
    }
    let mut sim = Sim::new(g, order, cfg)?;
    sim.run()?;
    Ok(sim.into_report())
}

impl<'a> Sim<'a> {
    fn new(g: &'a CompGraph, order: &'a OrderMap, cfg: &'a SimConfig) -> Result<Self> {
        let roots: Vec<NodeId> = g
            .nodes()
            .iter()
            .filter(|n| n.parameterized)
            .map(|n| n.id)
            .collect();
        let live = g.reachable_from(&roots);
        let device: HashMap<NodeId, Device> = live
            .iter()
            .map(|&id| (id, g.node(id).unwrap().device))
            .collect();

        let mut readers: HashMap<TensorId, BTreeMap<Device, BTreeSet<NodeId>>> = HashMap::new();
        let mut inputs: HashMap<NodeId, BTreeSet<TensorId>> = HashMap::new();
        let mut controls: HashMap<NodeId, BTreeSet<NodeId>> = HashMap::new();
        let mut preds: HashMap<NodeId, BTreeSet<NodeId>> = HashMap::new();
        let mut successors: HashMap<NodeId, BTreeMap<NodeId, bool>> = HashMap::new();
        for e in g.edges() {
            if !live.contains(&e.dst) || !e.orders_execution() {
                continue;
            }
            preds.entry(e.dst).or_default().insert(e.src);
            match (e.action, e.tensor) {
                (EdgeAction::Read, Some(t)) => {
                    let spec = g.try_tensor(t)?;
                    if spec.size_bytes == 0 {
                        return Err(Error::EmptyTensor(t));
                    }
                    readers
                        .entry(t)
                        .or_default()
                        .entry(device[&e.dst])
                        .or_default()
                        .insert(e.dst);
                    inputs.entry(e.dst).or_default().insert(t);
                    successors
                        .entry(e.src)
                        .or_default()
                        .entry(e.dst)
                        .or_insert(false);
                }
                _ => {
                    controls.entry(e.dst).or_default().insert(e.src);
                    successors.entry(e.src).or_default().insert(e.dst, true);
                }
            }
        }

        let mut pending = HashMap::new();
        let mut pending_nodes = HashMap::new();
        for &id in &live {
            if g.node(id).unwrap().parameterized {
                continue;
            }
            let n_in = inputs.get(&id).map_or(0, BTreeSet::len);
            let n_ctl = controls.get(&id).map_or(0, BTreeSet::len);
            pending.insert(id, n_in + n_ctl);
            pending_nodes.insert(id, preds.get(&id).map_or(0, BTreeSet::len));
        }

        let mut engines = BTreeMap::new();
        if cfg.serial {
            engines.insert(Engine::Serial, EngineState::default());
        } else {
            for d in device.values() {
                engines.entry(Engine::Compute(*d)).or_default();
                if let (Device::Accelerator(i), true) = (d, cfg.overlap_transfers) {
                    engines.entry(Engine::HostToDevice(*i)).or_default();
                    engines.entry(Engine::DeviceToHost(*i)).or_default();
                }
            }
        }

        Ok(Sim {
            g,
            order,
            cfg,
            device,
            readers,
            inputs,
            pending,
            pending_nodes,
            successors,
            blocked: BTreeMap::new(),
            engines,
            buffers: Vec::new(),
            resident: HashMap::new(),
            usage: BTreeMap::new(),
            peak: BTreeMap::new(),
            finished: BTreeSet::new(),
            trace: Vec::new(),
            now: 0.0,
            seq: 0,
            transfer_total: 0.0,
            transfer_wait: 0.0,
            makespan: 0.0,
        })
    }

    fn step_of(&self, n: NodeId) -> u32 {
        self.order[n]
    }

    fn event(
        &mut self,
        step: u32,
        kind: EventKind,
        node: Option<NodeId>,
        tensor: Option<TensorId>,
        bytes: u64,
        device: Device,
    ) {
        self.trace.push(TraceEvent {
            time: self.now,
            step,
            kind,
            node,
            tensor,
            bytes,
            device,
        });
    }

    fn engine_for(&self, job: Job) -> Engine {
        if self.cfg.serial {
            return Engine::Serial;
        }
        match job {
            Job::Op(n) => Engine::Compute(self.device[&n]),
            Job::Transfer { tensor, to } => {
                let from = self.home(tensor);
                match (from, to, self.cfg.overlap_transfers) {
                    (_, Device::Accelerator(i), true) => Engine::HostToDevice(i),
                    (Device::Accelerator(i), _, true) => Engine::DeviceToHost(i),
                    (_, Device::Accelerator(_), false) => Engine::Compute(to),
                    _ => Engine::Compute(from),
                }
            }
        }
    }

    fn home(&self, t: TensorId) -> Device {
        self.device[&self.g.tensor(t).unwrap().producer]
    }

    fn key(&self, job: Job) -> Key {
        match job {
            Job::Op(n) => (self.step_of(n), 0, n.0, self.device[&n]),
            Job::Transfer { tensor, to } => {
                let first_use = self.readers[&tensor][&to]
                    .iter()
                    .map(|&n| self.step_of(n))
                    .min()
                    .unwrap_or(u32::MAX);
                (first_use, 1, tensor.0, to)
            }
        }
    }

    fn enqueue(&mut self, job: Job) {
        let key = self.key(job);
        let engine = self.engine_for(job);
        self.engines
            .get_mut(&engine)
            .expect("engine exists")
            .ready
            .insert((key, job));
    }

    fn is_blocked(&self, n: NodeId) -> bool {
        self.pending_nodes[&n] == 0 && self.pending[&n] > 0
    }

    /// Applies `f` to the counters of `n`, keeping the per-device count of
    /// transfer-blocked ops in step, and enqueues `n` once it is ready.
    fn adjust(&mut self, n: NodeId, f: impl FnOnce(&mut Self)) {
        let was = self.is_blocked(n);
        f(self);
        let is = self.is_blocked(n);
        let d = self.device[&n];
        if was != is {
            let c = self.blocked.entry(d).or_default();
            if is {
                *c += 1;
            } else {
                *c -= 1;
            }
        }
        if self.pending[&n] == 0 && self.pending_nodes[&n] == 0 {
            self.enqueue(Job::Op(n));
        }
    }

    fn alloc(&mut self, device: Device, bytes: u64) -> usize {
        self.buffers.push(Buffer {
            device,
            bytes,
            holders: 1,
        });
        let u = self.usage.entry(device).or_default();
        *u += bytes;
        let u = *u;
        let p = self.peak.entry(device).or_default();
        *p = (*p).max(u);
        self.buffers.len() - 1
    }

    /// Drops one reference to `t` on `device`, freeing the buffer when no
    /// residency holds it any more.
    fn release(&mut self, t: TensorId, device: Device, step: u32) {
        let res = self
            .resident
            .get_mut(&(t, device))
            .expect("released tensor is resident");
        res.refs -= 1;
        if res.refs > 0 {
            return;
        }
        let buffer = res.buffer;
        self.resident.remove(&(t, device));
        self.drop_holder(buffer, t, step);
    }

    fn drop_holder(&mut self, buffer: usize, t: TensorId, step: u32) {
        let b = &mut self.buffers[buffer];
        b.holders -= 1;
        if b.holders == 0 {
            let (device, bytes) = (b.device, b.bytes);
            *self.usage.get_mut(&device).unwrap() -= bytes;
            self.event(step, EventKind::Free, None, Some(t), bytes, device);
        }
    }

    /// Marks `t` available on `device`: wakes local readers.
    fn arrive(&mut self, t: TensorId, device: Device) {
        let local: Vec<NodeId> = self
            .readers
            .get(&t)
            .and_then(|m| m.get(&device))
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        for n in local {
            self.adjust(n, |s| *s.pending.get_mut(&n).unwrap() -= 1);
        }
    }

    fn remote_devices(&self, t: TensorId, home: Device) -> Vec<Device> {
        self.readers
            .get(&t)
            .map(|m| m.keys().copied().filter(|&d| d != home).collect())
            .unwrap_or_default()
    }

    fn local_readers(&self, t: TensorId, device: Device) -> u32 {
        self.readers
            .get(&t)
            .and_then(|m| m.get(&device))
            .map_or(0, |s| s.len() as u32)
    }

    /// Completion bookkeeping shared by ops and parameterized nodes.
    fn complete_node(&mut self, n: NodeId) {
        let step = self.step_of(n);
        let d = self.device[&n];
        let outs: Vec<TensorId> = self.g.outputs(n).map(|t| t.id).collect();
        for t in outs {
            if let Some(res) = self.resident.get(&(t, d)) {
                if res.refs == 0 {
                    let buffer = res.buffer;
                    self.resident.remove(&(t, d));
                    self.drop_holder(buffer, t, step);
                    continue;
                }
            }
            self.arrive(t, d);
            for to in self.remote_devices(t, d) {
                self.enqueue(Job::Transfer { tensor: t, to });
            }
        }
        self.finished.insert(n);
        let succ: Vec<(NodeId, bool)> = self
            .successors
            .get(&n)
            .map(|s| s.iter().map(|(m, c)| (*m, *c)).collect())
            .unwrap_or_default();
        for (m, control) in succ {
            self.adjust(m, |s| {
                *s.pending_nodes.get_mut(&m).unwrap() -= 1;
                if control {
                    *s.pending.get_mut(&m).unwrap() -= 1;
                }
            });
        }
    }

    fn start(&mut self, engine: Engine, job: Job) {
        let duration = match job {
            Job::Op(n) => {
                let step = self.step_of(n);
                let d = self.device[&n];
                let node = self.g.node(n).unwrap();
                self.event(step, EventKind::Start, Some(n), None, 0, d);
                let alias = if node.kind.is_swap() {
                    self.inputs
                        .get(&n)
                        .and_then(|s| s.iter().next())
                        .and_then(|t| self.resident.get(&(*t, d)))
                        .map(|r| r.buffer)
                } else {
                    None
                };
                let outs: Vec<(TensorId, u64)> =
                    self.g.outputs(n).map(|t| (t.id, t.size_bytes)).collect();
                for (t, bytes) in outs {
                    let buffer = match alias {
                        Some(b) => {
                            self.buffers[b].holders += 1;
                            b
                        }
                        None => {
                            self.event(step, EventKind::Alloc, Some(n), Some(t), bytes, d);
                            self.alloc(d, bytes)
                        }
                    };
                    let refs = self.local_readers(t, d) + self.remote_devices(t, d).len() as u32;
                    self.resident.insert((t, d), Residency { buffer, refs });
                }
                self.duration(job)
            }
            Job::Transfer { tensor, to } => {
                let spec = self.g.tensor(tensor).unwrap();
                let step = self.step_of(spec.producer);
                let bytes = spec.size_bytes;
                self.event(
                    step,
                    EventKind::TransferStart,
                    None,
                    Some(tensor),
                    bytes,
                    to,
                );
                self.event(step, EventKind::Alloc, None, Some(tensor), bytes, to);
                let buffer = self.alloc(to, bytes);
                let refs = self.local_readers(tensor, to);
                self.resident
                    .insert((tensor, to), Residency { buffer, refs });
                let duration = self.duration(job);
                self.transfer_total += duration;
                duration
            }
        };
        self.seq += 1;
        let state = self.engines.get_mut(&engine).unwrap();
        state.running = Some(Running {
            job,
            end: self.now + duration,
            seq: self.seq,
        });
    }

    fn finish(&mut self, job: Job) {
        match job {
            Job::Op(n) => {
                let step = self.step_of(n);
                let d = self.device[&n];
                self.event(step, EventKind::Finish, Some(n), None, 0, d);
                let ins: Vec<TensorId> = self
                    .inputs
                    .get(&n)
                    .map(|s| s.iter().copied().collect())
                    .unwrap_or_default();
                for t in ins {
                    self.release(t, d, step);
                }
                self.complete_node(n);
            }
            Job::Transfer { tensor, to } => {
                let spec = self.g.tensor(tensor).unwrap();
                let step = self.step_of(spec.producer);
                let (bytes, from) = (spec.size_bytes, self.home(tensor));
                self.event(step, EventKind::TransferEnd, None, Some(tensor), bytes, to);
                self.release(tensor, from, step);
                self.arrive(tensor, to);
            }
        }
    }

    fn duration(&self, job: Job) -> f64 {
        match job {
            Job::Op(n) => self.g.node(n).unwrap().cost_hint,
            Job::Transfer { tensor, to } => {
                let bw = if to.is_host() {
                    self.cfg.device_to_host_bandwidth
                } else {
                    self.cfg.host_to_device_bandwidth
                };
                self.g.tensor(tensor).unwrap().size_bytes as f64 / bw
            }
        }
    }

    /// Starts the best ready job on every idle engine. Zero-duration work at
    /// the current instant settles first, so an engine never commits to a
    /// long job while a higher-priority one is about to become ready at the
    /// same time.
    fn dispatch(&mut self) {
        let idle: Vec<(Engine, Job)> = self
            .engines
            .iter()
            .filter(|(_, s)| s.running.is_none())
            .filter_map(|(e, s)| s.ready.first().map(|(_, j)| (*e, *j)))
            .collect();
        let settling = self
            .engines
            .values()
            .any(|s| s.running.is_some_and(|r| r.end == self.now));
        let instant: Vec<(Engine, Job)> = idle
            .iter()
            .copied()
            .filter(|(_, j)| self.duration(*j) == 0.0)
            .collect();
        let chosen = if settling || !instant.is_empty() {
            instant
        } else {
            idle
        };
        for (e, job) in chosen {
            self.engines.get_mut(&e).unwrap().ready.pop_first();
            self.start(e, job);
        }
    }

    fn run(&mut self) -> Result<()> {
        // Parameterized nodes hold their tensors from the start.
        let params: Vec<NodeId> = self
            .device
            .keys()
            .copied()
            .filter(|&n| self.g.node(n).unwrap().parameterized)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        for &p in &params {
            let d = self.device[&p];
            let outs: Vec<(TensorId, u64)> =
                self.g.outputs(p).map(|t| (t.id, t.size_bytes)).collect();
            for (t, bytes) in outs {
                self.buffers.push(Buffer {
                    device: d,
                    bytes,
                    holders: 1,
                });
                // Never released: one extra reference pins it.
                let refs = 1 + self.local_readers(t, d) + self.remote_devices(t, d).len() as u32;
                self.resident.insert(
                    (t, d),
                    Residency {
                        buffer: self.buffers.len() - 1,
                        refs,
                    },
                );
            }
        }
        for &p in &params {
            self.complete_node(p);
        }
        self.dispatch();

        loop {
            let running: Vec<(Engine, Running)> = self
                .engines
                .iter()
                .filter_map(|(e, s)| s.running.map(|r| (*e, r)))
                .collect();
            let Some(next) = running.iter().map(|(_, r)| r.end).min_by(f64::total_cmp) else {
                break;
            };
            self.accumulate_wait(next);
            self.now = next;
            self.makespan = self.makespan.max(next);
            let mut done: Vec<(u64, Engine, Job)> = running
                .iter()
                .filter(|(_, r)| r.end == next)
                .map(|(e, r)| (r.seq, *e, r.job))
                .collect();
            done.sort();
            for (_, e, job) in done {
                self.engines.get_mut(&e).unwrap().running = None;
                self.finish(job);
            }
            self.dispatch();
        }

        if self.finished.len() < self.device.len() {
            let unfinished: BTreeSet<NodeId> = self
                .device
                .keys()
                .copied()
                .filter(|n| !self.finished.contains(n))
                .collect();
            let frontier = unfinished
                .iter()
                .copied()
                .filter(|n| {
                    !self
                        .g
                        .in_edges(*n)
                        .any(|e| e.orders_execution() && unfinished.contains(&e.src))
                })
                .collect();
            return Err(Error::Deadlock(frontier));
        }
        Ok(())
    }

    fn accumulate_wait(&mut self, until: f64) {
        let dt = until - self.now;
        if dt <= 0.0 {
            return;
        }
        for (d, &count) in &self.blocked {
            if count == 0 || d.is_host() {
                continue;
            }
            let engine = if self.cfg.serial {
                Engine::Serial
            } else {
                Engine::Compute(*d)
            };
            if self
                .engines
                .get(&engine)
                .is_some_and(|s| s.running.is_none())
            {
                self.transfer_wait += dt;
            }
        }
    }

    fn into_report(self) -> SimReport {
        let mut static_device = 0;
        let mut static_host = 0;
        for n in self
            .g
            .nodes()
            .iter()
            .filter(|n| n.parameterized && self.device.contains_key(&n.id))
        {
            let bytes: u64 = self.g.outputs(n.id).map(|t| t.size_bytes).sum();
            if n.device.is_host() {
                static_host += bytes;
            } else {
                static_device += bytes;
            }
        }
        let peak_device = self
            .peak
            .iter()
            .filter(|(d, _)| !d.is_host())
            .map(|(_, &p)| p)
            .max()
            .unwrap_or(0);
        let peak_host = self.peak.get(&Device::Host).copied().unwrap_or(0);
        SimReport {
            peak_device_bytes: peak_device,
            peak_host_bytes: peak_host,
            static_device_bytes: static_device,
            static_host_bytes: static_host,
            makespan: self.makespan,
            transfer_time_total: self.transfer_total,
            transfer_wait_time: self.transfer_wait,
            oom: peak_device > self.cfg.device_capacity_bytes,
            event_trace: self.trace,
        }
    }
}
