//! Deterministic synthetic training graphs.
//!
//! Every topology is a list of forward layers; [`training`] turns it into a
//! full step. Forward layer `k` reads its inputs (and a weight `w_k` when
//! weighted). Its backward op reads the layer's output, the gradients of the
//! layer's forward consumers, and `w_k`. The update op computes
//! `w_k - grad` and assigns it back into `w_k`. All op names use the
//! interpreter vocabulary, so generated graphs can be interpreted.

use crate::graph::{CompGraph, GraphBuilder, NodeId, Phase, TensorId};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Topology {
    /// `n` weighted layers in a line.
    Chain { n: usize },
    /// `stages` blocks of `width` parallel branches; branch `b` has `b + 1`
    /// layers and the branches are summed.
    Branchy { stages: usize, width: usize },
    /// Encoder/decoder of `depth` levels with `convs_per_level` layers each
    /// and a skip edge from every encoder level to its decoder level.
    Unet {
        depth: usize,
        convs_per_level: usize,
    },
    /// A stem plus `blocks` residual blocks `conv -> conv -> add(block input)`.
    ResnetLike { blocks: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Src {
    Input,
    Layer(usize),
}

#[derive(Clone, Debug)]
struct Layer {
    label: String,
    op: &'static str,
    inputs: Vec<Src>,
    weighted: bool,
}

#[derive(Default)]
struct Net {
    layers: Vec<Layer>,
}

impl Net {
    fn push(&mut self, label: String, op: &'static str, inputs: Vec<Src>, weighted: bool) -> Src {
        self.layers.push(Layer {
            label,
            op,
            inputs,
            weighted,
        });
        Src::Layer(self.layers.len() - 1)
    }

    fn conv(&mut self, label: String, input: Src) -> Src {
        self.push(label, "mul", vec![input], true)
    }

    fn add(&mut self, label: String, inputs: Vec<Src>) -> Src {
        self.push(label, "add", inputs, false)
    }
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::Config(format!("{name} must be positive")));
    }
    Ok(())
}

fn layers(topology: Topology) -> Result<Net> {
    let mut net = Net::default();
    match topology {
        Topology::Chain { n } => {
            positive("n", n)?;
            let mut prev = Src::Input;
            for k in 0..n {
                prev = net.conv(format!("layer{k}"), prev);
            }
        }
        Topology::Branchy { stages, width } => {
            positive("stages", stages)?;
            positive("width", width)?;
            let mut prev = Src::Input;
            for s in 0..stages {
                let mut ends = Vec::new();
                for b in 0..width {
                    let mut at = prev;
                    for i in 0..=b {
                        at = net.conv(format!("stage{s}/branch{b}/conv{i}"), at);
                    }
                    ends.push(at);
                }
                prev = if ends.len() == 1 {
                    ends[0]
                } else {
                    net.add(format!("stage{s}/merge"), ends)
                };
            }
        }
        Topology::Unet {
            depth,
            convs_per_level,
        } => {
            positive("depth", depth)?;
            positive("convs_per_level", convs_per_level)?;
            let mut prev = Src::Input;
            let mut skips = Vec::new();
            for l in 0..depth {
                for i in 0..convs_per_level {
                    prev = net.conv(format!("down{l}/conv{i}"), prev);
                }
                skips.push(prev);
                prev = net.conv(format!("down{l}/pool"), prev);
            }
            for i in 0..convs_per_level {
                prev = net.conv(format!("bottom/conv{i}"), prev);
            }
            for l in (0..depth).rev() {
                prev = net.conv(format!("up{l}/upsample"), prev);
                prev = net.add(format!("up{l}/concat"), vec![prev, skips[l]]);
                for i in 0..convs_per_level {
                    prev = net.conv(format!("up{l}/conv{i}"), prev);
                }
            }
        }
        Topology::ResnetLike { blocks } => {
            positive("blocks", blocks)?;
            let mut prev = net.conv("stem".into(), Src::Input);
            for b in 0..blocks {
                let c1 = net.conv(format!("block{b}/conv0"), prev);
                let c2 = net.conv(format!("block{b}/conv1"), c1);
                prev = net.add(format!("block{b}/add"), vec![c2, prev]);
            }
        }
    }
    Ok(net)
}

/// Builds one training step of `topology` with every activation, gradient
/// and parameter tensor `tensor_bytes` long.
pub fn generate(topology: Topology, tensor_bytes: u64) -> Result<CompGraph> {
    if tensor_bytes == 0 {
        return Err(Error::Config("tensor_bytes must be positive".into()));
    }
    let net = layers(topology)?;
    Ok(training(&net, tensor_bytes))
}

fn training(net: &Net, tensor_bytes: u64) -> CompGraph {
    let mut b = GraphBuilder::new();
    b.set_tensor_bytes(tensor_bytes);
    b.set_scope("data");
    let (_, input) = b.variable("input");

    let n = net.layers.len();
    let mut weights: Vec<Option<(NodeId, TensorId)>> = vec![None; n];
    let mut acts: Vec<TensorId> = Vec::with_capacity(n);
    for (k, layer) in net.layers.iter().enumerate() {
        if layer.weighted {
            b.set_scope("params");
            weights[k] = Some(b.variable(&format!("w/{}", layer.label)));
        }
        b.set_scope("forward");
        let mut ins: Vec<TensorId> = layer
            .inputs
            .iter()
            .map(|s| match s {
                Src::Input => input,
                Src::Layer(j) => acts[*j],
            })
            .collect();
        if let Some((_, tw)) = weights[k] {
            ins.push(tw);
        }
        let (_, t) = b.op(
            &format!("{}:fwd/{}", layer.op, layer.label),
            Phase::Forward,
            &ins,
        );
        acts.push(t);
    }

    // Forward consumers of each layer, for routing gradients.
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, layer) in net.layers.iter().enumerate() {
        for s in &layer.inputs {
            if let Src::Layer(j) = s {
                consumers[*j].push(k);
            }
        }
    }

    let mut grads: Vec<Option<TensorId>> = vec![None; n];
    for k in (0..n).rev() {
        let layer = &net.layers[k];
        b.set_scope("backward");
        let mut ins = vec![acts[k]];
        ins.extend(
            consumers[k]
                .iter()
                .map(|&c| grads[c].expect("consumers come later")),
        );
        if let Some((_, tw)) = weights[k] {
            ins.push(tw);
        }
        let (_, g) = b.op(&format!("mul:bwd/{}", layer.label), Phase::Backward, &ins);
        grads[k] = Some(g);
        if let Some((w, tw)) = weights[k] {
            b.set_scope("optimizer");
            let (_, u) = b.op(&format!("sub:opt/{}", layer.label), Phase::Update, &[tw, g]);
            b.update(u, w);
        }
    }
    b.build()
}
