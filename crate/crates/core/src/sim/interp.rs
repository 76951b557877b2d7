use std::collections::{BTreeMap, HashMap};

use super::TensorValue;
use crate::graph::{CompGraph, EdgeAction, NodeId, OpKind, OpNode, TensorId};
use crate::{Error, Result};

/// Runs one step of `g` and returns the final state of every variable.
///
/// Variables are bound by name from `inputs`. Constants may be bound the same
/// way; an unbound constant named `const:<number>` takes that scalar. Each
/// op reachable from a parameterized node runs once, in `(γ, id)` order.
/// Reading a variable yields its latest value; an update edge commits when
/// its producer finishes.
pub fn interpret(
    g: &CompGraph,
    inputs: &BTreeMap<String, TensorValue>,
) -> Result<BTreeMap<String, TensorValue>> {
    let order = g.topo_order()?;
    let mut state: BTreeMap<NodeId, TensorValue> = BTreeMap::new();
    let mut roots = Vec::new();
    for n in g.nodes().iter().filter(|n| n.parameterized) {
        roots.push(n.id);
        let bound = inputs.get(&n.name).cloned();
        let v = match (n.kind, bound) {
            (_, Some(v)) => v,
            (OpKind::Constant, None) => n
                .name
                .strip_prefix("const:")
                .and_then(|s| s.parse::<f64>().ok())
                .map(TensorValue::scalar)
                .ok_or_else(|| Error::UnboundInput(n.name.clone()))?,
            (_, None) => return Err(Error::UnboundInput(n.name.clone())),
        };
        state.insert(n.id, v);
    }

    let mut run: Vec<NodeId> = g
        .reachable_from(&roots)
        .into_iter()
        .filter(|&id| !g.node(id).is_some_and(|n| n.parameterized))
        .collect();
    run.sort_by_key(|&id| (order[id], id));

    let mut values: HashMap<TensorId, TensorValue> = HashMap::new();
    for id in run {
        let node = g.try_node(id)?;
        let mut args = Vec::new();
        for e in g.inputs(id) {
            let t = e.tensor.expect("read edges carry tensors");
            let producer = g.try_tensor(t)?.producer;
            let v = match state.get(&producer) {
                Some(v) => v,
                None => values.get(&t).ok_or(Error::UnknownTensor(t))?,
            };
            args.push(v);
        }
        let out = eval(node, &args)?;
        for e in g.out_edges(id).filter(|e| e.action == EdgeAction::Update) {
            state.insert(e.dst, out.clone());
        }
        for t in g.outputs(id) {
            values.insert(t.id, out.clone());
        }
    }

    Ok(g.nodes()
        .iter()
        .filter(|n| n.kind == OpKind::Variable)
        .map(|n| (n.name.clone(), state[&n.id].clone()))
        .collect())
}

fn mismatch(node: &OpNode, detail: String) -> Error {
    Error::ShapeMismatch {
        node: node.id,
        detail,
    }
}

fn arity(node: &OpNode, args: &[&TensorValue], want: usize) -> Result<()> {
    if args.len() != want {
        return Err(mismatch(
            node,
            format!(
                "`{}` takes {want} operand(s), got {}",
                node.op_type(),
                args.len()
            ),
        ));
    }
    Ok(())
}

/// Elementwise combination; a one-element side broadcasts.
fn zip(
    node: &OpNode,
    a: &TensorValue,
    b: &TensorValue,
    f: fn(f64, f64) -> f64,
) -> Result<TensorValue> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect();
        return Ok(TensorValue {
            shape: a.shape.clone(),
            data,
        });
    }
    if b.len() == 1 {
        let y = b.data[0];
        return Ok(TensorValue {
            shape: a.shape.clone(),
            data: a.data.iter().map(|x| f(*x, y)).collect(),
        });
    }
    if a.len() == 1 {
        let x = a.data[0];
        return Ok(TensorValue {
            shape: b.shape.clone(),
            data: b.data.iter().map(|y| f(x, *y)).collect(),
        });
    }
    Err(mismatch(
        node,
        format!("shapes {:?} and {:?}", a.shape, b.shape),
    ))
}

fn fold(node: &OpNode, args: &[&TensorValue], f: fn(f64, f64) -> f64) -> Result<TensorValue> {
    let Some((first, rest)) = args.split_first() else {
        return Err(mismatch(
            node,
            format!("`{}` needs an operand", node.op_type()),
        ));
    };
    rest.iter()
        .try_fold((*first).clone(), |acc, v| zip(node, &acc, v, f))
}

fn matmul(node: &OpNode, a: &TensorValue, b: &TensorValue) -> Result<TensorValue> {
    let ([m, k], [k2, n]) = (a.shape.as_slice(), b.shape.as_slice()) else {
        return Err(mismatch(
            node,
            format!(
                "matmul needs 2-D operands, got {:?} and {:?}",
                a.shape, b.shape
            ),
        ));
    };
    if k != k2 {
        return Err(mismatch(
            node,
            format!("matmul inner dimensions {k} and {k2}"),
        ));
    }
    let (m, k, n) = (*m, *k, *n);
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a.data[i * k + p] * b.data[p * n + j];
            }
            data[i * n + j] = acc;
        }
    }
    Ok(TensorValue {
        shape: vec![m, n],
        data,
    })
}

fn eval(node: &OpNode, args: &[&TensorValue]) -> Result<TensorValue> {
    if node.kind.is_swap() {
        arity(node, args, 1)?;
        return Ok(args[0].clone());
    }
    match node.op_type() {
        "identity" => {
            arity(node, args, 1)?;
            Ok(args[0].clone())
        }
        "neg" => {
            arity(node, args, 1)?;
            Ok(TensorValue {
                shape: args[0].shape.clone(),
                data: args[0].data.iter().map(|x| -x).collect(),
            })
        }
        "add" => fold(node, args, |x, y| x + y),
        "mul" => fold(node, args, |x, y| x * y),
        "sub" => {
            arity(node, args, 2)?;
            zip(node, args[0], args[1], |x, y| x - y)
        }
        "matmul" => {
            arity(node, args, 2)?;
            matmul(node, args[0], args[1])
        }
        other => Err(Error::UnsupportedOp {
            node: node.id,
            op: other.to_owned(),
        }),
    }
}
