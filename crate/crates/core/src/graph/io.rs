//! Graph JSON: `{"nodes":[...],"edges":[...],"tensors":[...]}`.
//!
//! Output is canonical: object keys sorted, nodes and tensors sorted by id,
//! edges grouped by destination id with operand order preserved. Writing a
//! loaded canonical file reproduces it byte for byte.

use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{CompGraph, EdgeRec, OpNode, TensorSpec};
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    nodes: Vec<OpNode>,
    edges: Vec<EdgeRec>,
    tensors: Vec<TensorSpec>,
}

pub fn from_json(text: &str) -> Result<CompGraph> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawGraph = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Json(format!(
            "line {} column {}, at `{}`: {}",
            inner.line(),
            inner.column(),
            path,
            inner
        ))
    })?;
    Ok(CompGraph::from_parts(raw.nodes, raw.edges, raw.tensors))
}

pub fn from_json_reader(mut reader: impl Read) -> Result<CompGraph> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    from_json(&text)
}

/// Canonical pretty-printed JSON with a trailing newline.
pub fn to_json(g: &CompGraph) -> String {
    let raw = RawGraph {
        nodes: g.nodes().to_vec(),
        edges: g.edges().to_vec(),
        tensors: g.tensors().to_vec(),
    };
    // Going through `Value` sorts object keys.
    let value = serde_json::to_value(&raw).expect("graph serializes");
    let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
    s.push('\n');
    s
}
