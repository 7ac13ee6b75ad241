use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ArchGraph, Edge};

pub const SCHEMA: &str = "archgraph/1";

#[derive(Serialize, Deserialize)]
struct NodeJson {
    id: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    attrs: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    term_string: Option<String>,
    downsample_count: usize,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    schema: String,
    nodes: Vec<NodeJson>,
    edges: Vec<Edge>,
    input: usize,
    output: usize,
    meta: Meta,
}

/// `archgraph/1` document. `downsample_count` is the largest number of
/// downsampling edges on any surviving input-output path.
pub fn to_json(g: &ArchGraph, term_string: Option<&str>) -> serde_json::Value {
    let doc = GraphJson {
        schema: SCHEMA.to_string(),
        nodes: g
            .nodes
            .iter()
            .map(|&id| NodeJson { id, attrs: g.node_attrs.get(&id).cloned().unwrap_or_default() })
            .collect(),
        edges: g.edges.clone(),
        input: g.input,
        output: g.output,
        meta: Meta {
            term_string: term_string.map(str::to_string),
            downsample_count: g.downsample_range().map_or(0, |(_, hi)| hi),
        },
    };
    serde_json::to_value(doc).expect("graph serializes")
}

pub fn from_json(v: &serde_json::Value) -> Result<ArchGraph, String> {
    let doc: GraphJson = serde_json::from_value(v.clone()).map_err(|e| e.to_string())?;
    if doc.schema != SCHEMA {
        return Err(format!("unsupported schema `{}`", doc.schema));
    }
    let mut nodes: Vec<usize> = doc.nodes.iter().map(|n| n.id).collect();
    nodes.sort_unstable();
    let node_attrs = doc.nodes.into_iter().filter(|n| !n.attrs.is_empty()).map(|n| (n.id, n.attrs)).collect();
    Ok(ArchGraph { nodes, edges: doc.edges, input: doc.input, output: doc.output, node_attrs })
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn to_dot(g: &ArchGraph) -> String {
    let mut s = String::from("digraph arch {\n  rankdir=LR;\n");
    for &n in &g.nodes {
        let name = if n == g.input {
            "input".to_string()
        } else if n == g.output {
            "output".to_string()
        } else {
            n.to_string()
        };
        let _ = writeln!(s, "  n{n} [label={}];", quote(&name));
    }
    for e in &g.edges {
        let _ = writeln!(s, "  n{} -> n{} [label={}];", e.tail, e.head, quote(&e.kernel_label()));
    }
    s.push_str("}\n");
    s
}
