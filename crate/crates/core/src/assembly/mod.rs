//! Turning terms into computational graphs by edge replacement.

mod export;
mod template;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::Grammar;
use crate::term::{Node, NodeKind, Term};

pub use export::{from_json, to_dot, to_json, SCHEMA};
pub use template::{
    full_reach, reach_bit, reach_connected, FixedEdge, GraphTemplate, Reach, EDGE_REACH, MAX_RANK,
};

pub const ZERO: &str = "zero";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    pub label: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, String>,
}

impl Edge {
    pub fn is_folded(&self) -> bool {
        self.attrs.get("folded").is_some_and(|v| v == "true")
    }

    /// Label used by graph kernels: folded operators carry their nonterminal.
    pub fn kernel_label(&self) -> String {
        match (self.is_folded(), self.attrs.get("nt")) {
            (true, Some(nt)) => format!("{nt}:{}", self.label),
            _ => self.label.clone(),
        }
    }

    pub fn is_downsample(&self) -> bool {
        self.attrs.get("stride").is_some_and(|s| s != "1")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchGraph {
    /// Node ids, ascending.
    pub nodes: Vec<usize>,
    pub edges: Vec<Edge>,
    pub input: usize,
    pub output: usize,
    pub node_attrs: BTreeMap<usize, BTreeMap<String, String>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub longest_path: usize,
    pub labels: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum AssemblyError {
    #[error("operator `{0}` has no graph template")]
    MissingTemplate(String),
    #[error("operator `{name}` applied to {got} arguments but its template has {expected} slots")]
    SlotMismatch { name: String, expected: usize, got: usize },
    #[error("`{name}` attaches to {got} nodes where {expected} are required")]
    RankMismatch { name: String, expected: usize, got: usize },
    #[error("placeholder `{0}` has no binding")]
    UnboundPlaceholder(String),
}

struct Builder<'g> {
    g: &'g Grammar,
    next: usize,
    edges: Vec<Edge>,
    node_attrs: BTreeMap<usize, BTreeMap<String, String>>,
}

impl Builder<'_> {
    fn fresh(&mut self) -> usize {
        self.next += 1;
        self.next - 1
    }

    fn leaf_edges(&mut self, label: &str, attrs: BTreeMap<String, String>, attach: &[usize]) {
        let head = attach[attach.len() - 1];
        let mut seen = BTreeSet::new();
        for &tail in &attach[..attach.len() - 1] {
            if seen.insert(tail) {
                self.edges.push(Edge { tail, head, label: label.to_string(), attrs: attrs.clone() });
            }
        }
    }

    fn place(&mut self, node: &Node, attach: &[usize]) -> Result<(), AssemblyError> {
        match &node.kind {
            NodeKind::Primitive(name) => {
                if attach.len() != 2 {
                    return Err(AssemblyError::RankMismatch { name: name.to_string(), expected: 2, got: attach.len() });
                }
                let attrs = self.g.attributes_by_name(name).cloned().unwrap_or_default();
                self.leaf_edges(name, attrs, attach);
            }
            NodeKind::Folded(name) => {
                let mut attrs = BTreeMap::new();
                attrs.insert("folded".to_string(), "true".to_string());
                if let Some(nt) = node.nt() {
                    attrs.insert("nt".to_string(), nt.to_string());
                }
                self.leaf_edges(name, attrs, attach);
            }
            NodeKind::Placeholder(name) => return Err(AssemblyError::UnboundPlaceholder(name.to_string())),
            NodeKind::Operator { name, children } => {
                let g = self.g;
                let t = g
                    .template_by_name(name)
                    .ok_or_else(|| AssemblyError::MissingTemplate(name.to_string()))?;
                if t.arity() != children.len() {
                    return Err(AssemblyError::SlotMismatch {
                        name: name.to_string(),
                        expected: t.arity(),
                        got: children.len(),
                    });
                }
                if t.rank() != attach.len() {
                    return Err(AssemblyError::RankMismatch {
                        name: name.to_string(),
                        expected: t.rank(),
                        got: attach.len(),
                    });
                }
                let mut map = vec![usize::MAX; t.nodes];
                for (&ext, &a) in t.external.iter().zip(attach) {
                    map[ext] = a;
                }
                for m in map.iter_mut() {
                    if *m == usize::MAX {
                        *m = self.fresh();
                    }
                }
                for (slot, child) in t.slots.iter().zip(children) {
                    let sub: Vec<usize> = slot.iter().map(|&n| map[n]).collect();
                    self.place(child, &sub)?;
                }
                for e in &t.fixed {
                    self.edges.push(Edge {
                        tail: map[e.tail],
                        head: map[e.head],
                        label: e.label.clone(),
                        attrs: BTreeMap::new(),
                    });
                    self.node_attrs.entry(map[e.head]).or_default().insert("merge".into(), "concat".into());
                }
            }
        }
        Ok(())
    }
}

/// Materializes the computational graph of `t` (folded or not). Node 0 is the
/// input and node 1 the output.
pub fn assemble(t: &Term, g: &Grammar) -> Result<ArchGraph, AssemblyError> {
    let root = t.expanded();
    let mut b = Builder { g, next: 2, edges: Vec::new(), node_attrs: BTreeMap::new() };
    b.place(&root, &[0, 1])?;
    let mut indeg = vec![0usize; b.next];
    for e in &b.edges {
        indeg[e.head] += 1;
    }
    for (n, &d) in indeg.iter().enumerate() {
        if d >= 2 {
            b.node_attrs.entry(n).or_default().entry("merge".into()).or_insert_with(|| "sum".into());
        }
    }
    Ok(ArchGraph {
        nodes: (0..b.next).collect(),
        edges: b.edges,
        input: 0,
        output: 1,
        node_attrs: b.node_attrs,
    })
}

impl ArchGraph {
    /// A single edge from input to output.
    pub fn single(label: &str) -> Self {
        ArchGraph {
            nodes: vec![0, 1],
            edges: vec![Edge { tail: 0, head: 1, label: label.into(), attrs: BTreeMap::new() }],
            input: 0,
            output: 1,
            node_attrs: BTreeMap::new(),
        }
    }

    fn max_id(&self) -> usize {
        self.nodes.iter().copied().max().unwrap_or(0).max(self.input).max(self.output) + 1
    }

    fn reach(&self, edges: &[&Edge], forward: bool) -> Vec<bool> {
        let n = self.max_id();
        let mut adj = vec![Vec::new(); n];
        for e in edges {
            if forward {
                adj[e.tail].push(e.head);
            } else {
                adj[e.head].push(e.tail);
            }
        }
        let start = if forward { self.input } else { self.output };
        let mut seen = vec![false; n];
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen
    }

    /// Removes `zero` edges and every node that is not on an input-output
    /// path. Input and output always survive.
    pub fn prune_zero(&self) -> ArchGraph {
        let live: Vec<&Edge> = self.edges.iter().filter(|e| e.label != ZERO).collect();
        let fwd = self.reach(&live, true);
        let bwd = self.reach(&live, false);
        let keep = |n: usize| fwd[n] && bwd[n];
        let nodes: Vec<usize> =
            self.nodes.iter().copied().filter(|&n| keep(n) || n == self.input || n == self.output).collect();
        let edges = live.into_iter().filter(|e| keep(e.tail) && keep(e.head)).cloned().collect();
        let node_attrs = self
            .node_attrs
            .iter()
            .filter(|(n, _)| nodes.binary_search(n).is_ok())
            .map(|(&n, a)| (n, a.clone()))
            .collect();
        ArchGraph { nodes, edges, input: self.input, output: self.output, node_attrs }
    }

    /// True iff a path from input to output survives zero pruning.
    pub fn is_connected(&self) -> bool {
        let live: Vec<&Edge> = self.edges.iter().filter(|e| e.label != ZERO).collect();
        self.reach(&live, true)[self.output]
    }

    /// Nodes in a topological order.
    pub fn topo_order(&self) -> Vec<usize> {
        let n = self.max_id();
        let mut indeg = vec![0usize; n];
        let mut succ = vec![Vec::new(); n];
        for e in &self.edges {
            indeg[e.head] += 1;
            succ[e.tail].push(e.head);
        }
        let mut stack: Vec<usize> = self.nodes.iter().rev().copied().filter(|&v| indeg[v] == 0).collect();
        let mut out = Vec::with_capacity(self.nodes.len());
        while let Some(v) = stack.pop() {
            out.push(v);
            for &w in succ[v].iter().rev() {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    stack.push(w);
                }
            }
        }
        out
    }

    pub fn is_acyclic(&self) -> bool {
        self.topo_order().len() == self.nodes.len()
    }

    /// Longest input-output path (in edges) of this graph as is; 0 if none.
    fn longest_path_raw(&self) -> usize {
        let n = self.max_id();
        let mut best: Vec<Option<usize>> = vec![None; n];
        best[self.input] = Some(0);
        let mut by_tail: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in &self.edges {
            by_tail[e.tail].push(e.head);
        }
        for v in self.topo_order() {
            let Some(d) = best[v] else { continue };
            for &w in &by_tail[v] {
                if best[w].is_none_or(|b| b < d + 1) {
                    best[w] = Some(d + 1);
                }
            }
        }
        best[self.output].unwrap_or(0)
    }

    pub fn stats(&self) -> GraphStats {
        let p = self.prune_zero();
        let mut labels = BTreeMap::new();
        for e in &p.edges {
            *labels.entry(e.label.clone()).or_insert(0) += 1;
        }
        GraphStats { nodes: p.nodes.len(), edges: p.edges.len(), longest_path: p.longest_path_raw(), labels }
    }

    /// Minimum and maximum number of downsampling edges over all surviving
    /// input-output paths, or `None` if there is no such path.
    pub fn downsample_range(&self) -> Option<(usize, usize)> {
        let p = self.prune_zero();
        let n = p.max_id();
        let mut range: Vec<Option<(usize, usize)>> = vec![None; n];
        range[p.input] = Some((0, 0));
        let mut out_edges: Vec<Vec<&Edge>> = vec![Vec::new(); n];
        for e in &p.edges {
            out_edges[e.tail].push(e);
        }
        for v in p.topo_order() {
            let Some((lo, hi)) = range[v] else { continue };
            for e in &out_edges[v] {
                let d = usize::from(e.is_downsample());
                let cand = (lo + d, hi + d);
                range[e.head] = Some(match range[e.head] {
                    None => cand,
                    Some((a, b)) => (a.min(cand.0), b.max(cand.1)),
                });
            }
        }
        range[p.output]
    }
}

/// [`ArchGraph::stats`] as a free function.
pub fn graph_stats(g: &ArchGraph) -> GraphStats {
    g.stats()
}

#[cfg(test)]
mod tests;
