//! Weisfeiler-Lehman subtree kernel on a node-labeled view of architecture
//! graphs, and the hierarchical kernel over fold views of terms.

mod hwl;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::assembly::{ArchGraph, AssemblyError};

pub use hwl::{gram_matrix, hwl_kernel, level_kernels, Featurizer, HwlConfig, LevelGrams, TermFeatures};

pub const INPUT_LABEL: &str = "<input>";
pub const OUTPUT_LABEL: &str = "<output>";

#[derive(Clone, Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("feature vectors come from different label dictionaries")]
    DictionaryMismatch,
    #[error("feature vectors use different iteration counts ({0} vs {1})")]
    IterationMismatch(usize, usize),
    #[error("invalid kernel configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

/// Directed graph with string node labels. Undirected graphs list every
/// neighbor in `succ` and leave `pred` empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledGraph {
    pub labels: Vec<String>,
    pub succ: Vec<Vec<usize>>,
    pub pred: Vec<Vec<usize>>,
}

impl LabeledGraph {
    pub fn directed(labels: Vec<String>, edges: &[(usize, usize)]) -> Self {
        let n = labels.len();
        let mut succ = vec![Vec::new(); n];
        let mut pred = vec![Vec::new(); n];
        for &(a, b) in edges {
            succ[a].push(b);
            pred[b].push(a);
        }
        LabeledGraph { labels, succ, pred }
    }

    pub fn undirected(labels: Vec<String>, edges: &[(usize, usize)]) -> Self {
        let n = labels.len();
        let mut succ = vec![Vec::new(); n];
        for &(a, b) in edges {
            succ[a].push(b);
            succ[b].push(a);
        }
        LabeledGraph { labels, succ, pred: vec![Vec::new(); n] }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Line-graph view: every edge of the pruned graph becomes a node labeled
/// with its kernel label, wired head-to-tail. Node 0 is the input marker and
/// node 1 the output marker.
pub fn node_view(g: &ArchGraph) -> LabeledGraph {
    let p = g.prune_zero();
    let mut labels = vec![INPUT_LABEL.to_string(), OUTPUT_LABEL.to_string()];
    labels.extend(p.edges.iter().map(|e| e.kernel_label()));
    let mut by_tail: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, e) in p.edges.iter().enumerate() {
        by_tail.entry(e.tail).or_default().push(i + 2);
    }
    let mut edges = Vec::new();
    for (i, e) in p.edges.iter().enumerate() {
        if e.tail == p.input {
            edges.push((0, i + 2));
        }
        if e.head == p.output {
            edges.push((i + 2, 1));
        }
        if let Some(next) = by_tail.get(&e.head) {
            edges.extend(next.iter().map(|&j| (i + 2, j)));
        }
    }
    LabeledGraph::directed(labels, &edges)
}

static NEXT_DICTIONARY: AtomicUsize = AtomicUsize::new(0);

#[derive(Default)]
struct DictInner {
    raw: HashMap<String, u32>,
    refined: HashMap<Vec<u32>, u32>,
    next: u32,
}

/// Injective, insertion-ordered map from labels to compact ids, shared by
/// every graph whose features are compared.
pub struct LabelDictionary {
    id: usize,
    inner: Mutex<DictInner>,
}

impl Default for LabelDictionary {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for LabelDictionary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LabelDictionary").field("id", &self.id).field("len", &self.len()).finish()
    }
}

impl LabelDictionary {
    pub fn new() -> Self {
        LabelDictionary { id: NEXT_DICTIONARY.fetch_add(1, Ordering::Relaxed), inner: Mutex::new(DictInner::default()) }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().next as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl DictInner {
    fn raw(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.raw.get(label) {
            return id;
        }
        let id = self.next;
        self.next += 1;
        self.raw.insert(label.to_string(), id);
        id
    }

    fn refined(&mut self, key: &[u32]) -> u32 {
        if let Some(&id) = self.refined.get(key) {
            return id;
        }
        let id = self.next;
        self.next += 1;
        self.refined.insert(key.to_vec(), id);
        id
    }
}

/// Sparse label histogram over all WL iterations `0..=h`.
#[derive(Clone, Debug, PartialEq)]
pub struct WlFeatures {
    /// (label id, count), sorted by id; counts are positive.
    pub counts: Vec<(u32, u32)>,
    pub h: usize,
    pub nodes: usize,
    dictionary: usize,
}

impl WlFeatures {
    /// Sum of counts; equals `(h + 1) * nodes`.
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn self_dot(&self) -> f64 {
        self.counts.iter().map(|&(_, c)| (c as f64) * (c as f64)).sum()
    }
}

/// Node labels at every iteration: `out[h][v]`.
pub fn wl_labels(g: &LabeledGraph, h: usize, dict: &LabelDictionary) -> Vec<Vec<u32>> {
    let mut inner = dict.inner.lock().unwrap();
    let mut cur: Vec<u32> = g.labels.iter().map(|l| inner.raw(l)).collect();
    let mut out = Vec::with_capacity(h + 1);
    out.push(cur.clone());
    let mut key = Vec::new();
    let mut buf = Vec::new();
    for _ in 0..h {
        let next: Vec<u32> = (0..g.len())
            .map(|v| {
                // previous label, then sorted predecessor and successor multisets
                key.clear();
                key.push(cur[v]);
                for side in [&g.pred[v], &g.succ[v]] {
                    buf.clear();
                    buf.extend(side.iter().map(|&u| cur[u]));
                    buf.sort_unstable();
                    key.push(u32::MAX);
                    key.extend_from_slice(&buf);
                }
                inner.refined(&key)
            })
            .collect();
        out.push(next.clone());
        cur = next;
    }
    out
}

pub fn wl_features(g: &LabeledGraph, h: usize, dict: &LabelDictionary) -> WlFeatures {
    let labels = wl_labels(g, h, dict);
    let mut all: Vec<u32> = labels.into_iter().flatten().collect();
    all.sort_unstable();
    let mut counts: Vec<(u32, u32)> = Vec::new();
    for id in all {
        match counts.last_mut() {
            Some((last, c)) if *last == id => *c += 1,
            _ => counts.push((id, 1)),
        }
    }
    WlFeatures { counts, h, nodes: g.len(), dictionary: dict.id }
}

/// Features of an architecture graph through its line-graph view.
pub fn graph_features(g: &ArchGraph, h: usize, dict: &LabelDictionary) -> WlFeatures {
    wl_features(&node_view(g), h, dict)
}

pub(crate) fn dot(a: &WlFeatures, b: &WlFeatures) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0u64);
    while i < a.counts.len() && j < b.counts.len() {
        let (ka, ca) = a.counts[i];
        let (kb, cb) = b.counts[j];
        match ka.cmp(&kb) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += ca as u64 * cb as u64;
                i += 1;
                j += 1;
            }
        }
    }
    s as f64
}

fn check(a: &WlFeatures, b: &WlFeatures) -> Result<(), KernelError> {
    if a.dictionary != b.dictionary {
        return Err(KernelError::DictionaryMismatch);
    }
    if a.h != b.h {
        return Err(KernelError::IterationMismatch(a.h, b.h));
    }
    Ok(())
}

/// Inner product of the feature vectors, cosine-normalized if asked.
pub fn wl_kernel(a: &WlFeatures, b: &WlFeatures, normalize: bool) -> Result<f64, KernelError> {
    check(a, b)?;
    let k = dot(a, b);
    if !normalize {
        return Ok(k);
    }
    let n = (a.self_dot() * b.self_dot()).sqrt();
    Ok(if n > 0.0 { k / n } else { 0.0 })
}
