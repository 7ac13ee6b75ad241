//! Graph templates for topological operators.
//!
//! A template is a small DAG whose argument slots are (hyper)edges. Ordinary
//! operators have rank 2 (one source, one sink) and every slot is a plain
//! `tail -> head` edge. Gathering operators such as the DARTS `NodeK` family
//! have slots attached to several tails and a single head; the slot's child
//! must then have the same rank.

use std::fmt;

/// Reachability summary among the external nodes of a (sub)graph.
///
/// Bit `i * 8 + j` is set when external node `j` is reachable from external
/// node `i`. At most eight external nodes are supported.
pub type Reach = u64;

pub const MAX_RANK: usize = 8;

#[inline]
pub fn reach_bit(i: usize, j: usize) -> Reach {
    1u64 << (i * MAX_RANK + j)
}

/// Summary of a single rank-2 edge that connects its ends.
pub const EDGE_REACH: Reach = 1 << 1;

/// True if some tail of a rank-`rank` summary reaches the head (last node).
pub fn reach_connected(reach: Reach, rank: usize) -> bool {
    if rank < 2 {
        return false;
    }
    let head = rank - 1;
    (0..head).any(|i| reach & reach_bit(i, head) != 0)
}

/// Summary with every tail reaching the head.
pub fn full_reach(rank: usize) -> Reach {
    let head = rank.saturating_sub(1);
    (0..head).fold(0, |acc, i| acc | reach_bit(i, head))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixedEdge {
    pub tail: usize,
    pub head: usize,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphTemplate {
    pub nodes: usize,
    /// External nodes in attachment order; for rank 2 this is `[source, sink]`.
    pub external: Vec<usize>,
    /// Slot `i` attaches to these template nodes (tails first, head last).
    pub slots: Vec<Vec<usize>>,
    pub fixed: Vec<FixedEdge>,
}

impl GraphTemplate {
    pub fn arity(&self) -> usize {
        self.slots.len()
    }

    pub fn rank(&self) -> usize {
        self.external.len()
    }

    pub fn slot_rank(&self, slot: usize) -> usize {
        self.slots[slot].len()
    }

    /// Plain edges `(tail, head)` listed in slot order, with a source of 0 and
    /// sink of `nodes - 1`.
    pub fn from_edges(edges: &[(usize, usize)]) -> Self {
        let nodes = edges.iter().map(|&(a, b)| a.max(b)).max().unwrap_or(0) + 1;
        GraphTemplate {
            nodes,
            external: vec![0, nodes - 1],
            slots: edges.iter().map(|&(a, b)| vec![a, b]).collect(),
            fixed: Vec::new(),
        }
    }

    /// `k` edges in series.
    pub fn chain(k: usize) -> Self {
        let edges: Vec<_> = (0..k).map(|i| (i, i + 1)).collect();
        Self::from_edges(&edges)
    }

    /// `Residual2(a, b, c)`: `a` and `c` in series, `b` as the skip edge.
    pub fn residual2() -> Self {
        Self::from_edges(&[(0, 1), (0, 2), (1, 2)])
    }

    /// `Residual3(a, b, c, d)`: `a`, `b`, `d` in series, `c` as the skip edge.
    pub fn residual3() -> Self {
        Self::from_edges(&[(0, 1), (1, 2), (0, 3), (2, 3)])
    }

    /// Densely connected DAG on `n` nodes; edges ordered by head, then tail.
    /// `dag(4)` is the NAS-Bench-201 cell.
    pub fn dag(n: usize) -> Self {
        let mut edges = Vec::new();
        for head in 1..n {
            for tail in 0..head {
                edges.push((tail, head));
            }
        }
        Self::from_edges(&edges)
    }

    /// `k` inputs summed into one output. Rank `k + 1`.
    pub fn gather(k: usize) -> Self {
        GraphTemplate {
            nodes: k + 1,
            external: (0..=k).collect(),
            slots: (0..k).map(|i| vec![i, k]).collect(),
            fixed: Vec::new(),
        }
    }

    /// The DARTS cell. Both cell inputs are identified with the single graph
    /// input; the four intermediate nodes are concatenated into the output.
    pub fn darts() -> Self {
        GraphTemplate {
            nodes: 6,
            external: vec![0, 5],
            slots: vec![
                vec![0, 0, 1],
                vec![0, 0, 1, 2],
                vec![0, 0, 1, 2, 3],
                vec![0, 0, 1, 2, 3, 4],
            ],
            fixed: (1..5)
                .map(|n| FixedEdge { tail: n, head: 5, label: "id".to_string() })
                .collect(),
        }
    }

    /// Built-in template for an operator name used with `arity` arguments.
    pub fn builtin(name: &str, arity: usize) -> Option<Self> {
        let numbered = |prefix: &str| -> Option<usize> {
            name.strip_prefix(prefix)
                .filter(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
                .and_then(|rest| rest.parse().ok())
        };
        let t = match name {
            "Linear" if arity >= 1 => Self::chain(arity),
            "Residual" | "Residual2" if arity == 3 => Self::residual2(),
            "Residual3" if arity == 4 => Self::residual3(),
            "Cell" if arity == 6 => Self::dag(4),
            "Darts" if arity == 4 => Self::darts(),
            _ => {
                if let Some(k) = numbered("Linear") {
                    if k != arity || k == 0 {
                        return None;
                    }
                    Self::chain(k)
                } else if let Some(n) = numbered("DAG") {
                    if n < 2 || n * (n - 1) / 2 != arity {
                        return None;
                    }
                    Self::dag(n)
                } else if let Some(k) = numbered("Node") {
                    if k < 2 || k - 1 != arity {
                        return None;
                    }
                    Self::gather(k - 1)
                } else {
                    return None;
                }
            }
        };
        Some(t)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.external.len() < 2 || self.external.len() > MAX_RANK {
            return Err(format!("rank must be in 2..={MAX_RANK}"));
        }
        if self.nodes > 64 {
            return Err("templates are limited to 64 nodes".into());
        }
        let in_range = |n: usize| n < self.nodes;
        if !self.external.iter().all(|&n| in_range(n)) {
            return Err("external node out of range".into());
        }
        for (i, slot) in self.slots.iter().enumerate() {
            if slot.len() < 2 || slot.len() > MAX_RANK {
                return Err(format!("slot {} must attach to 2..={MAX_RANK} nodes", i + 1));
            }
            if !slot.iter().all(|&n| in_range(n)) {
                return Err(format!("slot {} attaches to a node out of range", i + 1));
            }
        }
        if !self.fixed.iter().all(|e| in_range(e.tail) && in_range(e.head)) {
            return Err("fixed edge out of range".into());
        }
        // acyclicity over the (tail -> head) edges implied by slots
        let mut succ = vec![Vec::new(); self.nodes];
        let mut indeg = vec![0usize; self.nodes];
        let mut outdeg = vec![0usize; self.nodes];
        for (tail, head) in self.edge_pairs() {
            if tail == head {
                return Err("self loop".into());
            }
            succ[tail].push(head);
            indeg[head] += 1;
            outdeg[tail] += 1;
        }
        let mut deg = indeg.clone();
        let mut stack: Vec<usize> = (0..self.nodes).filter(|&n| deg[n] == 0).collect();
        let mut seen = 0;
        while let Some(n) = stack.pop() {
            seen += 1;
            for &m in &succ[n] {
                deg[m] -= 1;
                if deg[m] == 0 {
                    stack.push(m);
                }
            }
        }
        if seen != self.nodes {
            return Err("template is not acyclic".into());
        }
        if self.rank() == 2 {
            if indeg[self.external[0]] != 0 {
                return Err("source has incoming edges".into());
            }
            if outdeg[self.external[1]] != 0 {
                return Err("sink has outgoing edges".into());
            }
        }
        Ok(())
    }

    /// All `(tail, head)` pairs implied by slots and fixed edges.
    pub fn edge_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let slot_pairs = self.slots.iter().flat_map(|slot| {
            let head = *slot.last().unwrap();
            slot[..slot.len() - 1].iter().map(move |&t| (t, head))
        });
        slot_pairs.chain(self.fixed.iter().map(|e| (e.tail, e.head)))
    }

    /// Reachability among this template's external nodes, given summaries of
    /// what each slot's child connects.
    pub fn combine_reach(&self, children: &[Reach]) -> Reach {
        let n = self.nodes;
        let mut adj = vec![0u64; n];
        for (slot, &child) in self.slots.iter().zip(children) {
            for (i, &a) in slot.iter().enumerate() {
                for (j, &b) in slot.iter().enumerate() {
                    if i != j && child & reach_bit(i, j) != 0 && a != b {
                        adj[a] |= 1 << b;
                    }
                }
            }
        }
        for e in &self.fixed {
            adj[e.tail] |= 1 << e.head;
        }
        let mut out = 0;
        for (i, &src) in self.external.iter().enumerate() {
            let mut seen: u64 = 1 << src;
            let mut frontier: u64 = 1 << src;
            while frontier != 0 {
                let node = frontier.trailing_zeros() as usize;
                frontier &= frontier - 1;
                let next = adj[node] & !seen;
                seen |= next;
                frontier |= next;
            }
            for (j, &dst) in self.external.iter().enumerate() {
                if i != j && src != dst && seen & (1 << dst) != 0 {
                    out |= reach_bit(i, j);
                }
            }
        }
        out
    }

    /// Bitmask of template nodes lying on a path from some tail external
    /// node to the head external node.
    pub fn covered_nodes(&self, children: &[Reach]) -> u64 {
        let n = self.nodes;
        let mut fwd_adj = vec![0u64; n];
        let mut bwd_adj = vec![0u64; n];
        let mut link = |a: usize, b: usize| {
            fwd_adj[a] |= 1 << b;
            bwd_adj[b] |= 1 << a;
        };
        for (slot, &child) in self.slots.iter().zip(children) {
            for (i, &a) in slot.iter().enumerate() {
                for (j, &b) in slot.iter().enumerate() {
                    if i != j && a != b && child & reach_bit(i, j) != 0 {
                        link(a, b);
                    }
                }
            }
        }
        for e in &self.fixed {
            link(e.tail, e.head);
        }
        let closure = |adj: &[u64], start: u64| {
            let mut seen = start;
            let mut frontier = start;
            while frontier != 0 {
                let node = frontier.trailing_zeros() as usize;
                frontier &= frontier - 1;
                let next = adj[node] & !seen;
                seen |= next;
                frontier |= next;
            }
            seen
        };
        let head = self.external[self.external.len() - 1];
        let tails = self.external[..self.external.len() - 1].iter().fold(0u64, |m, &t| m | 1 << t);
        let fwd = closure(&fwd_adj, tails);
        let bwd = closure(&bwd_adj, 1 << head);
        fwd & bwd
    }

    pub fn all_nodes_mask(&self) -> u64 {
        if self.nodes >= 64 {
            u64::MAX
        } else {
            (1u64 << self.nodes) - 1
        }
    }

    /// Parses the token form used by `@operator` directives, e.g.
    /// `0>1 0>2 1>2` or `ext=0,5 0,0>1 fixed:1>5:id`.
    pub fn parse_spec(tokens: &[&str]) -> Result<Self, String> {
        let mut external: Option<Vec<usize>> = None;
        let mut slots = Vec::new();
        let mut fixed = Vec::new();
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("bad node index `{s}`"));
        for tok in tokens {
            if let Some(list) = tok.strip_prefix("ext=") {
                external = Some(list.split(',').map(num).collect::<Result<_, _>>()?);
            } else if let Some(rest) = tok.strip_prefix("fixed:") {
                let mut parts = rest.splitn(2, ':');
                let edge = parts.next().unwrap_or_default();
                let label = parts.next().ok_or_else(|| format!("fixed edge `{tok}` needs a label"))?;
                let (t, h) = edge.split_once('>').ok_or_else(|| format!("bad fixed edge `{tok}`"))?;
                fixed.push(FixedEdge { tail: num(t)?, head: num(h)?, label: label.to_string() });
            } else {
                let (tails, head) = tok.split_once('>').ok_or_else(|| format!("bad slot `{tok}`"))?;
                let mut slot: Vec<usize> = tails.split(',').map(num).collect::<Result<_, _>>()?;
                slot.push(num(head)?);
                slots.push(slot);
            }
        }
        let nodes = slots
            .iter()
            .flatten()
            .copied()
            .chain(fixed.iter().flat_map(|e: &FixedEdge| [e.tail, e.head]))
            .chain(external.iter().flatten().copied())
            .max()
            .map_or(0, |m| m + 1);
        if nodes == 0 {
            return Err("template has no edges".into());
        }
        let t = GraphTemplate {
            nodes,
            external: external.unwrap_or_else(|| vec![0, nodes - 1]),
            slots,
            fixed,
        };
        t.validate()?;
        Ok(t)
    }
}

impl fmt::Display for GraphTemplate {
    /// Inverse of [`GraphTemplate::parse_spec`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.external != [0, self.nodes - 1] {
            let ext: Vec<String> = self.external.iter().map(|n| n.to_string()).collect();
            parts.push(format!("ext={}", ext.join(",")));
        }
        for slot in &self.slots {
            let tails: Vec<String> = slot[..slot.len() - 1].iter().map(|n| n.to_string()).collect();
            parts.push(format!("{}>{}", tails.join(","), slot[slot.len() - 1]));
        }
        for e in &self.fixed {
            parts.push(format!("fixed:{}>{}:{}", e.tail, e.head, e.label));
        }
        write!(f, "{}", parts.join(" "))
    }
}
