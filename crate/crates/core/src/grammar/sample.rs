//! Depth-bounded, constraint-aware random derivations.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::constraint::{hook_admits, primitive_reach};
use super::{check_constraints, ConstraintKind, Grammar, Rhs, SymbolId, SymbolKind};
use crate::assembly::{full_reach, reach_connected, Reach, EDGE_REACH};
use crate::term::{family_bindings, BoundTerm, Node, NodeKind, Step, Term};

const HOOK_ATTEMPTS: usize = 50;
const CHILD_ATTEMPTS: usize = 20;
const TERM_ATTEMPTS: usize = 200;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum SampleError {
    #[error("no admissible production for `{nonterminal}` with {depth} levels remaining")]
    Unsatisfiable { nonterminal: String, depth: usize },
    #[error("no sample satisfied all constraints after {0} attempts")]
    Exhausted(usize),
}

/// Depth and reachability summary of a bound sub-term, as seen by the
/// grammar that uses its placeholder.
pub type LeafInfo = HashMap<Arc<str>, (usize, Reach)>;

/// Per-symbol feasibility tables for one grammar and one assignment of
/// placeholder sub-terms. `ok[s][d]`: `s` derives a valid tree with at most
/// `d` levels; `okc[s][d]`: additionally one that connects its ends.
#[derive(Debug)]
struct Tables {
    ok: Vec<Vec<bool>>,
    okc: Vec<Vec<bool>>,
    best: Vec<Reach>,
}

impl Tables {
    fn build(g: &Grammar, leaves: &LeafInfo, max_depth: usize) -> Tables {
        let n = g.symbols().len();
        let mut ok = vec![vec![false; max_depth + 1]; n];
        let mut okc = vec![vec![false; max_depth + 1]; n];
        let mut best = vec![0; n];
        for (i, s) in g.symbols().iter().enumerate() {
            let (depth, reach) = match s.kind {
                SymbolKind::Nonterminal | SymbolKind::Operator => continue,
                SymbolKind::Primitive => (1, primitive_reach(&s.name)),
                SymbolKind::Placeholder => leaves.get(&s.name).copied().unwrap_or((1, EDGE_REACH)),
            };
            best[i] = reach;
            for d in depth..=max_depth {
                ok[i][d] = true;
                okc[i][d] = reach_connected(reach, g.rank(SymbolId(i as u32)));
            }
        }
        for nt in g.nonterminals() {
            best[nt.index()] = full_reach(g.rank(nt));
        }
        for d in 1..=max_depth {
            loop {
                let mut changed = false;
                for nt in g.nonterminals() {
                    let scoped = g.has_connectivity(nt);
                    for &pi in g.productions_of(nt) {
                        let (a, c) = Self::production_ok(g, &g.production(pi).rhs, d, &ok, &okc, &best);
                        let a = if scoped { c } else { a };
                        if a && !ok[nt.index()][d] {
                            ok[nt.index()][d] = true;
                            changed = true;
                        }
                        if c && !okc[nt.index()][d] {
                            okc[nt.index()][d] = true;
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
        }
        Tables { ok, okc, best }
    }

    fn production_ok(
        g: &Grammar,
        rhs: &Rhs,
        d: usize,
        ok: &[Vec<bool>],
        okc: &[Vec<bool>],
        best: &[Reach],
    ) -> (bool, bool) {
        match rhs {
            Rhs::Terminal(t) | Rhs::Unit(t) => (ok[t.index()][d], okc[t.index()][d]),
            Rhs::Apply { op, args } => {
                if d < 2 || !args.iter().all(|a| ok[a.index()][d - 1]) {
                    return (false, false);
                }
                let t = g.template(*op).expect("operator template");
                let opt: Vec<Reach> =
                    args.iter().map(|a| if okc[a.index()][d - 1] { best[a.index()] } else { 0 }).collect();
                (true, reach_connected(t.combine_reach(&opt), t.rank()))
            }
        }
    }

    fn admissible(&self, g: &Grammar, rhs: &Rhs, d: usize, must: bool) -> bool {
        let (a, c) = Self::production_ok(g, rhs, d, &self.ok, &self.okc, &self.best);
        if must {
            c
        } else {
            a
        }
    }
}

/// Samples terms of one grammar family with a depth bound. Tables are built
/// lazily and cached, so one sampler should be reused across many samples.
pub struct Sampler<'g> {
    g: &'g Grammar,
    max_depth: usize,
    members: Vec<&'g Grammar>,
    cache: Mutex<HashMap<(usize, Vec<(usize, Reach)>), Arc<Tables>>>,
}

struct Ctx<'a, R: Rng + ?Sized> {
    g: &'a Grammar,
    tables: &'a Tables,
    rng: &'a mut R,
    counts: Vec<u32>,
}

impl<R: Rng + ?Sized> Ctx<'_, R> {
    fn choose(&mut self, weights: &[(usize, f64)]) -> usize {
        let total: f64 = weights.iter().map(|w| w.1).sum();
        let mut u = self.rng.random::<f64>() * total;
        for &(i, w) in weights {
            if u < w {
                return i;
            }
            u -= w;
        }
        weights[weights.len() - 1].0
    }

    fn symbol(&mut self, sym: SymbolId, budget: usize, must: bool) -> Result<(Node, Reach), SampleError> {
        let s = self.g.symbol(sym);
        match s.kind {
            SymbolKind::Nonterminal => self.nonterminal(sym, budget, must),
            SymbolKind::Placeholder => Ok((Node::leaf(NodeKind::Placeholder(s.name.clone())), self.tables.best[sym.index()])),
            _ => Ok((Node::leaf(NodeKind::Primitive(s.name.clone())), primitive_reach(&s.name))),
        }
    }

    fn unsatisfiable(&self, nt: SymbolId, budget: usize) -> SampleError {
        SampleError::Unsatisfiable { nonterminal: self.g.name_of(nt).to_string(), depth: budget }
    }

    fn nonterminal(&mut self, nt: SymbolId, budget: usize, must: bool) -> Result<(Node, Reach), SampleError> {
        let g = self.g;
        let must = must || g.has_connectivity(nt);
        let mut hooks = Vec::new();
        let mut counted = Vec::new();
        for (ci, c) in g.constraints().iter().enumerate() {
            if !c.scope.contains(&nt) {
                continue;
            }
            match &c.kind {
                ConstraintKind::Custom(h) => hooks.push(h.as_str()),
                ConstraintKind::DerivationCount(n) => counted.push((ci, *n)),
                ConstraintKind::Connectivity => {}
            }
        }
        if counted.iter().any(|&(ci, n)| self.counts[ci] >= n) {
            return Err(self.unsatisfiable(nt, budget));
        }
        let attempts = if hooks.is_empty() { 1 } else { HOOK_ATTEMPTS };
        let mut last_err = self.unsatisfiable(nt, budget);
        for _ in 0..attempts {
            let choices: Vec<(usize, f64)> = g
                .productions_of(nt)
                .iter()
                .enumerate()
                .filter(|(_, &pi)| self.tables.admissible(g, &g.production(pi).rhs, budget, must))
                .map(|(local, &pi)| (local, g.production(pi).weight))
                .collect();
            if choices.is_empty() {
                return Err(self.unsatisfiable(nt, budget));
            }
            let local = self.choose(&choices);
            let p = g.production(g.productions_of(nt)[local]);
            let step = Step { nt: g.name_of(nt).clone(), production: local as u32 };
            let saved = self.counts.clone();
            for &(ci, _) in &counted {
                self.counts[ci] += 1;
            }
            let result = match &p.rhs {
                Rhs::Terminal(t) => self.symbol(*t, budget, must).map(|(mut n, r)| {
                    n.derivation.insert(0, step);
                    (n, r)
                }),
                Rhs::Unit(b) => self.nonterminal(*b, budget, must).map(|(mut n, r)| {
                    n.derivation.insert(0, step);
                    (n, r)
                }),
                Rhs::Apply { op, args } => self.apply(*op, args, budget, must, &hooks).map(|(kind, r)| {
                    (Node { kind, derivation: vec![step] }, r)
                }),
            };
            match result {
                Ok(v) => return Ok(v),
                Err(e) => {
                    self.counts = saved;
                    last_err = e;
                }
            }
        }
        Err(last_err)
    }

    fn apply(
        &mut self,
        op: SymbolId,
        args: &[SymbolId],
        budget: usize,
        must: bool,
        hooks: &[&str],
    ) -> Result<(NodeKind, Reach), SampleError> {
        let g = self.g;
        let t = g.template(op).expect("operator template");
        let optimistic: Vec<Reach> = args
            .iter()
            .map(|a| if self.tables.okc[a.index()][budget - 1] { self.tables.best[a.index()] } else { 0 })
            .collect();
        let mut actual: Vec<Reach> = Vec::with_capacity(args.len());
        let mut children = Vec::with_capacity(args.len());
        for (i, &arg) in args.iter().enumerate() {
            let feasible = |actual: &[Reach], own: Reach| {
                let mut v = actual.to_vec();
                v.push(own);
                v.extend_from_slice(&optimistic[i + 1..]);
                reach_connected(t.combine_reach(&v), t.rank())
            };
            let need = must && !feasible(&actual, 0);
            let tries = if must && g.rank(arg) > 2 { CHILD_ATTEMPTS } else { 1 };
            let mut picked = None;
            for _ in 0..tries {
                let (child, r) = self.symbol(arg, budget - 1, need)?;
                if !must || feasible(&actual, r) {
                    picked = Some((child, r));
                    break;
                }
            }
            let Some((child, r)) = picked else {
                return Err(SampleError::Unsatisfiable { nonterminal: g.name_of(arg).to_string(), depth: budget - 1 });
            };
            children.push(child);
            actual.push(r);
        }
        let reach = t.combine_reach(&actual);
        if must && !reach_connected(reach, t.rank()) {
            return Err(SampleError::Unsatisfiable { nonterminal: g.name_of(op).to_string(), depth: budget });
        }
        if !hooks.iter().all(|h| hook_admits(h, t, &actual)) {
            return Err(SampleError::Unsatisfiable { nonterminal: g.name_of(op).to_string(), depth: budget });
        }
        Ok((NodeKind::Operator { name: g.name_of(op).clone(), children }, reach))
    }
}

/// Summary of a finished sub-tree, used to describe placeholders.
pub(crate) fn node_summary(node: &Node, g: &Grammar, leaves: &LeafInfo) -> (usize, Reach) {
    match &node.kind {
        NodeKind::Primitive(n) => (1, primitive_reach(n)),
        NodeKind::Folded(_) => (1, EDGE_REACH),
        NodeKind::Placeholder(n) => leaves.get(n).copied().unwrap_or((1, EDGE_REACH)),
        NodeKind::Operator { name, children } => {
            let t = g.template_by_name(name).expect("operator template");
            let mut depth = 0;
            let mut rs = Vec::with_capacity(children.len());
            for c in children {
                let (d, r) = node_summary(c, g, leaves);
                depth = depth.max(d);
                rs.push(r);
            }
            (depth + 1, t.combine_reach(&rs))
        }
    }
}

impl<'g> Sampler<'g> {
    pub fn new(g: &'g Grammar, max_depth: usize) -> Self {
        Sampler { g, max_depth, members: g.family(), cache: Mutex::new(HashMap::new()) }
    }

    pub fn grammar(&self) -> &'g Grammar {
        self.g
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    fn member_index(&self, g: &Grammar) -> usize {
        self.members.iter().position(|m| std::ptr::eq(*m, g)).expect("grammar belongs to the sampler's family")
    }

    fn tables(&self, g: &Grammar, leaves: &LeafInfo) -> Arc<Tables> {
        let key: Vec<(usize, Reach)> = g
            .bindings()
            .iter()
            .map(|b| leaves.get(g.name_of(b.placeholder)).copied().unwrap_or((1, EDGE_REACH)))
            .collect();
        let key = (self.member_index(g), key);
        let mut cache = self.cache.lock().unwrap();
        cache.entry(key).or_insert_with(|| Arc::new(Tables::build(g, leaves, self.max_depth))).clone()
    }

    /// Samples a sub-term of `g` (a member of this sampler's family) from
    /// nonterminal `nt` with at most `budget` levels.
    pub fn sample_from<R: Rng + ?Sized>(
        &self,
        g: &Grammar,
        nt: SymbolId,
        budget: usize,
        must_connect: bool,
        leaves: &LeafInfo,
        rng: &mut R,
    ) -> Result<(Node, Reach), SampleError> {
        let budget = budget.min(self.max_depth);
        if budget == 0 {
            return Err(SampleError::Unsatisfiable { nonterminal: g.name_of(nt).to_string(), depth: 0 });
        }
        let tables = self.tables(g, leaves);
        let mut ctx = Ctx { g, tables: &tables, rng, counts: vec![0; g.constraints().len()] };
        ctx.nonterminal(nt, budget, must_connect)
    }

    /// Minimal level at which each placeholder of `g` can occur.
    fn placeholder_levels(g: &Grammar) -> HashMap<Arc<str>, usize> {
        let mut level: Vec<usize> = vec![usize::MAX; g.symbols().len()];
        level[g.start().index()] = 1;
        loop {
            let mut changed = false;
            for p in g.productions() {
                let l = level[p.lhs.index()];
                if l == usize::MAX {
                    continue;
                }
                let mut relax = |s: SymbolId, v: usize| {
                    if v < level[s.index()] {
                        level[s.index()] = v;
                        changed = true;
                    }
                };
                match &p.rhs {
                    Rhs::Apply { args, .. } => args.iter().for_each(|&a| relax(a, l + 1)),
                    Rhs::Terminal(t) | Rhs::Unit(t) => relax(*t, l),
                }
            }
            if !changed {
                break;
            }
        }
        g.bindings()
            .iter()
            .map(|b| (g.name_of(b.placeholder).clone(), level[b.placeholder.index()].min(self::MAX_LEVEL)))
            .collect()
    }

    /// One constraint-satisfying term.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Term, SampleError> {
        let all = family_bindings(self.g);
        let mut last_err = SampleError::Exhausted(TERM_ATTEMPTS);
        'attempt: for _ in 0..TERM_ATTEMPTS {
            let mut leaves: LeafInfo = HashMap::new();
            let mut bound: Vec<Option<Node>> = vec![None; all.len()];
            // nested bindings come later in family order, so sample in reverse
            for (i, (member, b)) in all.iter().enumerate().rev() {
                let levels = Self::placeholder_levels(member);
                let name = member.name_of(b.placeholder).clone();
                let at = levels.get(&name).copied().unwrap_or(1);
                let outer = if std::ptr::eq(*member, self.g) { 0 } else { 1 };
                let budget = (self.max_depth + 1).saturating_sub(at + outer);
                match self.sample_from(&b.grammar, b.start, budget, false, &leaves, rng) {
                    Ok((node, _)) => {
                        let summary = node_summary(&node, &b.grammar, &leaves);
                        leaves.insert(name, summary);
                        bound[i] = Some(node);
                    }
                    Err(e) => {
                        last_err = e;
                        continue 'attempt;
                    }
                }
            }
            let root = match self.sample_from(self.g, self.g.start(), self.max_depth, false, &leaves, rng) {
                Ok((node, _)) => node,
                Err(e) => {
                    last_err = e;
                    continue;
                }
            };
            let term = Term {
                root,
                bindings: all
                    .iter()
                    .zip(bound)
                    .map(|((m, b), node)| BoundTerm { name: m.name_of(b.placeholder).clone(), node: node.unwrap() })
                    .collect(),
            };
            if term.depth() <= self.max_depth && check_constraints(&term, self.g).is_ok() {
                return Ok(term);
            }
            last_err = SampleError::Exhausted(TERM_ATTEMPTS);
        }
        Err(last_err)
    }

    /// Placeholder summaries of `t` as seen from grammar `g`.
    pub fn leaf_info(&self, t: &Term) -> LeafInfo {
        let all = family_bindings(self.g);
        let mut leaves = LeafInfo::new();
        for b in t.bindings.iter().rev() {
            if let Some((_, binding)) = all.iter().find(|(m, bd)| *m.name_of(bd.placeholder) == b.name) {
                let s = node_summary(&b.node, &binding.grammar, &leaves);
                leaves.insert(b.name.clone(), s);
            }
        }
        leaves
    }
}

const MAX_LEVEL: usize = 1 << 20;

/// [`Sampler::sample`] with a ChaCha8 stream seeded from `seed`.
pub fn sample_term(g: &Grammar, seed: u64, max_depth: usize) -> Result<Term, SampleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Sampler::new(g, max_depth).sample(&mut rng)
}

/// Minimal number of levels needed to derive a complete tree from each
/// nonterminal, ignoring constraints; `None` for unproductive ones.
pub fn min_termination_depths(g: &Grammar) -> Vec<(String, Option<usize>)> {
    fn compute(g: &Grammar) -> Vec<Option<usize>> {
        let n = g.symbols().len();
        let mut md: Vec<Option<usize>> = vec![None; n];
        for (i, s) in g.symbols().iter().enumerate() {
            md[i] = match s.kind {
                SymbolKind::Primitive | SymbolKind::Operator => Some(1),
                SymbolKind::Placeholder => g.binding(SymbolId(i as u32)).and_then(|b| compute(&b.grammar)[b.start.index()]),
                SymbolKind::Nonterminal => None,
            };
        }
        loop {
            let mut changed = false;
            for p in g.productions() {
                let v = match &p.rhs {
                    Rhs::Apply { args, .. } => args
                        .iter()
                        .map(|a| md[a.index()])
                        .try_fold(0usize, |m, d| d.map(|d| m.max(d)))
                        .map(|m| m + 1),
                    Rhs::Terminal(t) | Rhs::Unit(t) => md[t.index()],
                };
                if let Some(v) = v {
                    if md[p.lhs.index()].is_none_or(|cur| v < cur) {
                        md[p.lhs.index()] = Some(v);
                        changed = true;
                    }
                }
            }
            if !changed {
                return md;
            }
        }
    }
    let md = compute(g);
    g.nonterminals().map(|nt| (g.name_of(nt).to_string(), md[nt.index()])).collect()
}

/// Largest derivable depth for finite languages (with bound sub-terms
/// expanded); `None` if the language is infinite.
pub fn max_derivation_depth(g: &Grammar) -> Option<usize> {
    if g.family().into_iter().any(|m| super::validate::find_cycle(m).is_some()) {
        return None;
    }
    fn depth_of(g: &Grammar, sym: SymbolId, memo: &mut HashMap<SymbolId, usize>) -> usize {
        if let Some(&d) = memo.get(&sym) {
            return d;
        }
        let s = g.symbol(sym);
        let d = match s.kind {
            SymbolKind::Primitive | SymbolKind::Operator => 1,
            SymbolKind::Placeholder => g
                .binding(sym)
                .map(|b| depth_of(&b.grammar, b.start, &mut HashMap::new()))
                .unwrap_or(1),
            SymbolKind::Nonterminal => {
                let productive = super::validate::productive_set(g);
                let mut best = 0;
                for &pi in g.productions_of(sym) {
                    let rhs = &g.production(pi).rhs;
                    if !super::validate::rhs_nonterminals(g, rhs).all(|a| productive[a.index()]) {
                        continue;
                    }
                    let v = match rhs {
                        Rhs::Apply { args, .. } => 1 + args.iter().map(|&a| depth_of(g, a, memo)).max().unwrap_or(0),
                        Rhs::Terminal(t) | Rhs::Unit(t) => depth_of(g, *t, memo),
                    };
                    best = best.max(v);
                }
                best
            }
        };
        memo.insert(sym, d);
        d
    }
    Some(depth_of(g, g.start(), &mut HashMap::new()))
}

/// Depth bound used when none is given: the full depth of a finite language,
/// otherwise the minimal termination depth of the start symbol plus four.
pub fn default_max_depth(g: &Grammar) -> usize {
    if let Some(d) = max_derivation_depth(g) {
        return d.max(1);
    }
    let start = g.name_of(g.start()).to_string();
    let min = min_termination_depths(g)
        .into_iter()
        .find(|(n, _)| *n == start)
        .and_then(|(_, d)| d)
        .unwrap_or(1);
    min + 4
}
