use std::ops::ControlFlow;

use super::validate::find_cycle;
use super::{check_constraints, Grammar, Rhs, SymbolId, SymbolKind};
use crate::term::{family_bindings, BoundTerm, Node, NodeKind, Step, Term};

/// Depth bound applied when enumerating an infinite language.
pub const DEFAULT_ENUMERATION_DEPTH: usize = 8;

#[derive(Clone, Debug)]
pub struct Enumeration {
    pub terms: Vec<Term>,
    /// Set when `limit` stopped the enumeration early.
    pub truncated: bool,
}

struct Walker<'g> {
    g: &'g Grammar,
}

type Sink<'a> = dyn FnMut(Node) -> ControlFlow<()> + 'a;

impl Walker<'_> {
    fn symbol(&self, sym: SymbolId, budget: usize, f: &mut Sink<'_>) -> ControlFlow<()> {
        if budget == 0 {
            return ControlFlow::Continue(());
        }
        let s = self.g.symbol(sym);
        match s.kind {
            SymbolKind::Nonterminal => self.nonterminal(sym, budget, f),
            SymbolKind::Placeholder => f(Node::leaf(NodeKind::Placeholder(s.name.clone()))),
            _ => f(Node::leaf(NodeKind::Primitive(s.name.clone()))),
        }
    }

    fn nonterminal(&self, nt: SymbolId, budget: usize, f: &mut Sink<'_>) -> ControlFlow<()> {
        let g = self.g;
        for (local, &pi) in g.productions_of(nt).iter().enumerate() {
            let step = Step { nt: g.name_of(nt).clone(), production: local as u32 };
            match &g.production(pi).rhs {
                Rhs::Terminal(t) => {
                    let mut leaf = None;
                    self.symbol(*t, budget, &mut |n| {
                        leaf = Some(n);
                        ControlFlow::Continue(())
                    })?;
                    if let Some(mut n) = leaf {
                        n.derivation.push(step);
                        f(n)?;
                    }
                }
                Rhs::Unit(b) => {
                    self.nonterminal(*b, budget, &mut |mut n| {
                        n.derivation.insert(0, step.clone());
                        f(n)
                    })?;
                }
                Rhs::Apply { op, args } => {
                    if budget < 2 {
                        continue;
                    }
                    let name = g.name_of(*op).clone();
                    let mut acc = Vec::with_capacity(args.len());
                    self.product(args, budget - 1, &mut acc, &mut |children| {
                        f(Node {
                            kind: NodeKind::Operator { name: name.clone(), children: children.to_vec() },
                            derivation: vec![step.clone()],
                        })
                    })?;
                }
            }
        }
        ControlFlow::Continue(())
    }

    fn product(
        &self,
        args: &[SymbolId],
        budget: usize,
        acc: &mut Vec<Node>,
        f: &mut dyn FnMut(&[Node]) -> ControlFlow<()>,
    ) -> ControlFlow<()> {
        if acc.len() == args.len() {
            return f(acc);
        }
        let sym = args[acc.len()];
        self.symbol(sym, budget, &mut |child| {
            acc.push(child);
            let r = self.product(args, budget, acc, f);
            acc.pop();
            r
        })
    }
}

fn all_nodes(g: &Grammar, start: SymbolId, depth: usize) -> Vec<Node> {
    let mut out = Vec::new();
    let _ = Walker { g }.nonterminal(start, depth, &mut |n| {
        out.push(n);
        ControlFlow::Continue(())
    });
    out
}

/// Constraint-satisfying derivations in lexicographic order of production
/// indices, at most `limit` of them. Infinite languages are cut at
/// [`DEFAULT_ENUMERATION_DEPTH`] levels.
pub fn enumerate_terms(g: &Grammar, limit: usize) -> Enumeration {
    let infinite = g.family().into_iter().any(|m| find_cycle(m).is_some());
    let depth = if infinite { DEFAULT_ENUMERATION_DEPTH } else { usize::MAX / 2 };
    enumerate_terms_to_depth(g, limit, depth)
}

pub fn enumerate_terms_to_depth(g: &Grammar, limit: usize, max_depth: usize) -> Enumeration {
    let bindings = family_bindings(g);
    let lists: Vec<Vec<Node>> = bindings.iter().map(|(_, b)| all_nodes(&b.grammar, b.start, max_depth)).collect();
    let names: Vec<_> = bindings.iter().map(|(m, b)| m.name_of(b.placeholder).clone()).collect();

    let mut terms = Vec::new();
    let mut truncated = false;
    let _ = Walker { g }.nonterminal(g.start(), max_depth, &mut |root| {
        let mut idx = vec![0usize; lists.len()];
        if lists.iter().any(|l| l.is_empty()) {
            return ControlFlow::Continue(());
        }
        loop {
            let t = Term {
                root: root.clone(),
                bindings: names
                    .iter()
                    .zip(&lists)
                    .zip(&idx)
                    .map(|((name, list), &i)| BoundTerm { name: name.clone(), node: list[i].clone() })
                    .collect(),
            };
            if t.depth() <= max_depth && check_constraints(&t, g).is_ok() {
                if terms.len() == limit {
                    truncated = true;
                    return ControlFlow::Break(());
                }
                terms.push(t);
            }
            // odometer over binding choices, last binding fastest
            let mut k = lists.len();
            loop {
                if k == 0 {
                    return ControlFlow::Continue(());
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < lists[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    });
    Enumeration { terms, truncated }
}
