use std::fmt;

use super::{Grammar, Rhs, SymbolId, SymbolKind};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Diagnostic {
    Unreachable { grammar: String, nonterminal: String },
    Unproductive { grammar: String, nonterminal: String },
    /// The language is infinite; `cycle` lists one recursive nonterminal cycle.
    InfiniteLanguage { grammar: String, cycle: Vec<String> },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::Unreachable { grammar, nonterminal } => {
                write!(f, "{grammar}: nonterminal `{nonterminal}` is unreachable from the start symbol")
            }
            Diagnostic::Unproductive { grammar, nonterminal } => {
                write!(f, "{grammar}: nonterminal `{nonterminal}` has no terminating derivation")
            }
            Diagnostic::InfiniteLanguage { grammar, cycle } => {
                write!(f, "{grammar}: language is infinite (cycle {})", cycle.join(" -> "))
            }
        }
    }
}

/// Nonterminals of a production's right-hand side.
pub(crate) fn rhs_nonterminals<'a>(g: &'a Grammar, rhs: &'a Rhs) -> impl Iterator<Item = SymbolId> + 'a {
    let ids: &[SymbolId] = match rhs {
        Rhs::Apply { args, .. } => args,
        Rhs::Terminal(t) | Rhs::Unit(t) => std::slice::from_ref(t),
    };
    ids.iter().copied().filter(move |&a| g.symbol(a).kind == SymbolKind::Nonterminal)
}

pub(crate) fn productive_set(g: &Grammar) -> Vec<bool> {
    let n = g.symbols().len();
    let mut productive: Vec<bool> = (0..n).map(|i| g.symbols()[i].is_terminal()).collect();
    loop {
        let mut changed = false;
        for p in g.productions() {
            if productive[p.lhs.index()] {
                continue;
            }
            if rhs_nonterminals(g, &p.rhs).all(|a| productive[a.index()]) {
                productive[p.lhs.index()] = true;
                changed = true;
            }
        }
        if !changed {
            return productive;
        }
    }
}

pub(crate) fn reachable_set(g: &Grammar, productive: Option<&[bool]>) -> Vec<bool> {
    let mut seen = vec![false; g.symbols().len()];
    let mut stack = vec![g.start()];
    seen[g.start().index()] = true;
    while let Some(nt) = stack.pop() {
        for &pi in g.productions_of(nt) {
            let p = g.production(pi);
            if let Some(prod) = productive {
                if !rhs_nonterminals(g, &p.rhs).all(|a| prod[a.index()]) {
                    continue;
                }
            }
            for a in rhs_nonterminals(g, &p.rhs) {
                if !seen[a.index()] {
                    seen[a.index()] = true;
                    stack.push(a);
                }
            }
        }
    }
    seen
}

/// A cycle among useful nonterminals (productive and reachable through
/// productive productions), if any.
pub(crate) fn find_cycle(g: &Grammar) -> Option<Vec<SymbolId>> {
    let productive = productive_set(g);
    let useful = reachable_set(g, Some(&productive));
    let n = g.symbols().len();
    let mut state = vec![0u8; n];
    let mut path = Vec::new();

    fn dfs(
        g: &Grammar,
        nt: SymbolId,
        productive: &[bool],
        useful: &[bool],
        state: &mut [u8],
        path: &mut Vec<SymbolId>,
    ) -> Option<Vec<SymbolId>> {
        state[nt.index()] = 1;
        path.push(nt);
        for &pi in g.productions_of(nt) {
            let p = g.production(pi);
            if !rhs_nonterminals(g, &p.rhs).all(|a| productive[a.index()]) {
                continue;
            }
            for a in rhs_nonterminals(g, &p.rhs) {
                if !useful[a.index()] {
                    continue;
                }
                match state[a.index()] {
                    1 => {
                        let at = path.iter().position(|&x| x == a).unwrap();
                        let mut cycle = path[at..].to_vec();
                        cycle.push(a);
                        return Some(cycle);
                    }
                    0 => {
                        if let Some(c) = dfs(g, a, productive, useful, state, path) {
                            return Some(c);
                        }
                    }
                    _ => {}
                }
            }
        }
        path.pop();
        state[nt.index()] = 2;
        None
    }

    if !productive[g.start().index()] {
        return None;
    }
    dfs(g, g.start(), &productive, &useful, &mut state, &mut path)
}

/// Reports unreachable and unproductive nonterminals and infinite languages
/// for the grammar and every grammar reachable through its bindings.
pub fn validate_grammar(g: &Grammar) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for member in g.family() {
        let name = member.name().to_string();
        let productive = productive_set(member);
        let reachable = reachable_set(member, None);
        for nt in member.nonterminals() {
            if !reachable[nt.index()] {
                out.push(Diagnostic::Unreachable { grammar: name.clone(), nonterminal: member.name_of(nt).to_string() });
            }
        }
        for nt in member.nonterminals() {
            if !productive[nt.index()] {
                out.push(Diagnostic::Unproductive { grammar: name.clone(), nonterminal: member.name_of(nt).to_string() });
            }
        }
        if let Some(cycle) = find_cycle(member) {
            out.push(Diagnostic::InfiniteLanguage {
                grammar: name,
                cycle: cycle.iter().map(|&id| member.name_of(id).to_string()).collect(),
            });
        }
    }
    out
}
