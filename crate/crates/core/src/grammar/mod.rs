//! Weighted context-free grammars whose derivations are architecture terms.

mod constraint;
mod count;
mod enumerate;
pub mod fixtures;
mod parse;
mod sample;
mod validate;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::sync::Arc;

use thiserror::Error;

use crate::assembly::GraphTemplate;

pub use constraint::{check_constraints, ConstraintViolation};
pub use count::{count_space, SpaceSize};
pub use enumerate::{enumerate_terms, enumerate_terms_to_depth, Enumeration, DEFAULT_ENUMERATION_DEPTH};
pub use parse::parse_grammar;
pub use sample::{
    default_max_depth, max_derivation_depth, min_termination_depths, sample_term, LeafInfo, SampleError, Sampler,
};
pub use validate::{validate_grammar, Diagnostic};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymbolId(pub u32);

impl SymbolId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SymbolKind {
    Nonterminal,
    Operator,
    Primitive,
    Placeholder,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Symbol {
    pub kind: SymbolKind,
    pub name: Arc<str>,
    pub arity: usize,
    pub attributes: BTreeMap<String, String>,
}

impl Symbol {
    pub fn is_terminal(&self) -> bool {
        self.kind != SymbolKind::Nonterminal
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Rhs {
    /// A topological operator applied to its arguments.
    Apply { op: SymbolId, args: Vec<SymbolId> },
    /// A single primitive or placeholder terminal.
    Terminal(SymbolId),
    /// A single nonterminal (`OP ::= BLOCK`).
    Unit(SymbolId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Production {
    pub lhs: SymbolId,
    pub rhs: Rhs,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConstraintKind {
    /// Every graph derived from a scoped nonterminal has an input-output path.
    Connectivity,
    /// Exactly `n` derivation steps from scoped nonterminals in a term.
    DerivationCount(u32),
    /// A named hook; see [`constraint_hook_names`].
    Custom(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintSpec {
    pub kind: ConstraintKind,
    pub scope: BTreeSet<SymbolId>,
}

/// Placeholder terminal substituted by one shared sub-term from another grammar.
#[derive(Clone, Debug, PartialEq)]
pub struct Binding {
    pub placeholder: SymbolId,
    pub grammar: Arc<Grammar>,
    pub start: SymbolId,
}

pub(crate) const CUSTOM_HOOKS: &[&str] = &["full_nodes"];

/// Names accepted by `@constraint custom(<name>)`.
pub fn constraint_hook_names() -> &'static [&'static str] {
    CUSTOM_HOOKS
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum GrammarError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("undefined nonterminal `{name}` at {line}:{col}")]
    UndefinedNonterminal { name: String, line: usize, col: usize },
    #[error("arity mismatch for `{name}`: {msg}")]
    ArityMismatch { name: String, msg: String },
    #[error("duplicate symbol `{name}`: {msg}")]
    DuplicateSymbol { name: String, msg: String },
    #[error("cyclic binding through grammar `{name}`")]
    CyclicBinding { name: String },
    #[error("operator `{name}` has no graph template")]
    MissingTemplate { name: String },
    #[error("invalid template for `{name}`: {msg}")]
    InvalidTemplate { name: String, msg: String },
    #[error("unknown grammar section `{name}`")]
    UnknownGrammar { name: String },
    #[error("invalid constraint: {msg}")]
    InvalidConstraint { msg: String },
}

#[derive(Clone, Debug)]
pub struct Grammar {
    name: String,
    symbols: Vec<Symbol>,
    lookup: HashMap<Arc<str>, SymbolId>,
    productions: Vec<Production>,
    by_lhs: Vec<Vec<usize>>,
    start: SymbolId,
    constraints: Vec<ConstraintSpec>,
    bindings: Vec<Binding>,
    templates: BTreeMap<SymbolId, GraphTemplate>,
    ranks: Vec<usize>,
}

impl PartialEq for Grammar {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.symbols == other.symbols
            && self.productions == other.productions
            && self.start == other.start
            && self.constraints == other.constraints
            && self.bindings == other.bindings
            && self.templates == other.templates
    }
}

impl Grammar {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn start(&self) -> SymbolId {
        self.start
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn symbol(&self, id: SymbolId) -> &Symbol {
        &self.symbols[id.index()]
    }

    pub fn name_of(&self, id: SymbolId) -> &Arc<str> {
        &self.symbols[id.index()].name
    }

    pub fn symbol_id(&self, name: &str) -> Option<SymbolId> {
        self.lookup.get(name).copied()
    }

    pub fn productions(&self) -> &[Production] {
        &self.productions
    }

    pub fn production(&self, index: usize) -> &Production {
        &self.productions[index]
    }

    /// Indices of the productions for `nt`, in source order.
    pub fn productions_of(&self, nt: SymbolId) -> &[usize] {
        &self.by_lhs[nt.index()]
    }

    /// Position of `production` among its lhs's alternatives.
    pub fn local_index(&self, production: usize) -> usize {
        let lhs = self.productions[production].lhs;
        self.by_lhs[lhs.index()].iter().position(|&p| p == production).unwrap()
    }

    pub fn nonterminals(&self) -> impl Iterator<Item = SymbolId> + '_ {
        self.ids().filter(|&id| self.symbol(id).kind == SymbolKind::Nonterminal)
    }

    pub fn terminals(&self) -> impl Iterator<Item = SymbolId> + '_ {
        self.ids().filter(|&id| self.symbol(id).is_terminal())
    }

    fn ids(&self) -> impl Iterator<Item = SymbolId> {
        (0..self.symbols.len() as u32).map(SymbolId)
    }

    pub fn constraints(&self) -> &[ConstraintSpec] {
        &self.constraints
    }

    pub fn bindings(&self) -> &[Binding] {
        &self.bindings
    }

    pub fn binding(&self, placeholder: SymbolId) -> Option<&Binding> {
        self.bindings.iter().find(|b| b.placeholder == placeholder)
    }

    pub fn binding_by_name(&self, name: &str) -> Option<&Binding> {
        self.symbol_id(name).and_then(|id| self.binding(id))
    }

    pub fn template(&self, op: SymbolId) -> Option<&GraphTemplate> {
        self.templates.get(&op)
    }

    /// Template for an operator name, searching this grammar and its bindings.
    pub fn template_by_name(&self, name: &str) -> Option<&GraphTemplate> {
        if let Some(id) = self.symbol_id(name) {
            if let Some(t) = self.templates.get(&id) {
                return Some(t);
            }
        }
        self.bindings.iter().find_map(|b| b.grammar.template_by_name(name))
    }

    /// Attributes of a terminal, searching this grammar and its bindings.
    pub fn attributes_by_name(&self, name: &str) -> Option<&BTreeMap<String, String>> {
        if let Some(id) = self.symbol_id(name) {
            let sym = self.symbol(id);
            if sym.kind != SymbolKind::Placeholder {
                return Some(&sym.attributes);
            }
        }
        self.bindings.iter().find_map(|b| b.grammar.attributes_by_name(name))
    }

    /// Number of external nodes of graphs derived from `id` (2 for ordinary edges).
    pub fn rank(&self, id: SymbolId) -> usize {
        self.ranks[id.index()]
    }

    pub fn has_connectivity(&self, nt: SymbolId) -> bool {
        self.constraints
            .iter()
            .any(|c| c.kind == ConstraintKind::Connectivity && c.scope.contains(&nt))
    }

    /// All grammars reachable through bindings, this one first, each once.
    pub fn family(&self) -> Vec<&Grammar> {
        let mut out: Vec<&Grammar> = vec![self];
        let mut i = 0;
        while i < out.len() {
            for b in &out[i].bindings {
                if !out.iter().any(|g| std::ptr::eq(*g, b.grammar.as_ref()) || g.name == b.grammar.name) {
                    out.push(b.grammar.as_ref());
                }
            }
            i += 1;
        }
        out
    }

    /// Text form accepted by [`parse_grammar`].
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, g) in self.family().into_iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            g.render_section(&mut out);
        }
        out
    }

    fn render_section(&self, out: &mut String) {
        let _ = writeln!(out, "@grammar {}", self.name);
        let first_lhs = self.productions.first().map(|p| p.lhs);
        if first_lhs != Some(self.start) {
            let _ = writeln!(out, "@start {}", self.name_of(self.start));
        }
        for (&op, t) in &self.templates {
            let sym = self.symbol(op);
            if GraphTemplate::builtin(&sym.name, sym.arity).as_ref() != Some(t) {
                let _ = writeln!(out, "@operator {} {}", sym.name, t);
            }
        }
        for sym in &self.symbols {
            if !sym.attributes.is_empty() {
                let kv: Vec<String> = sym.attributes.iter().map(|(k, v)| format!("{k}={v}")).collect();
                let _ = writeln!(out, "@attr {} {}", sym.name, kv.join(" "));
            }
        }
        for c in &self.constraints {
            let kind = match &c.kind {
                ConstraintKind::Connectivity => "connectivity".to_string(),
                ConstraintKind::DerivationCount(n) => format!("derivations({n})"),
                ConstraintKind::Custom(h) => format!("custom({h})"),
            };
            let scope: Vec<&str> = c.scope.iter().map(|&id| &*self.symbol(id).name).collect();
            let _ = writeln!(out, "@constraint {kind}: {}", scope.join(" "));
        }
        for b in &self.bindings {
            let _ = writeln!(
                out,
                "bind {} -> {}.{}",
                self.name_of(b.placeholder),
                b.grammar.name,
                b.grammar.name_of(b.start)
            );
        }
        let mut i = 0;
        while i < self.productions.len() {
            let lhs = self.productions[i].lhs;
            let mut alts = Vec::new();
            while i < self.productions.len() && self.productions[i].lhs == lhs {
                alts.push(self.render_alt(&self.productions[i]));
                i += 1;
            }
            let _ = writeln!(out, "{} ::= {}", self.name_of(lhs), alts.join(" | "));
        }
    }

    /// `LHS ::= alternative` for one production, without its weight.
    pub fn production_label(&self, production: usize) -> String {
        let p = &self.productions[production];
        let unweighted = Production { weight: 1.0, ..p.clone() };
        format!("{} ::= {}", self.name_of(p.lhs), self.render_alt(&unweighted))
    }

    fn render_alt(&self, p: &Production) -> String {
        let mut s = match &p.rhs {
            Rhs::Apply { op, args } => {
                let args: Vec<&str> = args.iter().map(|&a| &*self.symbol(a).name).collect();
                format!("{}({})", self.name_of(*op), args.join(", "))
            }
            Rhs::Terminal(t) | Rhs::Unit(t) => self.name_of(*t).to_string(),
        };
        if p.weight != 1.0 {
            let _ = write!(s, " [{}]", p.weight);
        }
        s
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Loose identifier test for nonterminal names: upper case letters, digits and `_`.
pub(crate) fn looks_like_nonterminal(name: &str) -> bool {
    name.chars().next().is_some_and(|c| c.is_ascii_uppercase())
        && name.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}
