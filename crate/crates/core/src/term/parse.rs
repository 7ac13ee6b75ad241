use std::sync::Arc;

use thiserror::Error;

use super::{BoundTerm, Node, NodeKind, Step, Term};
use crate::grammar::{Binding, Grammar, Rhs, SymbolId, SymbolKind};

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum TermError {
    #[error("syntax error at offset {offset}: {msg}")]
    Syntax { offset: usize, msg: String },
    #[error("term is not derivable: no derivation for `{subterm}`")]
    NotDerivable { subterm: String },
    #[error("placeholder `{0}` has no binding line")]
    MissingBinding(String),
    #[error("unknown or duplicate binding `{0}`")]
    UnknownBinding(String),
}

#[derive(Debug)]
struct Raw {
    name: String,
    children: Option<Vec<Raw>>,
}

impl Raw {
    fn render(&self) -> String {
        match &self.children {
            None => self.name.clone(),
            Some(cs) => format!("{}({})", self.name, cs.iter().map(Raw::render).collect::<Vec<_>>().join(",")),
        }
    }
}

struct Lexer<'a> {
    s: &'a [u8],
    pos: usize,
    base: usize,
}

fn ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-' | b'+') || b >= 0x80
}

impl Lexer<'_> {
    fn err(&self, msg: &str) -> TermError {
        TermError::Syntax { offset: self.base + self.pos, msg: msg.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn ident(&mut self) -> Result<String, TermError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len() && ident_byte(self.s[self.pos]) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected a name"));
        }
        Ok(String::from_utf8_lossy(&self.s[start..self.pos]).into_owned())
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn tree(&mut self) -> Result<Raw, TermError> {
        let name = self.ident()?;
        if self.peek() != Some(b'(') {
            return Ok(Raw { name, children: None });
        }
        self.pos += 1;
        let mut children = Vec::new();
        loop {
            children.push(self.tree()?);
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {
                    self.pos += 1;
                    break;
                }
                _ => return Err(self.err("expected `,` or `)`")),
            }
        }
        Ok(Raw { name, children: Some(children) })
    }
}

fn parse_raw(text: &str, base: usize) -> Result<Raw, TermError> {
    let mut lx = Lexer { s: text.as_bytes(), pos: 0, base };
    let t = lx.tree()?;
    if lx.peek().is_some() {
        return Err(lx.err("trailing input"));
    }
    Ok(t)
}

struct Deriver<'g> {
    g: &'g Grammar,
    deepest: Option<(usize, String)>,
}

impl Deriver<'_> {
    fn fail(&mut self, raw: &Raw, depth: usize) {
        if self.deepest.as_ref().is_none_or(|(d, _)| depth > *d) {
            self.deepest = Some((depth, raw.render()));
        }
    }

    fn derive_nt(&mut self, raw: &Raw, nt: SymbolId, depth: usize, chain: &mut Vec<SymbolId>) -> Option<Node> {
        let g = self.g;
        for (local, &pi) in g.productions_of(nt).iter().enumerate() {
            let step = Step { nt: g.name_of(nt).clone(), production: local as u32 };
            let p = g.production(pi);
            let node = match &p.rhs {
                Rhs::Apply { op, args } => {
                    let Some(children) = &raw.children else { continue };
                    if raw.name != **g.name_of(*op) || children.len() != args.len() {
                        continue;
                    }
                    let mut out = Vec::with_capacity(args.len());
                    for (child, &arg) in children.iter().zip(args) {
                        match self.derive_symbol(child, arg, depth + 1) {
                            Some(n) => out.push(n),
                            None => break,
                        }
                    }
                    if out.len() != args.len() {
                        continue;
                    }
                    Node {
                        kind: NodeKind::Operator { name: g.name_of(*op).clone(), children: out },
                        derivation: vec![step],
                    }
                }
                Rhs::Terminal(t) => {
                    let Some(mut leaf) = self.terminal_leaf(raw, *t) else { continue };
                    leaf.derivation.push(step);
                    leaf
                }
                Rhs::Unit(b) => {
                    if chain.contains(b) {
                        continue;
                    }
                    chain.push(*b);
                    let inner = self.derive_nt(raw, *b, depth, chain);
                    chain.pop();
                    let Some(mut inner) = inner else { continue };
                    inner.derivation.insert(0, step);
                    inner
                }
            };
            return Some(node);
        }
        self.fail(raw, depth);
        None
    }

    fn terminal_leaf(&self, raw: &Raw, t: SymbolId) -> Option<Node> {
        let sym = self.g.symbol(t);
        if raw.children.is_some() || raw.name != *sym.name {
            return None;
        }
        let kind = match sym.kind {
            SymbolKind::Placeholder => NodeKind::Placeholder(sym.name.clone()),
            _ => NodeKind::Primitive(sym.name.clone()),
        };
        Some(Node::leaf(kind))
    }

    fn derive_symbol(&mut self, raw: &Raw, sym: SymbolId, depth: usize) -> Option<Node> {
        if self.g.symbol(sym).kind == SymbolKind::Nonterminal {
            self.derive_nt(raw, sym, depth, &mut vec![sym])
        } else {
            let leaf = self.terminal_leaf(raw, sym);
            if leaf.is_none() {
                self.fail(raw, depth);
            }
            leaf
        }
    }
}

/// All bindings of the grammar family in canonical order.
pub(crate) fn family_bindings(g: &Grammar) -> Vec<(&Grammar, &Binding)> {
    let mut out = Vec::new();
    for member in g.family() {
        for b in member.bindings() {
            out.push((member, b));
        }
    }
    out
}

pub(crate) fn derive_from(g: &Grammar, start: SymbolId, text: &str, base: usize) -> Result<Node, TermError> {
    let raw = parse_raw(text, base)?;
    let mut d = Deriver { g, deepest: None };
    d.derive_nt(&raw, start, 0, &mut vec![start]).ok_or_else(|| TermError::NotDerivable {
        subterm: d.deepest.map(|(_, s)| s).unwrap_or_else(|| raw.render()),
    })
}

/// Parses a term string (root line plus optional `name=term` lines separated
/// by newlines or `;`) and recovers its derivation under `g`.
pub fn parse_term(text: &str, g: &Grammar) -> Result<Term, TermError> {
    let mut segments = Vec::new();
    let mut offset = 0;
    for seg in text.split(['\n', ';']) {
        if !seg.trim().is_empty() {
            segments.push((seg, offset));
        }
        offset += seg.len() + 1;
    }
    let Some(&(root_text, root_off)) = segments.first() else {
        return Err(TermError::Syntax { offset: 0, msg: "empty term".into() });
    };
    let root = derive_from(g, g.start(), root_text, root_off)?;

    let all = family_bindings(g);
    let mut found: Vec<Option<Node>> = vec![None; all.len()];
    for &(seg, off) in &segments[1..] {
        let (name, body) = seg
            .split_once('=')
            .ok_or_else(|| TermError::Syntax { offset: off, msg: "expected `name=term`".into() })?;
        let name = name.trim();
        let idx = all
            .iter()
            .position(|(member, b)| &**member.name_of(b.placeholder) == name)
            .filter(|&i| found[i].is_none())
            .ok_or_else(|| TermError::UnknownBinding(name.to_string()))?;
        let (_, b) = all[idx];
        found[idx] = Some(derive_from(&b.grammar, b.start, body, off + name.len() + 1)?);
    }

    let mut bindings = Vec::new();
    let mut missing = Vec::new();
    for ((member, b), node) in all.iter().zip(found) {
        let name: Arc<str> = member.name_of(b.placeholder).clone();
        match node {
            Some(node) => bindings.push(BoundTerm { name, node }),
            None => missing.push(name),
        }
    }
    for name in missing {
        if uses_placeholder(&root, &name) || bindings.iter().any(|b| uses_placeholder(&b.node, &name)) {
            return Err(TermError::MissingBinding(name.to_string()));
        }
    }
    Ok(Term { root, bindings })
}

fn uses_placeholder(node: &Node, name: &str) -> bool {
    match &node.kind {
        NodeKind::Placeholder(n) => &**n == name,
        NodeKind::Operator { children, .. } => children.iter().any(|c| uses_placeholder(c, name)),
        _ => false,
    }
}
