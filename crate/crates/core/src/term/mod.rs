//! Algebraic architecture terms as annotated derivation trees.

mod edit;
mod parse;

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::sync::Arc;

use serde_json::{json, Value};

pub use edit::Site;
pub(crate) use parse::family_bindings;
pub use parse::{parse_term, TermError};

/// One derivation step: production `production` (position among the
/// alternatives of `nt`) was applied.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Step {
    pub nt: Arc<str>,
    pub production: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Operator { name: Arc<str>, children: Vec<Node> },
    Primitive(Arc<str>),
    Placeholder(Arc<str>),
    /// Operator whose arguments were removed by a fold.
    Folded(Arc<str>),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Node {
    pub kind: NodeKind,
    /// Steps that produced this node, outermost first. Unit productions make
    /// chains longer than one; terminal arguments of an operator have none.
    pub derivation: Vec<Step>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BoundTerm {
    pub name: Arc<str>,
    pub node: Node,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Term {
    pub root: Node,
    pub bindings: Vec<BoundTerm>,
}

impl Node {
    pub fn leaf(kind: NodeKind) -> Self {
        Node { kind, derivation: Vec::new() }
    }

    pub fn name(&self) -> &Arc<str> {
        match &self.kind {
            NodeKind::Operator { name, .. } => name,
            NodeKind::Primitive(n) | NodeKind::Placeholder(n) | NodeKind::Folded(n) => n,
        }
    }

    pub fn children(&self) -> &[Node] {
        match &self.kind {
            NodeKind::Operator { children, .. } => children,
            _ => &[],
        }
    }

    /// Nonterminal whose production created this node directly.
    pub fn nt(&self) -> Option<&Arc<str>> {
        self.derivation.last().map(|s| &s.nt)
    }

    pub fn depth(&self) -> usize {
        1 + self.children().iter().map(Node::depth).max().unwrap_or(0)
    }

    pub fn size(&self) -> usize {
        1 + self.children().iter().map(Node::size).sum::<usize>()
    }

    pub fn write_to(&self, out: &mut String) {
        out.push_str(self.name());
        if let NodeKind::Operator { children, .. } = &self.kind {
            out.push('(');
            for (i, c) in children.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                c.write_to(out);
            }
            out.push(')');
        }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "op": &*self.name().to_string(),
            "nt": self.nt().map(|n| n.to_string()),
            "children": self.children().iter().map(Node::to_json).collect::<Vec<_>>(),
        })
    }

    pub fn get(&self, path: &[usize]) -> Option<&Node> {
        match path.split_first() {
            None => Some(self),
            Some((&i, rest)) => self.children().get(i)?.get(rest),
        }
    }

    pub(crate) fn get_mut(&mut self, path: &[usize]) -> Option<&mut Node> {
        match path.split_first() {
            None => Some(self),
            Some((&i, rest)) => match &mut self.kind {
                NodeKind::Operator { children, .. } => children.get_mut(i)?.get_mut(rest),
                _ => None,
            },
        }
    }

    fn truncate(&self, level: usize, l: usize) -> Node {
        match &self.kind {
            NodeKind::Operator { name, children } => {
                let kind = if level >= l {
                    NodeKind::Folded(name.clone())
                } else {
                    NodeKind::Operator {
                        name: name.clone(),
                        children: children.iter().map(|c| c.truncate(level + 1, l)).collect(),
                    }
                };
                Node { kind, derivation: self.derivation.clone() }
            }
            _ => self.clone(),
        }
    }

    /// Preorder walk with paths.
    pub fn walk<'a>(&'a self, path: &mut Vec<usize>, f: &mut dyn FnMut(&'a Node, &[usize])) {
        f(self, path);
        for (i, c) in self.children().iter().enumerate() {
            path.push(i);
            c.walk(path, f);
            path.pop();
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.write_to(&mut s);
        f.write_str(&s)
    }
}

impl Term {
    pub fn new(root: Node) -> Self {
        Term { root, bindings: Vec::new() }
    }

    pub fn binding(&self, name: &str) -> Option<&Node> {
        self.bindings.iter().find(|b| &*b.name == name).map(|b| &b.node)
    }

    /// Tree with every placeholder replaced by its bound sub-term.
    pub fn expanded(&self) -> Node {
        if self.bindings.is_empty() {
            return self.root.clone();
        }
        let table: HashMap<&str, &Node> = self.bindings.iter().map(|b| (&*b.name, &b.node)).collect();
        expand(&self.root, &table)
    }

    /// Number of levels of the expanded tree.
    pub fn depth(&self) -> usize {
        let depths = self.binding_depths();
        depth_with(&self.root, &depths)
    }

    /// Depth of each bound sub-term, including nested placeholders.
    pub fn binding_depths(&self) -> HashMap<Arc<str>, usize> {
        let mut out: HashMap<Arc<str>, usize> = HashMap::new();
        // bindings may only reference bindings listed after them
        for b in self.bindings.iter().rev() {
            let d = depth_with(&b.node, &out);
            out.insert(b.name.clone(), d);
        }
        out
    }

    /// Deepest level at which each binding's root appears in the expanded tree.
    pub fn binding_levels(&self) -> HashMap<Arc<str>, usize> {
        let mut out: HashMap<Arc<str>, usize> = HashMap::new();
        fn visit(node: &Node, level: usize, out: &mut HashMap<Arc<str>, usize>) {
            if let NodeKind::Placeholder(name) = &node.kind {
                let e = out.entry(name.clone()).or_insert(0);
                *e = (*e).max(level);
            }
            for c in node.children() {
                visit(c, level + 1, out);
            }
        }
        visit(&self.root, 1, &mut out);
        for b in &self.bindings {
            if let Some(&lvl) = out.get(&b.name) {
                visit(&b.node, lvl, &mut out);
            }
        }
        out
    }

    /// Fold operator: keeps levels `1..=l`, turning operators at level `l`
    /// into leaves. Returns the term unchanged when `l >= depth`.
    pub fn fold(&self, l: usize) -> Term {
        assert!(l >= 1, "fold level must be positive");
        if l >= self.depth() {
            return self.clone();
        }
        Term::new(self.expanded().truncate(1, l))
    }

    pub fn write_with(&self, sep: char) -> String {
        let mut s = String::new();
        self.root.write_to(&mut s);
        for b in &self.bindings {
            s.push(sep);
            let _ = write!(s, "{}=", b.name);
            b.node.write_to(&mut s);
        }
        s
    }

    /// Single-line key; equal keys iff equal terms (for terms of one grammar).
    pub fn canonical(&self) -> String {
        self.write_with(';')
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({ "root": self.root.to_json() });
        if !self.bindings.is_empty() {
            let b: serde_json::Map<String, Value> =
                self.bindings.iter().map(|b| (b.name.to_string(), b.node.to_json())).collect();
            v["bindings"] = Value::Object(b);
        }
        v
    }
}

impl fmt::Display for Term {
    /// Root on the first line, then one `name=term` line per binding.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.write_with('\n'))
    }
}

fn expand(node: &Node, table: &HashMap<&str, &Node>) -> Node {
    match &node.kind {
        NodeKind::Placeholder(name) => match table.get(&**name) {
            Some(bound) => {
                let mut out = expand(bound, table);
                let mut chain = node.derivation.clone();
                chain.append(&mut out.derivation);
                out.derivation = chain;
                out
            }
            None => node.clone(),
        },
        NodeKind::Operator { name, children } => Node {
            kind: NodeKind::Operator {
                name: name.clone(),
                children: children.iter().map(|c| expand(c, table)).collect(),
            },
            derivation: node.derivation.clone(),
        },
        _ => node.clone(),
    }
}

fn depth_with(node: &Node, depths: &HashMap<Arc<str>, usize>) -> usize {
    match &node.kind {
        NodeKind::Placeholder(name) => depths.get(name).copied().unwrap_or(1),
        NodeKind::Operator { children, .. } => 1 + children.iter().map(|c| depth_with(c, depths)).max().unwrap_or(0),
        _ => 1,
    }
}

#[cfg(test)]
mod tests;
