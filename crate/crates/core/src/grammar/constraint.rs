use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use super::{ConstraintKind, Grammar};
use crate::assembly::{reach_connected, GraphTemplate, Reach, EDGE_REACH, ZERO};
use crate::term::{Node, NodeKind, Term};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintViolation {
    pub constraint: String,
    pub nonterminal: String,
    pub subterm: String,
}

impl fmt::Display for ConstraintViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} constraint on `{}` violated by `{}`", self.constraint, self.nonterminal, self.subterm)
    }
}

impl std::error::Error for ConstraintViolation {}

pub(crate) fn primitive_reach(name: &str) -> Reach {
    if name == ZERO {
        0
    } else {
        EDGE_REACH
    }
}

/// Whether a custom hook admits an operator whose slots carry `children`.
pub(crate) fn hook_admits(hook: &str, t: &GraphTemplate, children: &[Reach]) -> bool {
    match hook {
        "full_nodes" => t.covered_nodes(children) == t.all_nodes_mask(),
        _ => true,
    }
}

struct Checker<'a> {
    family: &'a Grammar,
    summaries: HashMap<Arc<str>, Reach>,
}

impl Checker<'_> {
    /// Summarizes `node` and checks per-node constraints of `g` on the way.
    fn visit(&self, node: &Node, g: &Grammar, counts: &mut [u32]) -> Result<Reach, ConstraintViolation> {
        let (reach, template, child_reaches) = match &node.kind {
            NodeKind::Primitive(name) => (primitive_reach(name), None, Vec::new()),
            NodeKind::Folded(_) => (EDGE_REACH, None, Vec::new()),
            NodeKind::Placeholder(name) => (self.summaries.get(name).copied().unwrap_or(EDGE_REACH), None, Vec::new()),
            NodeKind::Operator { name, children } => {
                let t = self.family.template_by_name(name).expect("operator has a template");
                let mut rs = Vec::with_capacity(children.len());
                for c in children {
                    rs.push(self.visit(c, g, counts)?);
                }
                (t.combine_reach(&rs), Some(t), rs)
            }
        };
        for step in &node.derivation {
            let Some(nt) = g.symbol_id(&step.nt) else { continue };
            for (ci, c) in g.constraints().iter().enumerate() {
                if !c.scope.contains(&nt) {
                    continue;
                }
                let ok = match &c.kind {
                    ConstraintKind::Connectivity => reach_connected(reach, g.rank(nt)),
                    ConstraintKind::DerivationCount(_) => {
                        counts[ci] += 1;
                        true
                    }
                    ConstraintKind::Custom(hook) => match template {
                        Some(t) => hook_admits(hook, t, &child_reaches),
                        None => true,
                    },
                };
                if !ok {
                    return Err(ConstraintViolation {
                        constraint: constraint_name(&c.kind),
                        nonterminal: step.nt.to_string(),
                        subterm: node.to_string(),
                    });
                }
            }
        }
        Ok(reach)
    }

    fn check_tree(&mut self, node: &Node, g: &Grammar) -> Result<Reach, ConstraintViolation> {
        let mut counts = vec![0u32; g.constraints().len()];
        let reach = self.visit(node, g, &mut counts)?;
        for (c, &n) in g.constraints().iter().zip(&counts) {
            if let ConstraintKind::DerivationCount(want) = c.kind {
                if n != want {
                    return Err(ConstraintViolation {
                        constraint: constraint_name(&c.kind),
                        nonterminal: c.scope.iter().map(|&id| g.name_of(id).to_string()).collect::<Vec<_>>().join(" "),
                        subterm: format!("{n} derivations"),
                    });
                }
            }
        }
        Ok(reach)
    }
}

pub(crate) fn constraint_name(kind: &ConstraintKind) -> String {
    match kind {
        ConstraintKind::Connectivity => "connectivity".into(),
        ConstraintKind::DerivationCount(n) => format!("derivations({n})"),
        ConstraintKind::Custom(h) => format!("custom({h})"),
    }
}

/// Checks every constraint of the grammar family against a term.
pub fn check_constraints(t: &Term, g: &Grammar) -> Result<(), ConstraintViolation> {
    let all = crate::term::family_bindings(g);
    let mut checker = Checker { family: g, summaries: HashMap::new() };
    for b in t.bindings.iter().rev() {
        let Some((_, binding)) = all.iter().find(|(m, bd)| *m.name_of(bd.placeholder) == b.name) else {
            continue;
        };
        let reach = checker.check_tree(&b.node, &binding.grammar)?;
        checker.summaries.insert(b.name.clone(), reach);
    }
    checker.check_tree(&t.root, g)?;
    Ok(())
}
