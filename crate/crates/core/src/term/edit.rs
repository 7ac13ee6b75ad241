use super::{Node, Term};

/// Location of a derivation step inside a term: a node (in the root tree or
/// in binding `binding`) and the index of the step in its derivation chain.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Site {
    pub binding: Option<usize>,
    pub path: Vec<usize>,
    pub step: usize,
}

impl Term {
    fn tree(&self, binding: Option<usize>) -> &Node {
        match binding {
            None => &self.root,
            Some(i) => &self.bindings[i].node,
        }
    }

    pub fn node_at(&self, site: &Site) -> Option<&Node> {
        if site.binding.is_some_and(|i| i >= self.bindings.len()) {
            return None;
        }
        self.tree(site.binding).get(&site.path)
    }

    /// Nonterminal of the step at `site`.
    pub fn site_nt(&self, site: &Site) -> Option<&str> {
        self.node_at(site)?.derivation.get(site.step).map(|s| &*s.nt)
    }

    /// Every site whose step expands nonterminal `nt`, in preorder (root tree
    /// first, then bindings in order).
    pub fn subterm_sites(&self, nt: &str) -> Vec<Site> {
        self.all_sites().into_iter().filter(|s| self.site_nt(s) == Some(nt)).collect()
    }

    /// Every derivation step of the term, in preorder.
    pub fn all_sites(&self) -> Vec<Site> {
        let mut out = Vec::new();
        let trees = std::iter::once(None).chain((0..self.bindings.len()).map(Some));
        for binding in trees {
            let mut path = Vec::new();
            self.tree(binding).walk(&mut path, &mut |node, p| {
                for step in 0..node.derivation.len() {
                    out.push(Site { binding, path: p.to_vec(), step });
                }
            });
        }
        out
    }

    /// Level of the node at `site` in the expanded tree (deepest occurrence
    /// for nodes inside bindings).
    pub fn site_level(&self, site: &Site) -> usize {
        let base = match site.binding {
            None => 1,
            Some(i) => self.binding_levels().get(&self.bindings[i].name).copied().unwrap_or(1),
        };
        base + site.path.len()
    }

    /// The sub-term derived from the site's nonterminal: the node with the
    /// derivation steps before `site.step` stripped.
    pub fn subterm(&self, site: &Site) -> Option<Node> {
        let mut node = self.node_at(site)?.clone();
        node.derivation.drain(..site.step);
        Some(node)
    }

    /// Replaces the sub-term at `site` by `replacement`, which must be derived
    /// from the same nonterminal. Steps above the site are kept.
    pub fn replace(&self, site: &Site, replacement: Node) -> Term {
        let mut out = self.clone();
        let tree = match site.binding {
            None => &mut out.root,
            Some(i) => &mut out.bindings[i].node,
        };
        let slot = tree.get_mut(&site.path).expect("site path out of range");
        let mut chain = slot.derivation[..site.step].to_vec();
        let mut node = replacement;
        chain.append(&mut node.derivation);
        node.derivation = chain;
        *slot = node;
        out
    }
}
