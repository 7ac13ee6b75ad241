use rand::seq::IndexedRandom;
use rand::Rng;

use crate::grammar::{check_constraints, Grammar, Sampler};
use crate::term::{family_bindings, Site, Term};

/// Attempts per operation before giving up.
pub const OPERATOR_ATTEMPTS: usize = 10;

/// Grammar that derives the tree a site lives in.
fn site_grammar<'a>(g: &'a Grammar, site: &Site) -> &'a Grammar {
    match site.binding {
        None => g,
        Some(i) => family_bindings(g)[i].1.grammar.as_ref(),
    }
}

fn valid(t: &Term, g: &Grammar, max_depth: usize) -> bool {
    t.depth() <= max_depth && check_constraints(t, g).is_ok()
}

/// Replaces one uniformly chosen sub-term by a fresh derivation from the
/// same nonterminal. Falls back to a new sample when no admissible
/// replacement turns up.
pub fn mutate<R: Rng + ?Sized>(t: &Term, sampler: &Sampler<'_>, rng: &mut R) -> Term {
    let g = sampler.grammar();
    let max_depth = sampler.max_depth();
    let sites = t.all_sites();
    let leaves = sampler.leaf_info(t);
    for _ in 0..OPERATOR_ATTEMPTS {
        let Some(site) = sites.choose(rng) else { break };
        let member = site_grammar(g, site);
        let Some(nt) = t.site_nt(site).and_then(|n| member.symbol_id(n)) else { continue };
        let budget = (max_depth + 1).saturating_sub(t.site_level(site));
        let Ok((node, _)) = sampler.sample_from(member, nt, budget, false, &leaves, rng) else { continue };
        let out = t.replace(site, node);
        if valid(&out, g, max_depth) {
            return out;
        }
    }
    sampler.sample(rng).unwrap_or_else(|_| t.clone())
}

/// Sites of `t` whose sub-terms may replace the one at `site` of a term
/// from the same grammar: same nonterminal in the same family member.
fn compatible(t: &Term, g: &Grammar, nt: &str, member: &Grammar) -> Vec<Site> {
    t.subterm_sites(nt)
        .into_iter()
        .filter(|s| std::ptr::eq(site_grammar(g, s), member) || site_grammar(g, s).name() == member.name())
        .collect()
}

/// Swaps sub-terms rooted at a shared nonterminal between two parents.
/// Returns the parents unchanged (and `false`) if no valid swap is found.
pub fn crossover<R: Rng + ?Sized>(a: &Term, b: &Term, sampler: &Sampler<'_>, rng: &mut R) -> (Term, Term, bool) {
    let g = sampler.grammar();
    let max_depth = sampler.max_depth();
    let sites = a.all_sites();
    for _ in 0..OPERATOR_ATTEMPTS {
        let Some(sa) = sites.choose(rng) else { break };
        let member = site_grammar(g, sa);
        let Some(nt) = a.site_nt(sa) else { continue };
        let partners = compatible(b, g, nt, member);
        let Some(sb) = partners.choose(rng) else { continue };
        let (Some(na), Some(nb)) = (a.subterm(sa), b.subterm(sb)) else { continue };
        let (ca, cb) = (a.replace(sa, nb), b.replace(sb, na));
        if valid(&ca, g, max_depth) && valid(&cb, g, max_depth) {
            return (ca, cb, true);
        }
    }
    (a.clone(), b.clone(), false)
}

fn overlaps(x: &Site, y: &Site) -> bool {
    x.binding == y.binding && (x.path.starts_with(&y.path) || y.path.starts_with(&x.path))
}

/// Swaps the sub-terms at two non-overlapping sites of one term.
pub fn swap_subterms(t: &Term, x: &Site, y: &Site) -> Option<Term> {
    if overlaps(x, y) || t.site_nt(x)? != t.site_nt(y)? {
        return None;
    }
    let (nx, ny) = (t.subterm(x)?, t.subterm(y)?);
    Some(t.replace(x, ny).replace(y, nx))
}

/// Swaps two sub-terms of a single term that share a nonterminal.
pub fn self_crossover<R: Rng + ?Sized>(t: &Term, sampler: &Sampler<'_>, rng: &mut R) -> (Term, bool) {
    let g = sampler.grammar();
    let sites = t.all_sites();
    for _ in 0..OPERATOR_ATTEMPTS {
        let Some(x) = sites.choose(rng) else { break };
        let Some(nt) = t.site_nt(x) else { continue };
        let member = site_grammar(g, x);
        let partners: Vec<Site> = compatible(t, g, nt, member).into_iter().filter(|y| !overlaps(x, y)).collect();
        let Some(y) = partners.choose(rng) else { continue };
        if let Some(out) = swap_subterms(t, x, y) {
            if valid(&out, g, sampler.max_depth()) {
                return (out, true);
            }
        }
    }
    (t.clone(), false)
}
