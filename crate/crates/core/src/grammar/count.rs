use num_bigint::BigUint;
use num_traits::{One, Zero};

use super::validate::{find_cycle, productive_set, reachable_set};
use super::{Grammar, Rhs, SymbolId, SymbolKind};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SpaceSize {
    Finite(BigUint),
    Infinite,
}

impl SpaceSize {
    pub fn log10(&self) -> Option<f64> {
        match self {
            SpaceSize::Finite(n) => Some(big_log10(n)),
            SpaceSize::Infinite => None,
        }
    }

    pub fn exact(&self) -> Option<&BigUint> {
        match self {
            SpaceSize::Finite(n) => Some(n),
            SpaceSize::Infinite => None,
        }
    }
}

pub(crate) fn big_log10(n: &BigUint) -> f64 {
    if n.is_zero() {
        return f64::NEG_INFINITY;
    }
    let digits = n.to_string();
    let head = &digits[..digits.len().min(17)];
    let mantissa: f64 = format!("0.{head}").parse().unwrap();
    digits.len() as f64 + mantissa.log10()
}

/// Number of distinct terminating derivations from the start symbol, ignoring
/// constraints. Every binding contributes the size of its sub-language once.
pub fn count_space(g: &Grammar) -> SpaceSize {
    count_from(g, g.start())
}

fn count_from(g: &Grammar, start: SymbolId) -> SpaceSize {
    // restrict cycle detection to what `start` can reach
    let rerooted;
    let view = if start == g.start() {
        g
    } else {
        let mut copy = g.clone();
        copy.start = start;
        rerooted = copy;
        &rerooted
    };
    if find_cycle(view).is_some() {
        return SpaceSize::Infinite;
    }
    let productive = productive_set(view);
    if !productive[start.index()] {
        return SpaceSize::Finite(BigUint::zero());
    }
    let useful = reachable_set(view, Some(&productive));
    let mut memo: Vec<Option<BigUint>> = vec![None; g.symbols().len()];
    let mut total = count_nt(g, start, &productive, &mut memo);

    for b in g.bindings() {
        let used = g.productions().iter().any(|p| {
            useful[p.lhs.index()]
                && match &p.rhs {
                    Rhs::Apply { args, .. } => args.contains(&b.placeholder),
                    Rhs::Terminal(t) => *t == b.placeholder,
                    Rhs::Unit(_) => false,
                }
        });
        if !used {
            continue;
        }
        match count_from(&b.grammar, b.start) {
            SpaceSize::Finite(n) => total *= n,
            SpaceSize::Infinite => return SpaceSize::Infinite,
        }
    }
    SpaceSize::Finite(total)
}

fn count_nt(g: &Grammar, nt: SymbolId, productive: &[bool], memo: &mut Vec<Option<BigUint>>) -> BigUint {
    if let Some(v) = &memo[nt.index()] {
        return v.clone();
    }
    let mut sum = BigUint::zero();
    for &pi in g.productions_of(nt) {
        let p = g.production(pi);
        if !super::validate::rhs_nonterminals(g, &p.rhs).all(|a| productive[a.index()]) {
            continue;
        }
        let term = match &p.rhs {
            Rhs::Apply { args, .. } => {
                let mut prod = BigUint::one();
                for &a in args {
                    if g.symbol(a).kind == SymbolKind::Nonterminal {
                        prod *= count_nt(g, a, productive, memo);
                    }
                }
                prod
            }
            Rhs::Terminal(_) => BigUint::one(),
            Rhs::Unit(b) => count_nt(g, *b, productive, memo),
        };
        sum += term;
    }
    memo[nt.index()] = Some(sum.clone());
    sum
}
