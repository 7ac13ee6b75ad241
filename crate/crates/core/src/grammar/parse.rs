//! Grammar text format.
//!
//! ```text
//! # comment
//! @grammar macro
//! @start D2
//! @operator Block 0>1 1>2 2>3
//! @attr down stride=2
//! @constraint connectivity: D2 D1
//! bind x1 -> cell.CL
//! D2 ::= Linear3(D1, D1, D0) | Linear4(D1, D1, D0, D0) [2]
//!      | Linear3(D0, D1, D1)
//! OP ::= zero | id ; ACT ::= relu
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use super::{
    looks_like_nonterminal, Binding, ConstraintKind, ConstraintSpec, Grammar, GrammarError, Production,
    Rhs, Symbol, SymbolId, SymbolKind, CUSTOM_HOOKS,
};
use crate::assembly::GraphTemplate;

type Pos = (usize, usize);

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Def,
    Bar,
    LParen,
    RParen,
    Comma,
    Semi,
    Weight(f64),
}

fn syntax(pos: Pos, msg: impl Into<String>) -> GrammarError {
    GrammarError::Syntax { line: pos.0, col: pos.1, msg: msg.into() }
}

fn ident_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '.' | '-' | '+')
}

fn lex_line(line: &str, lineno: usize, out: &mut Vec<(Tok, Pos)>) -> Result<(), GrammarError> {
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = (lineno, i + 1);
        match c {
            '#' => break,
            c if c.is_whitespace() => i += 1,
            '|' => {
                out.push((Tok::Bar, pos));
                i += 1;
            }
            '(' => {
                out.push((Tok::LParen, pos));
                i += 1;
            }
            ')' => {
                out.push((Tok::RParen, pos));
                i += 1;
            }
            ',' => {
                out.push((Tok::Comma, pos));
                i += 1;
            }
            ';' => {
                out.push((Tok::Semi, pos));
                i += 1;
            }
            ':' => {
                if chars.get(i + 1) == Some(&':') && chars.get(i + 2) == Some(&'=') {
                    out.push((Tok::Def, pos));
                    i += 3;
                } else {
                    return Err(syntax(pos, "expected `::=`"));
                }
            }
            '[' => {
                let close = chars[i..].iter().position(|&c| c == ']').ok_or_else(|| syntax(pos, "unclosed `[`"))?;
                let body: String = chars[i + 1..i + close].iter().collect();
                let w: f64 = body.trim().parse().map_err(|_| syntax(pos, format!("bad weight `{body}`")))?;
                if !(w.is_finite() && w > 0.0) {
                    return Err(syntax(pos, "weights must be positive"));
                }
                out.push((Tok::Weight(w), pos));
                i += close + 1;
            }
            c if ident_char(c) => {
                let start = i;
                while i < chars.len() && ident_char(chars[i]) {
                    i += 1;
                }
                out.push((Tok::Ident(chars[start..i].iter().collect()), pos));
            }
            other => return Err(syntax(pos, format!("unexpected character `{other}`"))),
        }
    }
    Ok(())
}

#[derive(Debug)]
struct RawAlt {
    head: (String, Pos),
    args: Option<Vec<(String, Pos)>>,
    weight: f64,
}

#[derive(Debug)]
struct RawRule {
    lhs: (String, Pos),
    alts: Vec<RawAlt>,
}

#[derive(Debug, Default)]
struct RawSection {
    name: String,
    pos: Pos,
    start: Option<(String, Pos)>,
    rules: Vec<RawRule>,
    operators: Vec<(String, Vec<String>, Pos)>,
    attrs: Vec<(String, Vec<(String, String)>, Pos)>,
    constraints: Vec<(ConstraintKind, Vec<String>, Pos)>,
    binds: Vec<(String, String, String, Pos)>,
}

fn parse_rule(toks: &[(Tok, Pos)]) -> Result<RawRule, GrammarError> {
    let mut it = toks.iter().peekable();
    let lhs = match it.next() {
        Some((Tok::Ident(name), pos)) => (name.clone(), *pos),
        Some((_, pos)) => return Err(syntax(*pos, "expected a nonterminal")),
        None => unreachable!("empty statements are skipped"),
    };
    match it.next() {
        Some((Tok::Def, _)) => {}
        Some((_, pos)) => return Err(syntax(*pos, "expected `::=`")),
        None => return Err(syntax(lhs.1, "expected `::=` after nonterminal")),
    }
    let mut alts = Vec::new();
    loop {
        let head = match it.next() {
            Some((Tok::Ident(name), pos)) => (name.clone(), *pos),
            Some((_, pos)) => return Err(syntax(*pos, "expected a symbol")),
            None => {
                let pos = toks.last().map(|t| t.1).unwrap_or(lhs.1);
                return Err(syntax(pos, "expected a symbol"));
            }
        };
        let mut args = None;
        if matches!(it.peek(), Some((Tok::LParen, _))) {
            it.next();
            let mut list = Vec::new();
            loop {
                match it.next() {
                    Some((Tok::Ident(name), pos)) => list.push((name.clone(), *pos)),
                    Some((_, pos)) => return Err(syntax(*pos, "expected an argument")),
                    None => return Err(syntax(head.1, "unclosed `(`")),
                }
                match it.next() {
                    Some((Tok::Comma, _)) => {}
                    Some((Tok::RParen, _)) => break,
                    Some((_, pos)) => return Err(syntax(*pos, "expected `,` or `)`")),
                    None => return Err(syntax(head.1, "unclosed `(`")),
                }
            }
            args = Some(list);
        }
        let mut weight = 1.0;
        if let Some((Tok::Weight(w), _)) = it.peek() {
            weight = *w;
            it.next();
        }
        alts.push(RawAlt { head, args, weight });
        match it.next() {
            Some((Tok::Bar, _)) => {}
            None => break,
            Some((_, pos)) => return Err(syntax(*pos, "expected `|` or end of rule")),
        }
    }
    Ok(RawRule { lhs, alts })
}

fn parse_directive(line: &str, lineno: usize, col: usize, sections: &mut Vec<RawSection>) -> Result<(), GrammarError> {
    let pos = (lineno, col);
    let mut words = line.split_whitespace();
    let head = words.next().unwrap_or_default();
    let rest: Vec<&str> = words.collect();
    if head == "@grammar" {
        let [name] = rest[..] else {
            return Err(syntax(pos, "expected `@grammar NAME`"));
        };
        if sections.len() == 1 && sections[0].rules.is_empty() && sections[0].name.is_empty() {
            sections[0].name = name.to_string();
            sections[0].pos = pos;
        } else {
            sections.push(RawSection { name: name.to_string(), pos, ..Default::default() });
        }
        return Ok(());
    }
    let sec = sections.last_mut().unwrap();
    match head {
        "@start" => {
            let [name] = rest[..] else {
                return Err(syntax(pos, "expected `@start NONTERMINAL`"));
            };
            sec.start = Some((name.to_string(), pos));
        }
        "@operator" => {
            let Some((name, spec)) = rest.split_first() else {
                return Err(syntax(pos, "expected `@operator NAME SLOTS...`"));
            };
            sec.operators.push((name.to_string(), spec.iter().map(|s| s.to_string()).collect(), pos));
        }
        "@attr" => {
            let Some((name, kvs)) = rest.split_first() else {
                return Err(syntax(pos, "expected `@attr NAME key=value...`"));
            };
            let mut pairs = Vec::new();
            for kv in kvs {
                let (k, v) = kv.split_once('=').ok_or_else(|| syntax(pos, format!("expected key=value, got `{kv}`")))?;
                pairs.push((k.to_string(), v.to_string()));
            }
            sec.attrs.push((name.to_string(), pairs, pos));
        }
        "@constraint" => {
            let body = line.trim_start()["@constraint".len()..].trim();
            let (kind, scope) = body.split_once(':').ok_or_else(|| syntax(pos, "expected `@constraint KIND: NT...`"))?;
            let kind = kind.trim();
            let parsed = if kind == "connectivity" {
                ConstraintKind::Connectivity
            } else if let Some(n) = kind.strip_prefix("derivations(").and_then(|s| s.strip_suffix(')')) {
                let n: u32 = n.trim().parse().map_err(|_| syntax(pos, "bad derivation count"))?;
                if n == 0 {
                    return Err(GrammarError::InvalidConstraint { msg: "derivation count must be at least 1".into() });
                }
                ConstraintKind::DerivationCount(n)
            } else if let Some(h) = kind.strip_prefix("custom(").and_then(|s| s.strip_suffix(')')) {
                let h = h.trim();
                if !CUSTOM_HOOKS.contains(&h) {
                    return Err(GrammarError::InvalidConstraint { msg: format!("unknown hook `{h}`") });
                }
                ConstraintKind::Custom(h.to_string())
            } else {
                return Err(syntax(pos, format!("unknown constraint kind `{kind}`")));
            };
            let names = scope.split_whitespace().map(|s| s.to_string()).collect();
            sec.constraints.push((parsed, names, pos));
        }
        _ => return Err(syntax(pos, format!("unknown directive `{head}`"))),
    }
    Ok(())
}

fn parse_bind(line: &str, lineno: usize, col: usize, sec: &mut RawSection) -> Result<(), GrammarError> {
    let pos = (lineno, col);
    let body = line.trim_start()["bind".len()..].trim();
    let (name, target) = body.split_once("->").ok_or_else(|| syntax(pos, "expected `bind NAME -> GRAMMAR.NT`"))?;
    let (gname, nt) = target.trim().rsplit_once('.').ok_or_else(|| syntax(pos, "expected `GRAMMAR.NT` after `->`"))?;
    let name = name.trim();
    if name.is_empty() || !name.chars().all(ident_char) {
        return Err(syntax(pos, "bad placeholder name"));
    }
    sec.binds.push((name.to_string(), gname.trim().to_string(), nt.trim().to_string(), pos));
    Ok(())
}

fn split_sections(text: &str) -> Result<Vec<RawSection>, GrammarError> {
    let mut sections = vec![RawSection::default()];
    let mut pending: Vec<(Tok, Pos)> = Vec::new();

    fn flush(pending: &mut Vec<(Tok, Pos)>, sec: &mut RawSection) -> Result<(), GrammarError> {
        for stmt in pending.split(|(t, _)| *t == Tok::Semi) {
            if !stmt.is_empty() {
                sec.rules.push(parse_rule(stmt)?);
            }
        }
        pending.clear();
        Ok(())
    }

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let trimmed = raw.trim_start();
        let col = raw.len() - trimmed.len() + 1;
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let is_bind = trimmed.starts_with("bind ") || trimmed.starts_with("bind\t");
        if trimmed.starts_with('@') || is_bind {
            flush(&mut pending, sections.last_mut().unwrap())?;
            let content = trimmed.split('#').next().unwrap_or_default().trim_end();
            if is_bind {
                parse_bind(content, lineno, col, sections.last_mut().unwrap())?;
            } else {
                parse_directive(content, lineno, col, &mut sections)?;
            }
            continue;
        }
        let mut toks = Vec::new();
        lex_line(raw, lineno, &mut toks)?;
        if toks.is_empty() {
            continue;
        }
        if toks[0].0 != Tok::Bar {
            flush(&mut pending, sections.last_mut().unwrap())?;
        } else if pending.is_empty() {
            return Err(syntax(toks[0].1, "continuation line without a rule"));
        }
        pending.extend(toks);
    }
    flush(&mut pending, sections.last_mut().unwrap())?;
    if sections[0].name.is_empty() {
        sections[0].name = "main".into();
    }
    Ok(sections)
}

/// Parses a grammar file. The first section is the main grammar; later
/// sections are only reachable through `bind` lines.
pub fn parse_grammar(text: &str) -> Result<Grammar, GrammarError> {
    let sections = split_sections(text)?;
    let mut seen = HashSet::new();
    for s in &sections {
        if !seen.insert(s.name.as_str()) {
            return Err(GrammarError::DuplicateSymbol { name: s.name.clone(), msg: "grammar section defined twice".into() });
        }
        if s.rules.is_empty() {
            return Err(syntax(s.pos, format!("grammar `{}` has no rules", s.name)));
        }
    }
    let by_name: HashMap<&str, &RawSection> = sections.iter().map(|s| (s.name.as_str(), s)).collect();
    let mut built: HashMap<String, Arc<Grammar>> = HashMap::new();
    let mut stack = Vec::new();
    for s in &sections {
        build(&s.name, &by_name, &mut built, &mut stack)?;
    }
    let main = built.remove(&sections[0].name).unwrap();
    let main = Arc::try_unwrap(main).unwrap_or_else(|arc| (*arc).clone());
    check_family_templates(&main)?;
    Ok(main)
}

fn build(
    name: &str,
    sections: &HashMap<&str, &RawSection>,
    built: &mut HashMap<String, Arc<Grammar>>,
    stack: &mut Vec<String>,
) -> Result<Arc<Grammar>, GrammarError> {
    if let Some(g) = built.get(name) {
        return Ok(g.clone());
    }
    if stack.iter().any(|s| s == name) {
        return Err(GrammarError::CyclicBinding { name: name.to_string() });
    }
    let sec = *sections.get(name).ok_or_else(|| GrammarError::UnknownGrammar { name: name.to_string() })?;
    stack.push(name.to_string());
    let mut subs = Vec::new();
    for (_, gname, _, _) in &sec.binds {
        subs.push(build(gname, sections, built, stack)?);
    }
    stack.pop();
    let g = Arc::new(build_section(sec, subs)?);
    built.insert(name.to_string(), g.clone());
    Ok(g)
}

fn build_section(sec: &RawSection, subs: Vec<Arc<Grammar>>) -> Result<Grammar, GrammarError> {
    let defined: HashMap<&str, Pos> = {
        let mut m = HashMap::new();
        for r in &sec.rules {
            m.entry(r.lhs.0.as_str()).or_insert(r.lhs.1);
        }
        m
    };
    let mut bound: HashMap<&str, usize> = HashMap::new();
    for (i, (name, _, _, _)) in sec.binds.iter().enumerate() {
        if bound.insert(name.as_str(), i).is_some() {
            return Err(GrammarError::DuplicateSymbol { name: name.clone(), msg: "bound twice".into() });
        }
        if defined.contains_key(name.as_str()) {
            return Err(GrammarError::DuplicateSymbol {
                name: name.clone(),
                msg: "used as both placeholder and nonterminal".into(),
            });
        }
    }
    let mut operators: HashMap<&str, usize> = HashMap::new();
    for r in &sec.rules {
        for alt in &r.alts {
            if let Some(args) = &alt.args {
                let name = alt.head.0.as_str();
                if let Some(&prev) = operators.get(name) {
                    if prev != args.len() {
                        return Err(GrammarError::ArityMismatch {
                            name: name.to_string(),
                            msg: format!("used with {prev} and {} arguments", args.len()),
                        });
                    }
                }
                operators.insert(name, args.len());
                if defined.contains_key(name) || bound.contains_key(name) {
                    return Err(GrammarError::DuplicateSymbol {
                        name: name.to_string(),
                        msg: "used as both operator and another kind of symbol".into(),
                    });
                }
            }
        }
    }

    let mut symbols: Vec<Symbol> = Vec::new();
    let mut lookup: HashMap<Arc<str>, SymbolId> = HashMap::new();
    let mut intern = |name: &str, kind: SymbolKind, arity: usize| -> SymbolId {
        if let Some(&id) = lookup.get(name) {
            return id;
        }
        let id = SymbolId(symbols.len() as u32);
        let name: Arc<str> = Arc::from(name);
        symbols.push(Symbol { kind, name: name.clone(), arity, attributes: BTreeMap::new() });
        lookup.insert(name, id);
        id
    };
    let classify = |name: &str, pos: Pos| -> Result<SymbolKind, GrammarError> {
        if defined.contains_key(name) {
            Ok(SymbolKind::Nonterminal)
        } else if bound.contains_key(name) {
            Ok(SymbolKind::Placeholder)
        } else if operators.contains_key(name) {
            Err(GrammarError::DuplicateSymbol {
                name: name.to_string(),
                msg: "operator used without arguments".into(),
            })
        } else if looks_like_nonterminal(name) {
            Err(GrammarError::UndefinedNonterminal { name: name.to_string(), line: pos.0, col: pos.1 })
        } else {
            Ok(SymbolKind::Primitive)
        }
    };

    let mut productions = Vec::new();
    for r in &sec.rules {
        let lhs = intern(&r.lhs.0, SymbolKind::Nonterminal, 0);
        for alt in &r.alts {
            let rhs = match &alt.args {
                Some(args) => {
                    let op = intern(&alt.head.0, SymbolKind::Operator, args.len());
                    let mut ids = Vec::with_capacity(args.len());
                    for (a, pos) in args {
                        let kind = classify(a, *pos)?;
                        ids.push(intern(a, kind, 0));
                    }
                    Rhs::Apply { op, args: ids }
                }
                None => {
                    let kind = classify(&alt.head.0, alt.head.1)?;
                    let id = intern(&alt.head.0, kind, 0);
                    if kind == SymbolKind::Nonterminal {
                        Rhs::Unit(id)
                    } else {
                        Rhs::Terminal(id)
                    }
                }
            };
            productions.push(Production { lhs, rhs, weight: alt.weight });
        }
    }
    for (name, _, _, _) in &sec.binds {
        intern(name, SymbolKind::Placeholder, 0);
    }

    let start = match &sec.start {
        Some((name, pos)) => match lookup.get(name.as_str()) {
            Some(&id) if symbols[id.index()].kind == SymbolKind::Nonterminal => id,
            _ => return Err(GrammarError::UndefinedNonterminal { name: name.clone(), line: pos.0, col: pos.1 }),
        },
        None => productions[0].lhs,
    };

    let mut templates = BTreeMap::new();
    let declared: HashMap<&str, (&Vec<String>, Pos)> =
        sec.operators.iter().map(|(n, spec, pos)| (n.as_str(), (spec, *pos))).collect();
    for (i, sym) in symbols.iter().enumerate() {
        if sym.kind != SymbolKind::Operator {
            continue;
        }
        let t = match declared.get(&*sym.name) {
            Some((spec, _)) => {
                let toks: Vec<&str> = spec.iter().map(|s| s.as_str()).collect();
                let t = GraphTemplate::parse_spec(&toks)
                    .map_err(|msg| GrammarError::InvalidTemplate { name: sym.name.to_string(), msg })?;
                if t.arity() != sym.arity {
                    return Err(GrammarError::ArityMismatch {
                        name: sym.name.to_string(),
                        msg: format!("template has {} slots but is applied to {} arguments", t.arity(), sym.arity),
                    });
                }
                t
            }
            None => GraphTemplate::builtin(&sym.name, sym.arity)
                .ok_or_else(|| GrammarError::MissingTemplate { name: sym.name.to_string() })?,
        };
        templates.insert(SymbolId(i as u32), t);
    }

    for (name, pairs, pos) in &sec.attrs {
        let id = lookup
            .get(name.as_str())
            .copied()
            .filter(|id| matches!(symbols[id.index()].kind, SymbolKind::Primitive | SymbolKind::Operator))
            .ok_or_else(|| syntax(*pos, format!("`@attr` names unknown terminal `{name}`")))?;
        for (k, v) in pairs {
            symbols[id.index()].attributes.insert(k.clone(), v.clone());
        }
    }

    let mut constraints = Vec::new();
    for (kind, names, pos) in &sec.constraints {
        let mut scope = BTreeSet::new();
        for n in names {
            if n == "*" {
                scope.extend(
                    (0..symbols.len()).filter(|&i| symbols[i].kind == SymbolKind::Nonterminal).map(|i| SymbolId(i as u32)),
                );
                continue;
            }
            match lookup.get(n.as_str()) {
                Some(&id) if symbols[id.index()].kind == SymbolKind::Nonterminal => {
                    scope.insert(id);
                }
                _ => return Err(GrammarError::UndefinedNonterminal { name: n.clone(), line: pos.0, col: pos.1 }),
            }
        }
        if scope.is_empty() {
            return Err(GrammarError::InvalidConstraint { msg: format!("constraint at line {} has an empty scope", pos.0) });
        }
        constraints.push(ConstraintSpec { kind: kind.clone(), scope });
    }

    let mut bindings = Vec::new();
    for ((name, gname, nt, pos), sub) in sec.binds.iter().zip(subs) {
        let start = sub
            .symbol_id(nt)
            .filter(|&id| sub.symbol(id).kind == SymbolKind::Nonterminal)
            .ok_or_else(|| GrammarError::UndefinedNonterminal {
                name: format!("{gname}.{nt}"),
                line: pos.0,
                col: pos.1,
            })?;
        bindings.push(Binding { placeholder: lookup[name.as_str()], grammar: sub, start });
    }

    let mut by_lhs = vec![Vec::new(); symbols.len()];
    for (i, p) in productions.iter().enumerate() {
        by_lhs[p.lhs.index()].push(i);
    }
    let ranks = compute_ranks(&symbols, &productions, &templates, &bindings)?;

    Ok(Grammar {
        name: sec.name.clone(),
        symbols,
        lookup,
        productions,
        by_lhs,
        start,
        constraints,
        bindings,
        templates,
        ranks,
    })
}

fn compute_ranks(
    symbols: &[Symbol],
    productions: &[Production],
    templates: &BTreeMap<SymbolId, GraphTemplate>,
    bindings: &[Binding],
) -> Result<Vec<usize>, GrammarError> {
    let mut rank: Vec<Option<usize>> = symbols
        .iter()
        .enumerate()
        .map(|(i, s)| match s.kind {
            SymbolKind::Primitive => Some(2),
            SymbolKind::Operator => templates.get(&SymbolId(i as u32)).map(|t| t.rank()),
            SymbolKind::Placeholder => bindings
                .iter()
                .find(|b| b.placeholder.index() == i)
                .map(|b| b.grammar.rank(b.start)),
            SymbolKind::Nonterminal => None,
        })
        .collect();
    loop {
        let mut changed = false;
        for p in productions {
            let r = match &p.rhs {
                Rhs::Apply { op, .. } => rank[op.index()],
                Rhs::Terminal(t) | Rhs::Unit(t) => rank[t.index()],
            };
            let Some(r) = r else { continue };
            match rank[p.lhs.index()] {
                None => {
                    rank[p.lhs.index()] = Some(r);
                    changed = true;
                }
                Some(prev) if prev != r => {
                    return Err(GrammarError::ArityMismatch {
                        name: symbols[p.lhs.index()].name.to_string(),
                        msg: format!("derives graphs with {prev} and {r} external nodes"),
                    });
                }
                _ => {}
            }
        }
        if !changed {
            break;
        }
    }
    for p in productions {
        if let Rhs::Apply { op, args } = &p.rhs {
            let t = &templates[op];
            for (i, a) in args.iter().enumerate() {
                if let Some(r) = rank[a.index()] {
                    if r != t.slot_rank(i) {
                        return Err(GrammarError::ArityMismatch {
                            name: symbols[op.index()].name.to_string(),
                            msg: format!(
                                "slot {} expects {} attachment nodes but `{}` provides {}",
                                i + 1,
                                t.slot_rank(i),
                                symbols[a.index()].name,
                                r
                            ),
                        });
                    }
                }
            }
        }
    }
    Ok(rank.into_iter().map(|r| r.unwrap_or(2)).collect())
}

fn check_family_templates(g: &Grammar) -> Result<(), GrammarError> {
    let mut seen: HashMap<&str, &GraphTemplate> = HashMap::new();
    for member in g.family() {
        for (&op, t) in &member.templates {
            let name = &*member.symbol(op).name;
            if let Some(prev) = seen.insert(name, t) {
                if prev != t {
                    return Err(GrammarError::DuplicateSymbol {
                        name: name.to_string(),
                        msg: "operator has different templates in different grammar sections".into(),
                    });
                }
            }
        }
    }
    Ok(())
}
