use super::*;
use crate::grammar::parse_grammar;

const EXAMPLE_GRAMMAR: &str = "S ::= Linear(S, S, S) | Residual(S, S, S) | conv | id | fc";
const OMEGA: &str = "Linear(Residual(conv,id,conv),Residual(conv,id,conv),fc)";

fn omega() -> (crate::grammar::Grammar, Term) {
    let g = parse_grammar(EXAMPLE_GRAMMAR).unwrap();
    let t = parse_term(OMEGA, &g).unwrap();
    (g, t)
}

#[test]
fn to_string_and_depth() {
    let (_, t) = omega();
    assert_eq!(t.to_string(), OMEGA);
    assert_eq!(t.depth(), 3);
    let g = parse_grammar("S ::= conv").unwrap();
    let leaf = parse_term("conv", &g).unwrap();
    assert_eq!(leaf.depth(), 1);
    assert_eq!(leaf.root.derivation, vec![Step { nt: "S".into(), production: 0 }]);
}

#[test]
fn parse_accepts_whitespace() {
    let (g, t) = omega();
    let spaced = parse_term("Linear( Residual(conv, id, conv), Residual(conv, id, conv),\n fc )", &g);
    // a newline separates binding lines, so only the single-line form is valid
    assert!(spaced.is_err());
    let spaced = parse_term("Linear( Residual(conv, id, conv), Residual(conv, id, conv), fc )", &g).unwrap();
    assert_eq!(spaced, t);
}

#[test]
fn non_derivable() {
    let g = parse_grammar(EXAMPLE_GRAMMAR).unwrap();
    let e = parse_term("Residual(fc,fc)", &g).unwrap_err();
    assert!(matches!(e, TermError::NotDerivable { .. }));
    let e = parse_term("Linear(conv,id,pool)", &g).unwrap_err();
    assert_eq!(e, TermError::NotDerivable { subterm: "pool".into() });
    assert!(matches!(parse_term("Linear(conv", &g), Err(TermError::Syntax { .. })));
}

#[test]
fn folds() {
    let (_, t) = omega();
    assert_eq!(t.fold(1).to_string(), "Linear");
    assert_eq!(t.fold(2).to_string(), "Linear(Residual,Residual,fc)");
    assert_eq!(t.fold(3), t);
    assert_eq!(t.fold(2).depth(), 2);
    let folded = t.fold(2);
    let leaf = &folded.root.children()[0];
    assert!(matches!(leaf.kind, NodeKind::Folded(_)));
    assert_eq!(leaf.nt().map(|s| &**s), Some("S"));
}

#[test]
fn sites() {
    let (_, t) = omega();
    assert_eq!(t.subterm_sites("S").len(), 10);
    assert!(t.subterm_sites("X").is_empty());
    let first = &t.subterm_sites("S")[1];
    assert_eq!(first.path, vec![0]);
    assert_eq!(t.subterm(first).unwrap().to_string(), "Residual(conv,id,conv)");
}

#[test]
fn replace_subterm() {
    let (g, t) = omega();
    let site = t.subterm_sites("S")[1].clone();
    let new = parse_term("Linear(conv,id,fc)", &g).unwrap();
    let out = t.replace(&site, new.root);
    assert_eq!(out.to_string(), "Linear(Linear(conv,id,fc),Residual(conv,id,conv),fc)");
    assert_eq!(parse_term(&out.to_string(), &g).unwrap(), out);
}

#[test]
fn bindings_serialize_as_lines() {
    let g = parse_grammar(
        "@grammar top\nbind x1 -> blk.B\nS ::= Linear(x1, x1, fc)\n@grammar blk\nB ::= Residual(P, P, P)\nP ::= conv | id",
    )
    .unwrap();
    let t = parse_term("Linear(x1,x1,fc)\nx1=Residual(conv,id,conv)", &g).unwrap();
    assert_eq!(t.to_string(), "Linear(x1,x1,fc)\nx1=Residual(conv,id,conv)");
    assert_eq!(t.canonical(), "Linear(x1,x1,fc);x1=Residual(conv,id,conv)");
    assert_eq!(parse_term(&t.canonical(), &g).unwrap(), t);
    assert_eq!(t.expanded().to_string(), OMEGA);
    assert_eq!(t.depth(), 3);
    assert_eq!(t.fold(2).to_string(), "Linear(Residual,Residual,fc)");
    assert!(matches!(parse_term("Linear(x1,x1,fc)", &g), Err(TermError::MissingBinding(_))));
    let level = t.binding_levels()["x1"];
    assert_eq!(level, 2);
}

#[test]
fn json_shape() {
    let (_, t) = omega();
    let v = t.to_json();
    assert_eq!(v["root"]["op"], "Linear");
    assert_eq!(v["root"]["nt"], "S");
    assert_eq!(v["root"]["children"].as_array().unwrap().len(), 3);
}
