use super::*;
use crate::grammar::{fixtures, parse_grammar};
use crate::term::parse_term;

const EXAMPLE_GRAMMAR: &str = "S ::= Linear(S, S, S) | Residual(S, S, S) | conv | id | fc";
const OMEGA: &str = "Linear(Residual(conv,id,conv),Residual(conv,id,conv),fc)";

fn build(grammar: &str, term: &str) -> ArchGraph {
    let g = parse_grammar(grammar).unwrap();
    assemble(&parse_term(term, &g).unwrap(), &g).unwrap()
}

#[test]
fn residual_example_graph() {
    let g = build(EXAMPLE_GRAMMAR, OMEGA);
    assert_eq!(g.edges.len(), 7);
    assert_eq!(g.nodes.len(), 6);
    assert!(g.is_acyclic());
    assert!(g.is_connected());
    let s = g.stats();
    assert_eq!(s.longest_path, 5);
    assert_eq!(s.labels["conv"], 4);
    assert_eq!(to_dot(&g).matches("->").count(), 7);
}

#[test]
fn folded_graph_is_a_chain() {
    let gr = parse_grammar(EXAMPLE_GRAMMAR).unwrap();
    let t = parse_term(OMEGA, &gr).unwrap().fold(2);
    let g = assemble(&t, &gr).unwrap();
    assert_eq!(g.nodes.len(), 4);
    let labels: Vec<String> = g.edges.iter().map(|e| e.kernel_label()).collect();
    assert_eq!(labels, ["S:Residual", "S:Residual", "fc"]);
    assert_eq!(g.stats().longest_path, 3);
}

#[test]
fn single_edge() {
    let g = build("S ::= conv", "conv");
    let s = g.stats();
    assert_eq!((s.nodes, s.edges, s.longest_path), (2, 1, 1));
    assert_eq!(s.labels.get("conv"), Some(&1));
    let v = to_json(&g, Some("conv"));
    assert_eq!(v["nodes"].as_array().unwrap().len(), 2);
    assert_eq!(v["edges"].as_array().unwrap().len(), 1);
    assert_eq!(v["schema"], SCHEMA);
    assert_eq!(from_json(&v).unwrap(), g);
}

const CELL: &str = "S ::= Cell(P,P,P,P,P,P)\nP ::= zero | id | conv3x3 | conv1x1 | avg_pool";

#[test]
fn pruning_cells() {
    let all_zero = build(CELL, "Cell(zero,zero,zero,zero,zero,zero)");
    let p = all_zero.prune_zero();
    assert_eq!(p.nodes, vec![0, 1]);
    assert!(p.edges.is_empty());
    assert!(!all_zero.is_connected());
    assert_eq!(all_zero.stats().longest_path, 0);

    // zero, id, zero, avg_pool, conv3x3, conv1x1 on edges a..f
    let g = build(CELL, "Cell(zero,id,zero,avg_pool,conv3x3,conv1x1)");
    let p = g.prune_zero();
    let mut labels: Vec<&str> = p.edges.iter().map(|e| e.label.as_str()).collect();
    labels.sort();
    assert_eq!(labels, ["avg_pool", "conv1x1", "id"]);
    assert_eq!(p.prune_zero(), p);

    let none = build(CELL, "Cell(id,id,id,id,id,id)");
    assert_eq!(none.prune_zero().edges, none.edges);
}

#[test]
fn hierarchical_samples_downsample_twice() {
    use rand::SeedableRng;
    let gr = fixtures::nb201_hierarchical();
    let sampler = crate::grammar::Sampler::new(&gr, 7);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let t = sampler.sample(&mut rng).unwrap();
        let g = assemble(&t, &gr).unwrap();
        assert!(g.is_connected());
        assert_eq!(g.downsample_range(), Some((2, 2)));
        assert_eq!(to_json(&g, None)["meta"]["downsample_count"], 2);
        for l in 1..=t.depth() {
            assert!(assemble(&t.fold(l), &gr).unwrap().edges.len() <= g.edges.len());
        }
    }
}

#[test]
fn darts_cell_shape() {
    let gr = fixtures::load("darts").unwrap();
    let t = parse_term(
        "Darts(Node3(id,conv),Node4(id,id,id),Node5(id,id,id,id),Node6(id,id,id,id,id))"
            .replace("conv", "avg_pool")
            .as_str(),
        &gr,
    )
    .unwrap();
    let g = assemble(&t, &gr).unwrap();
    // 2+3+4+5 op edges plus 4 fixed edges into the output
    assert_eq!(g.edges.len(), 18);
    assert_eq!(g.nodes.len(), 6);
    assert_eq!(g.node_attrs[&1]["merge"], "concat");
    assert!(g.is_acyclic());
}

#[test]
fn oversized_templates_are_rejected() {
    assert!(GraphTemplate::chain(63).validate().is_ok());
    assert!(GraphTemplate::chain(64).validate().is_err());
}
