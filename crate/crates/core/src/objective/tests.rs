use std::time::Duration;

use proptest::prelude::*;

use super::*;
use crate::assembly::assemble;
use crate::grammar::{fixtures, parse_grammar, Sampler};
use crate::term::parse_term;

fn spec(target: &[(&str, f64)], depth: usize) -> SyntheticSpec {
    SyntheticSpec {
        target: target.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
        target_depth: depth,
        weights: (0.5, 0.5),
    }
}

#[test]
fn formula_spot_values() {
    let g = ArchGraph::single("conv");
    assert!((evaluate_synthetic(&g, &spec(&[("conv", 1.0)], 4)) - 0.375).abs() < 1e-15);
    assert_eq!(evaluate_synthetic(&g, &spec(&[("conv", 1.0)], 1)), 0.0);
    // half the mass in the wrong label
    assert!((evaluate_synthetic(&g, &spec(&[("conv", 0.5), ("id", 0.5)], 1)) - 0.25).abs() < 1e-15);
    assert_eq!(evaluate_synthetic(&ArchGraph::single("zero"), &spec(&[("conv", 1.0)], 1)), 1.0);
}

#[test]
fn exact_match_scores_zero() {
    let gr = parse_grammar("S ::= Linear(S, S, S) | Residual(S, S, S) | conv | id | fc").unwrap();
    let t = parse_term("Linear(Residual(conv,id,conv),Residual(conv,id,conv),fc)", &gr).unwrap();
    let g = assemble(&t, &gr).unwrap();
    let s = spec(&[("conv", 4.0 / 7.0), ("id", 2.0 / 7.0), ("fc", 1.0 / 7.0)], 5);
    assert!(evaluate_synthetic(&g, &s).abs() < 1e-15);
}

#[test]
fn default_spec_is_valid() {
    SyntheticSpec::default().validate().unwrap();
    assert!(spec(&[("conv", 0.5)], 3).validate().is_err());
    assert!(spec(&[("conv", 1.0)], 0).validate().is_err());
}

#[test]
fn noisy_variant_is_seeded() {
    let g = ArchGraph::single("conv");
    let s = spec(&[("conv", 1.0)], 4);
    let a = evaluate_noisy(&g, &s, 0.1, 7, "conv");
    assert_eq!(a, evaluate_noisy(&g, &s, 0.1, 7, "conv"));
    assert_ne!(a, evaluate_noisy(&g, &s, 0.1, 8, "conv"));
    assert!((0.0..=1.0).contains(&a));
    assert_eq!(evaluate_noisy(&g, &s, 0.0, 7, "conv"), 0.375);
}

#[test]
fn kind_parsing() {
    assert_eq!("synthetic".parse::<ObjectiveKind>().unwrap(), ObjectiveKind::Synthetic);
    assert_eq!("noisy:0.05".parse::<ObjectiveKind>().unwrap(), ObjectiveKind::Noisy(0.05));
    match "external:python3 worker.py --proxy params".parse::<ObjectiveKind>().unwrap() {
        ObjectiveKind::External { command, timeout } => {
            assert_eq!(command, ["python3", "worker.py", "--proxy", "params"]);
            assert_eq!(timeout, DEFAULT_TIMEOUT);
        }
        other => panic!("{other:?}"),
    }
    assert!("bogus".parse::<ObjectiveKind>().is_err());
    assert!("noisy:-1".parse::<ObjectiveKind>().is_err());
}

const ECHO: &str = r#"
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    assert req["graph"]["schema"] == "archgraph/1"
    if "zero" in req["term"]:
        print(json.dumps({"id": req["id"], "error": "no path"}), flush=True)
    elif "hang" in req["term"]:
        import time; time.sleep(30)
    elif "junk" in req["term"]:
        print("not json", flush=True)
    else:
        print(json.dumps({"id": req["id"], "value": 0.42}), flush=True)
"#;

fn echo(timeout: Duration) -> ExternalEvaluator {
    ExternalEvaluator::new(vec!["python3".into(), "-c".into(), ECHO.into()], timeout)
}

#[test]
fn external_round_trip() {
    let mut w = echo(Duration::from_secs(20));
    let g = ArchGraph::single("conv");
    assert_eq!(w.evaluate("conv", &g).unwrap(), 0.42);
    assert_eq!(w.evaluate("conv", &g).unwrap(), 0.42);
    assert!(matches!(w.evaluate("zero", &g), Err(ObjectiveError::Worker(m)) if m == "no path"));
    assert!(matches!(w.evaluate("junk", &g), Err(ObjectiveError::Malformed(_))));
    // restarted after the malformed line
    assert_eq!(w.evaluate("conv", &g).unwrap(), 0.42);
}

#[test]
fn external_timeout_and_spawn_failure() {
    let mut w = echo(Duration::from_millis(300));
    let g = ArchGraph::single("conv");
    assert!(matches!(w.evaluate("hang", &g), Err(ObjectiveError::Timeout(_))));
    let mut bad = ExternalEvaluator::new(vec!["/nonexistent/worker".into()], Duration::from_secs(1));
    assert!(matches!(bad.evaluate("conv", &g), Err(ObjectiveError::Spawn { .. })));
    let mut dies = ExternalEvaluator::new(vec!["true".into()], Duration::from_secs(5));
    assert!(matches!(dies.evaluate("conv", &g), Err(ObjectiveError::Exited(_) | ObjectiveError::Io(_))));
}

fn hier_graphs() -> impl Strategy<Value = u64> {
    any::<u64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn range_and_relabel_invariance(seed in hier_graphs()) {
        let gr = fixtures::nb201_hierarchical();
        let t = crate::grammar::sample_term(&gr, seed, 7).unwrap();
        let g = assemble(&t, &gr).unwrap();
        let s = SyntheticSpec::default();
        let v = evaluate_synthetic(&g, &s);
        prop_assert!((0.0..=1.0).contains(&v));
        // shift every node id
        let mut h = g.clone();
        for e in &mut h.edges {
            e.tail += 1000;
            e.head += 1000;
        }
        h.nodes = g.nodes.iter().map(|n| n + 1000).collect();
        h.input += 1000;
        h.output += 1000;
        h.node_attrs = g.node_attrs.iter().map(|(n, a)| (n + 1000, a.clone())).collect();
        prop_assert_eq!(evaluate_synthetic(&h, &s), v);
    }

    #[test]
    fn primitive_swap_locality(seed in hier_graphs(), pick in any::<prop::sample::Index>()) {
        let gr = fixtures::nb201_hierarchical();
        let t = crate::grammar::sample_term(&gr, seed, 7).unwrap();
        let g = assemble(&t, &gr).unwrap();
        prop_assume!(g.is_connected());
        let s = SyntheticSpec::default();
        let swaps = [("relu", "mish"), ("conv1x1", "conv3x3"), ("batch", "layer"), ("id", "avg_pool")];
        let candidates: Vec<usize> = (0..g.edges.len())
            .filter(|&i| swaps.iter().any(|(a, b)| g.edges[i].label == *a || g.edges[i].label == *b))
            .collect();
        prop_assume!(!candidates.is_empty());
        let i = candidates[pick.index(candidates.len())];
        let mut h = g.clone();
        let (a, b) = swaps.iter().find(|(a, b)| h.edges[i].label == *a || h.edges[i].label == *b).unwrap();
        h.edges[i].label = if h.edges[i].label == *a { b.to_string() } else { a.to_string() };
        let (sg, sh) = (g.stats(), h.stats());
        let dlp = sg.longest_path.abs_diff(sh.longest_path) as f64;
        let bound = s.weights.0 * 2.0 / sg.edges as f64 + s.weights.1 * dlp / s.target_depth as f64;
        let diff = (evaluate_synthetic(&g, &s) - evaluate_synthetic(&h, &s)).abs();
        prop_assert!(diff <= bound + 1e-12, "{} > {}", diff, bound);
    }
}

#[test]
fn sampler_graphs_are_scored_in_range() {
    let gr = fixtures::nb201_hierarchical();
    let sampler = Sampler::new(&gr, 7);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut obj = ObjectiveSpec::synthetic().instantiate().unwrap();
    for _ in 0..20 {
        let t = sampler.sample(&mut rng).unwrap();
        let v = obj.evaluate(&t.canonical(), &assemble(&t, &gr).unwrap()).unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
}
