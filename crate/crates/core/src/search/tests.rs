use std::collections::HashSet;

use proptest::prelude::{prop_assert, proptest};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::grammar::{enumerate_terms, fixtures, parse_grammar};
use crate::objective::ObjectiveKind;
use crate::term::Site;

const EXAMPLE_GRAMMAR: &str = "S ::= Linear(S, S, S) | Residual(S, S, S) | conv | id | fc";
const OMEGA: &str = "Linear(Residual(conv,id,conv),Residual(conv,id,conv),fc)";

/// Improvement integral by composite Simpson over ±12 standard deviations.
fn ei_by_quadrature(mean: f64, sd: f64, best: f64) -> f64 {
    let n = 200_000;
    let (a, b) = (mean - 12.0 * sd, mean + 12.0 * sd);
    let h = (b - a) / n as f64;
    let f = |y: f64| {
        let z = (y - mean) / sd;
        (best - y).max(0.0) * (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
    };
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn ei_spot_values() {
    let a = expected_improvement(0.0, 1.0, 0.0);
    let b = expected_improvement(-1.0, 1.0, 0.0);
    assert!((a - 0.398942).abs() < 1e-6 && (a - ei_by_quadrature(0.0, 1.0, 0.0)).abs() < 1e-7);
    // Phi(1) + phi(1)
    assert!((b - 1.0833155).abs() < 1e-6 && (b - ei_by_quadrature(-1.0, 1.0, 0.0)).abs() < 1e-7);
    assert_eq!(expected_improvement(0.3, 0.0, 0.3), 0.0);
    assert_eq!(expected_improvement(0.5, 0.0, 0.3), 0.0);
    assert_eq!(expected_improvement(0.1, 0.0, 0.3), 0.3 - 0.1);
    for (m, s, f) in [(0.2, 0.5, 0.4), (1.0, 0.1, 0.5), (-2.0, 3.0, 1.0)] {
        assert!((expected_improvement(m, s * s, f) - ei_by_quadrature(m, s, f)).abs() < 1e-7);
    }
}

proptest! {
    #[test]
    fn ei_is_nonnegative_and_decreasing(mean in -5.0..5.0f64, sd in 0.01..3.0f64, best in -5.0..5.0f64, d in 0.01..1.0f64) {
        let e = expected_improvement(mean, sd * sd, best);
        prop_assert!(e >= 0.0);
        let e2 = expected_improvement(mean + d, sd * sd, best);
        // strict unless both have underflowed to zero
        prop_assert!(e2 < e || (e2 == 0.0 && e < 1e-300));
    }
}

fn site(path: &[usize]) -> Site {
    Site { binding: None, path: path.to_vec(), step: 0 }
}

#[test]
fn mutation_example() {
    let g = parse_grammar(EXAMPLE_GRAMMAR).unwrap();
    let t = parse_term(OMEGA, &g).unwrap();
    let new = parse_term("Linear(conv,id,fc)", &g).unwrap();
    let out = t.replace(&site(&[0]), new.root);
    assert_eq!(out.to_string(), "Linear(Linear(conv,id,fc),Residual(conv,id,conv),fc)");
    assert_eq!(parse_term(&out.canonical(), &g).unwrap(), out);
}

#[test]
fn single_derivation_grammar_mutates_to_itself() {
    let g = parse_grammar("S ::= Linear(A, A); A ::= conv").unwrap();
    let sampler = Sampler::new(&g, 4);
    let t = parse_term("Linear(conv,conv)", &g).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..20 {
        assert_eq!(mutate(&t, &sampler, &mut rng), t);
    }
}

#[test]
fn self_crossover_of_identical_residuals_is_identity() {
    let g = parse_grammar(EXAMPLE_GRAMMAR).unwrap();
    let t = parse_term(OMEGA, &g).unwrap();
    assert_eq!(swap_subterms(&t, &site(&[0]), &site(&[1])).unwrap(), t);
    // overlapping sites are refused
    assert!(swap_subterms(&t, &site(&[]), &site(&[0])).is_none());
    let swapped = swap_subterms(&t, &site(&[0]), &site(&[2])).unwrap();
    assert_eq!(swapped.to_string(), "Linear(fc,Residual(conv,id,conv),Residual(conv,id,conv))");
}

fn assert_valid(t: &Term, g: &Grammar, max_depth: usize) {
    let back = parse_term(&t.canonical(), g).unwrap_or_else(|e| panic!("{e}: {}", t.canonical()));
    assert_eq!(&back, t);
    assert!(t.depth() <= max_depth);
    crate::grammar::check_constraints(t, g).unwrap();
}

#[test]
fn operators_keep_terms_valid() {
    let g = fixtures::nb201_hierarchical();
    let d = default_max_depth(&g);
    let sampler = Sampler::new(&g, d);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut changed = 0;
    for _ in 0..300 {
        let a = sampler.sample(&mut rng).unwrap();
        let b = sampler.sample(&mut rng).unwrap();
        let m = mutate(&a, &sampler, &mut rng);
        assert_valid(&m, &g, d);
        let (x, y, ok) = crossover(&a, &b, &sampler, &mut rng);
        assert_valid(&x, &g, d);
        assert_valid(&y, &g, d);
        changed += ok as usize;
        let (s, _) = self_crossover(&a, &sampler, &mut rng);
        assert_valid(&s, &g, d);
        let (p, q, _) = crossover(&a, &a, &sampler, &mut rng);
        assert_valid(&p, &g, d);
        assert_valid(&q, &g, d);
    }
    assert!(changed > 250, "only {changed} crossovers found a swap");
}

fn toy() -> Grammar {
    parse_grammar("S ::= Linear(A, A); A ::= conv | id | fc | avg_pool").unwrap()
}

fn toy_model(g: &Grammar, kernel: &HwlConfig, train: &[(&str, f64)]) -> GpModel {
    let fz = Featurizer::new(g, kernel);
    let pts = train
        .iter()
        .map(|&(s, v)| {
            let t = parse_term(s, g).unwrap();
            TrainPoint { key: t.canonical(), features: Arc::new(fz.featurize(&t).unwrap()), value: v }
        })
        .collect();
    GpModel::fit(pts, kernel, &FitOptions::default()).unwrap()
}

const TOY_TRAIN: &[(&str, f64)] =
    &[("Linear(conv,conv)", 0.1), ("Linear(id,id)", 0.9), ("Linear(fc,avg_pool)", 0.7), ("Linear(id,fc)", 0.8)];

fn small_evolution() -> EvolutionConfig {
    EvolutionConfig { pool: 4, p_tour: 0.5, min_iterations: 3, max_iterations: 20, patience: 5, seeds: 2, ..Default::default() }
}

#[test]
fn evolution_finds_exhaustive_ei_maximizer() {
    let g = toy();
    let all = enumerate_terms(&g, 100).terms;
    assert_eq!(all.len(), 16);
    let kernel = HwlConfig::uniform(2);
    let model = toy_model(&g, &kernel, TOY_TRAIN);
    let fz = Featurizer::new(&g, &kernel);
    let seen: HashSet<String> = model.points().iter().map(|p| p.key.clone()).collect();
    let best = 0.1;
    let mut exhaustive: Vec<(f64, String)> = all
        .iter()
        .filter(|t| !seen.contains(&t.canonical()))
        .map(|t| {
            let (mu, var) = model.predict_features(&fz.featurize(t).unwrap());
            (expected_improvement(mu, var, best), t.canonical())
        })
        .collect();
    exhaustive.sort_by(|a, b| b.0.total_cmp(&a.0));
    assert!(exhaustive[0].0 > exhaustive[1].0, "toy maximizer is not unique");
    let incumbents = vec![parse_term(TOY_TRAIN[0].0, &g).unwrap()];
    let sampler = Sampler::new(&g, 2);
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acq = Acquisition::new(&model, &fz, best);
        let pick = optimize_acquisition(&mut acq, &sampler, &incumbents, &seen, &small_evolution(), &mut rng).unwrap();
        assert_eq!(pick.canonical(), exhaustive[0].1);
        assert!(!seen.contains(&pick.canonical()));
    }
}

#[test]
fn pool_of_one_without_iterations_returns_seed() {
    let g = toy();
    let kernel = HwlConfig::uniform(2);
    let model = toy_model(&g, &kernel, TOY_TRAIN);
    let fz = Featurizer::new(&g, &kernel);
    let sampler = Sampler::new(&g, 2);
    let seed = parse_term("Linear(fc,fc)", &g).unwrap();
    let cfg = EvolutionConfig { pool: 1, min_iterations: 0, max_iterations: 0, seeds: 1, ..Default::default() };
    let mut acq = Acquisition::new(&model, &fz, 0.1);
    let pick = optimize_acquisition(&mut acq, &sampler, std::slice::from_ref(&seed), &HashSet::new(), &cfg, &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(pick.unwrap(), seed);
}

#[test]
fn kriging_believer_matches_hand_trace() {
    let g = toy();
    let kernel = HwlConfig::uniform(2);
    let model = toy_model(&g, &kernel, TOY_TRAIN);
    let fz = Featurizer::new(&g, &kernel);
    let sampler = Sampler::new(&g, 2);
    let seen: HashSet<String> = model.points().iter().map(|p| p.key.clone()).collect();
    let incumbents = vec![parse_term(TOY_TRAIN[0].0, &g).unwrap()];
    let cfg = small_evolution();

    let picks = kriging_believer_batch(&model, &fz, &sampler, 0.1, 3, &incumbents, &seen, &cfg, &mut ChaCha8Rng::seed_from_u64(5))
        .unwrap();

    // the same steps written out
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut m = model.clone();
    let mut excl = seen.clone();
    let mut trace = Vec::new();
    for _ in 0..3 {
        let mut acq = Acquisition::new(&m, &fz, 0.1);
        let t = optimize_acquisition(&mut acq, &sampler, &incumbents, &excl, &cfg, &mut rng).unwrap();
        let f = Arc::new(fz.featurize(&t).unwrap());
        let (mu, _) = m.predict_features(&f);
        m = m.condition_on(TrainPoint { key: t.canonical(), features: f, value: mu }).unwrap();
        excl.insert(t.canonical());
        trace.push(t);
    }
    assert_eq!(picks, trace);
    let keys: HashSet<String> = picks.iter().map(|t| t.canonical()).collect();
    assert_eq!(keys.len(), 3);
    assert!(keys.is_disjoint(&seen));

    let one = kriging_believer_batch(&model, &fz, &sampler, 0.1, 1, &incumbents, &seen, &cfg, &mut ChaCha8Rng::seed_from_u64(5))
        .unwrap();
    assert_eq!(one, picks[..1]);
}

fn quick(strategy: Strategy, budget: usize, seed: u64) -> SearchConfig {
    SearchConfig {
        budget,
        initial: budget.min(10),
        workers: 1,
        seed,
        strategy,
        evolution: EvolutionConfig { pool: 30, min_iterations: 2, max_iterations: 5, patience: 2, ..Default::default() },
        fit: FitOptions { budget: 100, ..Default::default() },
        ..Default::default()
    }
}

fn check_history(h: &RunHistory, g: &Grammar, budget: usize) {
    assert_eq!(h.records.len(), budget);
    let mut keys = HashSet::new();
    let mut prev = f64::INFINITY;
    for (i, r) in h.records.iter().enumerate() {
        assert_eq!(r.iteration, i);
        assert!(r.incumbent <= prev && r.incumbent <= r.value);
        prev = r.incumbent;
        assert!(keys.insert(r.term.clone()), "duplicate {}", r.term);
        let t = parse_term(&r.term, g).unwrap();
        crate::grammar::check_constraints(&t, g).unwrap();
    }
}

#[test]
fn initial_design_only_is_random_search() {
    let g = fixtures::nb201_hierarchical();
    let h = run_search(&g, &quick(Strategy::Banat, 10, 3), &[], None).unwrap();
    check_history(&h, &g, 10);
    assert!(h.records.iter().all(|r| r.source == "initial" && r.hyper.is_none()));
}

#[test]
fn seeded_runs_are_identical() {
    let g = fixtures::nb201_hierarchical();
    let cfg = quick(Strategy::Banat, 16, 9);
    let mut log = Vec::new();
    let a = run_search(&g, &cfg, &[], Some(&mut log)).unwrap();
    let b = run_search(&g, &cfg, &[], None).unwrap();
    check_history(&a, &g, 16);
    assert_eq!(a.to_jsonl(), b.to_jsonl());
    assert_eq!(String::from_utf8(log).unwrap(), a.to_jsonl());
    assert!(a.records[10..].iter().all(|r| r.hyper.is_some()));
    assert_eq!(read_log(a.to_jsonl().as_bytes()).unwrap(), a.records);
}

#[test]
fn wl_surrogate_is_top_level_only_hwl() {
    let g = fixtures::nb201_hierarchical();
    let mut wl = quick(Strategy::Banat, 13, 4);
    wl.surrogate = SurrogateKind::Wl;
    let mut top = quick(Strategy::Banat, 13, 4);
    top.kernel = Some(HwlConfig::top_only(default_max_depth(&g)));
    assert_eq!(run_search(&g, &wl, &[], None).unwrap(), run_search(&g, &top, &[], None).unwrap());
}

#[test]
fn baselines_and_parallel_workers() {
    let g = fixtures::nb201_hierarchical();
    check_history(&run_search(&g, &quick(Strategy::Rs, 20, 1), &[], None).unwrap(), &g, 20);
    let mut re = quick(Strategy::Re, 45, 1);
    re.initial = 5;
    let h = run_search(&g, &re, &[], None).unwrap();
    check_history(&h, &g, 45);
    assert!(h.records.iter().any(|r| r.source == "mutation"));
    let mut par = quick(Strategy::Banat, 16, 2);
    par.workers = 4;
    par.batch = 2;
    let h = run_search(&g, &par, &[], None).unwrap();
    check_history(&h, &g, 16);
    assert!(h.records.iter().any(|r| r.source == "model"));
}

#[test]
fn failures_get_the_penalty() {
    let g = fixtures::nb201_hierarchical();
    let mut cfg = quick(Strategy::Rs, 3, 0);
    cfg.initial = 3;
    cfg.penalty = 2.5;
    cfg.objective.kind = ObjectiveKind::External { command: vec!["false".into()], timeout: DEFAULT_TEST_TIMEOUT };
    let h = run_search(&g, &cfg, &[], None).unwrap();
    assert!(h.records.iter().all(|r| r.value == 2.5 && r.error.is_some()));
}

const DEFAULT_TEST_TIMEOUT: std::time::Duration = std::time::Duration::from_secs(10);

#[test]
fn resume_continues_a_log() {
    let g = fixtures::nb201_hierarchical();
    let cfg = quick(Strategy::Banat, 14, 6);
    let full = run_search(&g, &cfg, &[], None).unwrap();
    let resumed = run_search(&g, &cfg, &full.records[..8], None).unwrap();
    check_history(&resumed, &g, 14);
    assert_eq!(resumed.records[..8], full.records[..8]);
    let done = run_search(&g, &cfg, &full.records, None).unwrap();
    assert_eq!(done, full);
}

#[test]
fn config_validation() {
    let mut cfg = SearchConfig { workers: 0, ..Default::default() };
    assert!(cfg.validate().is_err());
    cfg.workers = 1;
    cfg.initial = 200;
    assert!(cfg.validate().is_err());
    cfg.initial = 10;
    cfg.evolution.p_mut = 1.5;
    assert!(cfg.validate().is_err());
    assert_eq!("re".parse::<Strategy>().unwrap(), Strategy::Re);
    assert_eq!(Strategy::Banat.to_string(), "banat");
    assert!("hwl".parse::<SurrogateKind>().is_ok() && "x".parse::<SurrogateKind>().is_err());
}
