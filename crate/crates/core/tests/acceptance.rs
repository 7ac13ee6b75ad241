//! End-to-end acceptance checks. Each test writes one PASS/FAIL line to
//! stderr (bypassing the test harness capture) and then asserts.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gramnas::assembly::assemble;
use gramnas::grammar::{
    check_constraints, count_space, default_max_depth, enumerate_terms, fixtures, parse_grammar, Grammar, Sampler,
};
use gramnas::kernel::{
    gram_matrix, graph_features, hwl_kernel, level_kernels, wl_features, wl_kernel, wl_labels, Featurizer, HwlConfig,
    LabelDictionary, LabeledGraph, TermFeatures,
};
use gramnas::objective::{evaluate_synthetic, SyntheticSpec};
use gramnas::search::{
    crossover, expected_improvement, mutate, run_search, self_crossover, EvolutionConfig, SearchConfig, Strategy,
    SurrogateKind,
};
use gramnas::surrogate::{FitOptions, GpModel, Hyperparameters, TrainPoint, NOISE_STD_FLOOR};
use gramnas::term::{parse_term, Term};

fn report(name: &str, pass: bool, detail: String) {
    let line = format!("[{}] {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{name}: {detail}");
}

const OMEGA_GRAMMAR: &str = "S ::= Linear(S, S, S) | Residual(S, S, S) | conv | id | fc";
const OMEGA: &str = "Linear(Residual(conv,id,conv),Residual(conv,id,conv),fc)";

fn exact(src: &str) -> u64 {
    count_space(&parse_grammar(src).unwrap()).exact().unwrap().to_string().parse().unwrap()
}

/// Random grammar over nonterminals N0..Nk where Ni only refers to Nj, j > i.
fn random_acyclic_grammar(rng: &mut ChaCha8Rng) -> String {
    let k = rng.random_range(2..=4);
    let terminals = ["conv", "id", "fc", "avg_pool"];
    let mut lines = Vec::new();
    for i in 0..k {
        let mut alts: Vec<String> = Vec::new();
        let n_alts = rng.random_range(1..=3);
        while alts.len() < n_alts {
            let alt = if i + 1 == k || rng.random_bool(0.4) {
                terminals[rng.random_range(0..terminals.len())].to_string()
            } else {
                let arity = rng.random_range(2..=3);
                let args: Vec<String> = (0..arity)
                    .map(|_| {
                        if rng.random_bool(0.7) {
                            format!("N{}", rng.random_range(i + 1..k))
                        } else {
                            terminals[rng.random_range(0..terminals.len())].to_string()
                        }
                    })
                    .collect();
                let op = if arity == 3 && rng.random_bool(0.5) { "Residual".to_string() } else { format!("Linear{arity}") };
                format!("{op}({})", args.join(", "))
            };
            if !alts.contains(&alt) {
                alts.push(alt);
            }
        }
        lines.push(format!("N{i} ::= {}", alts.join(" | ")));
    }
    lines.join("\n")
}

#[test]
fn size_oracle() {
    let t0 = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();
    let small = [
        exact("S ::= Residual(B,B,B); B ::= conv | id"),
        exact("S ::= Residual(B,B,B) | Linear(B,B,B); B ::= conv | id"),
        exact("C ::= Linear(S,S,S)\nS ::= Residual(B,B,B) | Linear(B,B,B)\nB ::= conv | id"),
    ];
    ok &= small == [8, 16, 4096];
    notes.push(format!("examples {small:?}"));

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 12 {
        let src = random_acyclic_grammar(&mut rng);
        let g = parse_grammar(&src).unwrap();
        let n = exact(&src);
        if n > 50_000 {
            continue;
        }
        let e = enumerate_terms(&g, 100_000);
        if e.truncated || e.terms.len() as u64 != n {
            ok = false;
            notes.push(format!("mismatch on\n{src}\ncount {n} vs {}", e.terms.len()));
        }
        checked += 1;
    }
    notes.push(format!("{checked} random grammars agree with enumeration"));

    let cell = count_space(&fixtures::nb201_cell()).log10().unwrap();
    ok &= (cell - 4.194).abs() <= 0.02;
    notes.push(format!("cell log10 {cell:.4}"));
    let secs = t0.elapsed().as_secs_f64();
    ok &= secs < 10.0;
    notes.push(format!("{secs:.2}s"));
    report("size oracle (examples, enumeration, cell space)", ok, notes.join("; "));
}

#[test]
fn size_oracle_hierarchical() {
    let t0 = Instant::now();
    let size = count_space(&fixtures::nb201_hierarchical()).log10().unwrap();
    let secs = t0.elapsed().as_secs_f64();
    report(
        "size oracle (hierarchical space log10 in [436, 456])",
        (436.0..=456.0).contains(&size) && secs < 10.0,
        format!("log10 = {size:.2} in {secs:.2}s"),
    );
}

#[test]
fn fold_semantics() {
    let g = parse_grammar(OMEGA_GRAMMAR).unwrap();
    let t = parse_term(OMEGA, &g).unwrap();
    let folds = [t.fold(1).to_string(), t.fold(2).to_string(), t.fold(3).to_string()];
    let mut ok = folds == ["Linear", "Linear(Residual,Residual,fc)", OMEGA];

    let hg = fixtures::nb201_hierarchical();
    let sampler = Sampler::new(&hg, default_max_depth(&hg));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut violations = 0;
    for _ in 0..1000 {
        let t = sampler.sample(&mut rng).unwrap();
        let d = t.depth();
        if t.fold(d) != t {
            violations += 1;
        }
        let l = rng.random_range(1..=d);
        let m = rng.random_range(1..=d);
        let f = t.fold(l);
        if f.fold(l) != f || f.fold(m) != t.fold(l.min(m)) || f.depth() != l {
            violations += 1;
        }
    }
    ok &= violations == 0;
    report("fold semantics", ok, format!("folds {folds:?}; {violations} law violations on 1000 terms"));
}

/// Plain string refinement with sorted in- and out-neighbour multisets.
fn oracle_labels(g: &LabeledGraph, h: usize) -> Vec<Vec<String>> {
    let mut cur = g.labels.clone();
    let mut out = vec![cur.clone()];
    for _ in 0..h {
        let next: Vec<String> = (0..g.len())
            .map(|v| {
                let mut p: Vec<&str> = g.pred[v].iter().map(|&u| cur[u].as_str()).collect();
                let mut s: Vec<&str> = g.succ[v].iter().map(|&u| cur[u].as_str()).collect();
                p.sort();
                s.sort();
                format!("{}({}|{})", cur[v], p.join(","), s.join(","))
            })
            .collect();
        out.push(next.clone());
        cur = next;
    }
    out
}

fn oracle_counts(g: &LabeledGraph, h: usize) -> HashMap<String, u64> {
    let mut m = HashMap::new();
    for (i, level) in oracle_labels(g, h).into_iter().enumerate() {
        for l in level {
            *m.entry(format!("{i}/{l}")).or_insert(0) += 1;
        }
    }
    m
}

fn random_labeled_graph(rng: &mut ChaCha8Rng, directed: bool) -> LabeledGraph {
    let n = rng.random_range(1..=6);
    let labels: Vec<String> = (0..n).map(|_| ["a", "b", "c"][rng.random_range(0..3)].to_string()).collect();
    let m = rng.random_range(0..=2 * n);
    let edges: Vec<(usize, usize)> =
        (0..m).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).filter(|(a, b)| a != b).collect();
    if directed {
        LabeledGraph::directed(labels, &edges)
    } else {
        LabeledGraph::undirected(labels, &edges)
    }
}

#[test]
fn wl_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut mismatches = 0;
    for pair in 0..200 {
        let directed = pair % 2 == 0;
        let h = pair % 3;
        let dict = LabelDictionary::new();
        let (a, b) = (random_labeled_graph(&mut rng, directed), random_labeled_graph(&mut rng, directed));
        // ids and oracle strings must be in bijection across both graphs
        let mut id_to_str: HashMap<(usize, u32), String> = HashMap::new();
        let mut str_to_id: HashMap<String, (usize, u32)> = HashMap::new();
        for g in [&a, &b] {
            let ids = wl_labels(g, h, &dict);
            let strs = oracle_labels(g, h);
            for (it, (ids, strs)) in ids.iter().zip(&strs).enumerate() {
                for (&id, s) in ids.iter().zip(strs) {
                    let key = format!("{it}/{s}");
                    if id_to_str.entry((it, id)).or_insert_with(|| key.clone()) != &key
                        || str_to_id.entry(key).or_insert((it, id)) != &(it, id)
                    {
                        mismatches += 1;
                    }
                }
            }
        }
        let (fa, fb) = (wl_features(&a, h, &dict), wl_features(&b, h, &dict));
        let (oa, ob) = (oracle_counts(&a, h), oracle_counts(&b, h));
        let want: u64 = oa.iter().map(|(k, c)| c * ob.get(k).copied().unwrap_or(0)).sum();
        if wl_kernel(&fa, &fb, false).unwrap() != want as f64 || fa.total() != oa.values().sum::<u64>() {
            mismatches += 1;
        }
    }
    report("WL oracle (200 pairs, <= 6 nodes, H <= 2)", mismatches == 0, format!("{mismatches} mismatches"));
}

#[test]
fn kernel_validity() {
    let g = fixtures::nb201_hierarchical();
    let depth = default_max_depth(&g);
    let sampler = Sampler::new(&g, depth);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = HwlConfig::uniform(depth);
    let mut worst = f64::INFINITY;
    for _ in 0..50 {
        let terms: Vec<Term> = (0..20).map(|_| sampler.sample(&mut rng).unwrap()).collect();
        let k = gram_matrix(&terms, &g, &cfg).unwrap();
        worst = worst.min(SymmetricEigen::new(k).eigenvalues.min());
    }
    let top = HwlConfig::top_only(depth);
    let mut max_diff: f64 = 0.0;
    for _ in 0..50 {
        let (a, b) = (sampler.sample(&mut rng).unwrap(), sampler.sample(&mut rng).unwrap());
        let dict = LabelDictionary::new();
        let fa = graph_features(&assemble(&a, &g).unwrap(), top.h, &dict);
        let fb = graph_features(&assemble(&b, &g).unwrap(), top.h, &dict);
        let plain = wl_kernel(&fa, &fb, top.normalize).unwrap();
        max_diff = max_diff.max((hwl_kernel(&a, &b, &g, &top).unwrap() - plain).abs());
    }
    report(
        "kernel validity",
        worst >= -1e-8 && max_diff <= 1e-12,
        format!("min eigenvalue {worst:.3e} over 50 Gram matrices; top-level vs WL max diff {max_diff:.1e}"),
    );
}

fn hier_points(
    g: &Grammar,
    fz: &Featurizer<'_>,
    n: usize,
    seed: u64,
    value: impl Fn(&Term) -> f64,
) -> Vec<(Term, TrainPoint)> {
    let sampler = Sampler::new(g, default_max_depth(g));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    while out.len() < n {
        let t = sampler.sample(&mut rng).unwrap();
        let key = t.canonical();
        if !seen.insert(key.clone()) {
            continue;
        }
        let p = TrainPoint { key, features: Arc::new(fz.featurize(&t).unwrap()), value: value(&t) };
        out.push((t, p));
    }
    out
}

/// Explicit-inverse posterior and evidence.
fn naive(m: &GpModel, f: &TermFeatures) -> (f64, f64, f64) {
    let h = m.hyperparameters();
    let n = m.len();
    let a = m.covariance();
    let inv = a.clone().try_inverse().unwrap();
    let (mean, scale) = m.standardization();
    let y = DVector::from_iterator(n, m.points().iter().map(|p| (p.value - mean) / scale));
    let k = |x: &TermFeatures, y: &TermFeatures| {
        h.signal_var * level_kernels(x, y, true).iter().zip(&h.lambda).map(|(k, w)| k * w).sum::<f64>()
    };
    let kstar = DVector::from_iterator(n, m.points().iter().map(|p| k(f, &p.features)));
    let mu = mean + scale * (kstar.transpose() * &inv * &y)[0];
    let var = scale * scale * (k(f, f) - (kstar.transpose() * &inv * &kstar)[0]);
    let lml = -0.5 * (y.transpose() * &inv * &y)[0]
        - 0.5 * a.determinant().ln()
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    (mu, var, lml)
}

#[test]
fn gp_correctness() {
    let g = fixtures::nb201_hierarchical();
    let cfg = HwlConfig::uniform(default_max_depth(&g));
    let fz = Featurizer::new(&g, &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut err: f64 = 0.0;
    for (n, seed) in [(2, 1), (5, 2), (10, 3), (20, 4), (30, 5)] {
        let values: Vec<f64> = (0..n + 5).map(|_| rng.random()).collect();
        let pts: Vec<TrainPoint> =
            hier_points(&g, &fz, n + 5, seed, |_| 0.0).into_iter().zip(values).map(|((_, p), v)| TrainPoint { value: v, ..p }).collect();
        let (train, test) = pts.split_at(n);
        let m = GpModel::fit(train.to_vec(), &cfg, &FitOptions::default()).unwrap();
        for p in test {
            let (mu, var) = m.predict_features(&p.features);
            let (mu0, var0, lml0) = naive(&m, &p.features);
            err = err.max((mu - mu0).abs()).max((var - var0.max(0.0)).abs()).max((m.log_marginal_likelihood() - lml0).abs());
        }
    }
    let pts: Vec<TrainPoint> = hier_points(&g, &fz, 15, 9, |_| 0.0)
        .into_iter()
        .enumerate()
        .map(|(i, (_, p))| TrainPoint { value: (i as f64 * 0.37).sin(), ..p })
        .collect();
    let hyper = Hyperparameters { lambda: cfg.lambda.clone(), signal_var: 1.0, noise_var: NOISE_STD_FLOOR * NOISE_STD_FLOOR };
    let m = GpModel::with_hyperparameters(pts.clone(), &cfg, hyper, 0.0).unwrap();
    let interp = pts.iter().map(|p| (m.predict_features(&p.features).0 - p.value).abs()).fold(0.0, f64::max);
    report(
        "GP correctness",
        err <= 1e-8 && interp <= 1e-4,
        format!("max deviation from explicit inverse {err:.1e} (n <= 30); interpolation error {interp:.1e}"),
    );
}

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
fn expected_improvement_values() {
    let a = expected_improvement(0.0, 1.0, 0.0);
    let b = expected_improvement(-1.0, 1.0, 0.0);
    let (qa, qb) = (ei_by_quadrature(0.0, 1.0, 0.0), ei_by_quadrature(-1.0, 1.0, 0.0));
    let zero = expected_improvement(0.0, 0.0, 0.0) == 0.0 && expected_improvement(0.7, 0.0, 0.2) == 0.0;
    let ok = (a - qa).abs() <= 1e-5 && (b - qb).abs() <= 1e-5 && (a - 0.398942).abs() <= 1e-5 && zero;
    report(
        "expected improvement",
        ok,
        format!("EI(mu=f', s=1) = {a:.6} (quadrature {qa:.6}); EI(mu=f'-1, s=1) = {b:.6} (quadrature {qb:.6}); zero-variance cases exact: {zero}"),
    );
}

#[test]
fn validity_under_evolution() {
    let g = fixtures::nb201_hierarchical();
    let d = default_max_depth(&g);
    let sampler = Sampler::new(&g, d);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let valid = |t: &Term| {
        t.depth() <= d
            && check_constraints(t, &g).is_ok()
            && parse_term(&t.canonical(), &g).map(|b| &b == t).unwrap_or(false)
    };
    let (mut total, mut bad) = (0, 0);
    for i in 0..10_000 {
        let a = sampler.sample(&mut rng).unwrap();
        let b = sampler.sample(&mut rng).unwrap();
        let mut out = vec![mutate(&a, &sampler, &mut rng)];
        if i % 2 == 0 {
            let (x, y, _) = crossover(&a, &b, &sampler, &mut rng);
            out.extend([x, y]);
        } else {
            out.push(self_crossover(&a, &sampler, &mut rng).0);
        }
        total += out.len();
        bad += out.iter().filter(|t| !valid(t)).count();
    }
    report(
        "validity under evolution",
        bad == 0,
        format!("{bad} invalid of {total} terms from 10^4 mutations and 10^4 crossovers"),
    );
}

#[test]
fn constraint_compliance() {
    let t0 = Instant::now();
    let g = fixtures::nb201_hierarchical();
    let sampler = Sampler::new(&g, default_max_depth(&g));
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut disconnected, mut wrong_down) = (0, 0);
    for _ in 0..10_000 {
        let t = sampler.sample(&mut rng).unwrap();
        let graph = assemble(&t, &g).unwrap();
        if !graph.is_connected() {
            disconnected += 1;
        }
        if graph.downsample_range() != Some((2, 2)) {
            wrong_down += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    report(
        "constraint compliance",
        disconnected == 0 && wrong_down == 0 && secs < 60.0,
        format!("10^4 samples: {disconnected} disconnected, {wrong_down} with a path not crossing exactly 2 down edges; {secs:.1}s"),
    );
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Acquisition settings scaled down so thirty runs fit the time limit on one core.
fn desk_evolution() -> EvolutionConfig {
    EvolutionConfig { pool: 40, min_iterations: 3, max_iterations: 8, patience: 3, ..Default::default() }
}

#[test]
fn search_efficacy() {
    let t0 = Instant::now();
    let g = fixtures::nb201_hierarchical();
    let run = |strategy, surrogate, seed| {
        let cfg = SearchConfig {
            budget: 50,
            initial: 10,
            workers: 1,
            seed,
            strategy,
            surrogate,
            evolution: desk_evolution(),
            ..Default::default()
        };
        run_search(&g, &cfg, &[], None).unwrap().incumbent().unwrap()
    };
    let seeds: Vec<u64> = (0..10).collect();
    let hwl: Vec<f64> = seeds.iter().map(|&s| run(Strategy::Banat, SurrogateKind::Hwl, s)).collect();
    let wl: Vec<f64> = seeds.iter().map(|&s| run(Strategy::Banat, SurrogateKind::Wl, s)).collect();
    let rs: Vec<f64> = seeds.iter().map(|&s| run(Strategy::Rs, SurrogateKind::Hwl, s)).collect();
    let wins = hwl.iter().zip(&rs).filter(|(a, b)| a < b).count();
    let (mh, mw, mr) = (median(hwl.clone()), median(wl.clone()), median(rs.clone()));
    let secs = t0.elapsed().as_secs_f64();
    report(
        "search efficacy (10 seeds, budget 50)",
        mh <= mw && mw <= mr && wins >= 8 && secs < 600.0,
        format!("median incumbent hWL {mh:.4}, WL {mw:.4}, random {mr:.4}; hWL beats random in {wins}/10 seeds; {secs:.0}s"),
    );
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn surrogate_ablation() {
    let g = fixtures::nb201_hierarchical();
    let depth = default_max_depth(&g);
    let spec = SyntheticSpec::default();
    let value = |t: &Term| evaluate_synthetic(&assemble(t, &g).unwrap(), &spec);
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, cfg) in [("hWL", HwlConfig::uniform(depth)), ("WL", HwlConfig::top_only(depth))] {
        let fz = Featurizer::new(&g, &cfg);
        let all = hier_points(&g, &fz, 300, 2718, value);
        let (train, test) = all.split_at(100);
        let truth: Vec<f64> = test.iter().map(|(_, p)| p.value).collect();
        let mut rhos = Vec::new();
        for n in [25, 50, 100] {
            let pts: Vec<TrainPoint> = train[..n].iter().map(|(_, p)| p.clone()).collect();
            let m = GpModel::fit(pts, &cfg, &FitOptions::default()).unwrap();
            let pred: Vec<f64> = test.iter().map(|(_, p)| m.predict_features(&p.features).0).collect();
            rhos.push(spearman(&pred, &truth));
        }
        lines.push((name, rhos));
    }
    let (h, w) = (&lines[0].1, &lines[1].1);
    for i in 0..3 {
        ok &= h[i] >= w[i] - 0.05;
    }
    ok &= h[2] >= 0.8;
    report(
        "surrogate ablation (Spearman on 200 held-out terms)",
        ok,
        format!(
            "n=25/50/100: hWL {:.3}/{:.3}/{:.3}, WL {:.3}/{:.3}/{:.3}",
            h[0], h[1], h[2], w[0], w[1], w[2]
        ),
    );
}

#[test]
fn determinism() {
    let g = fixtures::nb201_hierarchical();
    let cfg = SearchConfig { budget: 30, initial: 10, workers: 1, seed: 42, evolution: desk_evolution(), ..Default::default() };
    let (mut a, mut b) = (Vec::new(), Vec::new());
    run_search(&g, &cfg, &[], Some(&mut a)).unwrap();
    run_search(&g, &cfg, &[], Some(&mut b)).unwrap();
    report(
        "determinism (seed 42, one worker, budget 30)",
        !a.is_empty() && a == b,
        format!("two run logs of {} bytes, identical: {}", a.len(), a == b),
    );
}
