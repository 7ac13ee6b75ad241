use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::evolution::{crossover, mutate, self_crossover};
use crate::grammar::Sampler;
use crate::kernel::Featurizer;
use crate::surrogate::{GpModel, SurrogateError, TrainPoint};
use crate::term::Term;

/// Expected improvement below `best` for a Gaussian with the given mean and
/// variance.
pub fn expected_improvement(mean: f64, variance: f64, best: f64) -> f64 {
    let sd = variance.max(0.0).sqrt();
    if sd == 0.0 {
        return (best - mean).max(0.0);
    }
    let z = (best - mean) / sd;
    let n = Normal::new(0.0, 1.0).unwrap();
    ((best - mean) * n.cdf(z) + sd * n.pdf(z)).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub pool: usize,
    pub p_mut: f64,
    /// Crossover probability; each crossover is a self-crossover with
    /// probability one half.
    pub p_cross: f64,
    /// Tournament size as a fraction of the pool.
    pub p_tour: f64,
    pub min_iterations: usize,
    pub max_iterations: usize,
    /// Stop once the best fitness has not improved for this many iterations.
    pub patience: usize,
    /// Evaluated terms seeding the initial pool.
    pub seeds: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            pool: 200,
            p_mut: 0.5,
            p_cross: 0.5,
            p_tour: 0.2,
            min_iterations: 10,
            max_iterations: 50,
            patience: 5,
            seeds: 10,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [("p_mut", self.p_mut), ("p_cross", self.p_cross), ("p_tour", self.p_tour)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} = {p} is not a probability"));
            }
        }
        if self.min_iterations > self.max_iterations {
            return Err("min_iterations exceeds max_iterations".into());
        }
        if self.pool == 0 {
            return Err("pool must be positive".into());
        }
        Ok(())
    }
}

/// Scores candidate terms by EI, caching per canonical string.
pub struct Acquisition<'a, 'g> {
    pub model: &'a GpModel,
    pub featurizer: &'a Featurizer<'g>,
    pub best: f64,
    cache: HashMap<String, f64>,
}

impl<'a, 'g> Acquisition<'a, 'g> {
    pub fn new(model: &'a GpModel, featurizer: &'a Featurizer<'g>, best: f64) -> Self {
        Acquisition { model, featurizer, best, cache: HashMap::new() }
    }

    pub fn score(&mut self, t: &Term, key: &str) -> f64 {
        if let Some(&v) = self.cache.get(key) {
            return v;
        }
        let v = match self.featurizer.featurize(t) {
            Ok(f) => {
                let (mu, var) = self.model.predict_features(&f);
                expected_improvement(mu, var, self.best)
            }
            Err(_) => f64::NEG_INFINITY,
        };
        self.cache.insert(key.to_string(), v);
        v
    }

    pub fn evaluations(&self) -> usize {
        self.cache.len()
    }
}

struct Member {
    term: Term,
    key: String,
    fitness: f64,
}

/// Evolves a pool seeded with `incumbents` (best first) and random samples
/// toward high EI. Returns the best term whose canonical string is not in
/// `exclude`, or `None` if every candidate seen was excluded.
pub fn optimize_acquisition<R: Rng + ?Sized>(
    acq: &mut Acquisition<'_, '_>,
    sampler: &Sampler<'_>,
    incumbents: &[Term],
    exclude: &HashSet<String>,
    cfg: &EvolutionConfig,
    rng: &mut R,
) -> Option<Term> {
    let mut best: Option<(f64, Term, String)> = None;
    let consider = |m: &Member, best: &mut Option<(f64, Term, String)>| {
        if !exclude.contains(&m.key) && best.as_ref().is_none_or(|(f, _, _)| m.fitness > *f) {
            *best = Some((m.fitness, m.term.clone(), m.key.clone()));
        }
    };
    let mut pool: Vec<Member> = Vec::with_capacity(cfg.pool);
    let mut in_pool: HashSet<String> = HashSet::new();
    for t in incumbents.iter().take(cfg.seeds.min(cfg.pool)) {
        let key = t.canonical();
        if in_pool.insert(key.clone()) {
            let fitness = acq.score(t, &key);
            pool.push(Member { term: t.clone(), key, fitness });
        }
    }
    let mut misses = 0;
    while pool.len() < cfg.pool && misses < 10 * cfg.pool {
        let Ok(t) = sampler.sample(rng) else { break };
        let key = t.canonical();
        if !in_pool.insert(key.clone()) {
            misses += 1;
            continue;
        }
        let fitness = acq.score(&t, &key);
        pool.push(Member { term: t, key, fitness });
    }
    for m in &pool {
        consider(m, &mut best);
    }

    let tour = ((cfg.p_tour * pool.len() as f64).round() as usize).max(1);
    let pick = |pool: &[Member], rng: &mut R| -> usize {
        let idx: Vec<usize> = (0..pool.len()).collect();
        *idx.choose_multiple(rng, tour)
            .max_by(|&&a, &&b| pool[a].fitness.total_cmp(&pool[b].fitness).then(b.cmp(&a)))
            .unwrap()
    };
    let mut best_so_far = best.as_ref().map_or(f64::NEG_INFINITY, |b| b.0);
    let mut stale = 0;
    for iteration in 0..cfg.max_iterations {
        if pool.is_empty() {
            break;
        }
        let mut children: Vec<Term> = Vec::with_capacity(cfg.pool);
        while children.len() < cfg.pool {
            let a = pick(&pool, rng);
            let r: f64 = rng.random();
            if r < cfg.p_mut {
                children.push(mutate(&pool[a].term, sampler, rng));
            } else if r < cfg.p_mut + cfg.p_cross {
                if rng.random_bool(0.5) {
                    children.push(self_crossover(&pool[a].term, sampler, rng).0);
                } else {
                    let b = pick(&pool, rng);
                    let (x, y, _) = crossover(&pool[a].term, &pool[b].term, sampler, rng);
                    children.push(x);
                    if children.len() < cfg.pool {
                        children.push(y);
                    }
                }
            } else {
                children.push(pool[a].term.clone());
            }
        }
        for t in children {
            let key = t.canonical();
            if !in_pool.insert(key.clone()) {
                continue;
            }
            let fitness = acq.score(&t, &key);
            let m = Member { term: t, key, fitness };
            consider(&m, &mut best);
            pool.push(m);
        }
        // survivors: the best `pool` members, ties to the older one
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.sort_by(|&a, &b| pool[b].fitness.total_cmp(&pool[a].fitness).then(a.cmp(&b)));
        order.truncate(cfg.pool);
        order.sort_unstable();
        let mut keep = vec![false; pool.len()];
        order.iter().for_each(|&i| keep[i] = true);
        let mut i = 0;
        pool.retain(|m| {
            let k = keep[i];
            i += 1;
            if !k {
                in_pool.remove(&m.key);
            }
            k
        });

        let now = best.as_ref().map_or(f64::NEG_INFINITY, |b| b.0);
        if now > best_so_far {
            best_so_far = now;
            stale = 0;
        } else {
            stale += 1;
        }
        if iteration + 1 >= cfg.min_iterations && stale >= cfg.patience {
            break;
        }
    }
    best.map(|(_, t, _)| t)
}

/// Picks `b` distinct terms; after each pick its posterior mean is added as
/// a hallucinated observation before the next pick.
#[allow(clippy::too_many_arguments)]
pub fn kriging_believer_batch<R: Rng + ?Sized>(
    model: &GpModel,
    featurizer: &Featurizer<'_>,
    sampler: &Sampler<'_>,
    best: f64,
    b: usize,
    incumbents: &[Term],
    exclude: &HashSet<String>,
    cfg: &EvolutionConfig,
    rng: &mut R,
) -> Result<Vec<Term>, SurrogateError> {
    let mut model = model.clone();
    let mut exclude = exclude.clone();
    let mut picks = Vec::with_capacity(b);
    for i in 0..b {
        let mut acq = Acquisition::new(&model, featurizer, best);
        let Some(t) = optimize_acquisition(&mut acq, sampler, incumbents, &exclude, cfg, rng) else { break };
        let key = t.canonical();
        exclude.insert(key.clone());
        if i + 1 < b {
            let f = Arc::new(featurizer.featurize(&t)?);
            let (mu, _) = model.predict_features(&f);
            model = model.condition_on(TrainPoint { key, features: f, value: mu })?;
        }
        picks.push(t);
    }
    Ok(picks)
}
