//! The optimization loop: initial design, GP fit, evolutionary EI
//! maximization with Kriging-Believer hallucination of in-flight
//! evaluations, and asynchronous dispatch to evaluator workers.

mod acquisition;
mod evolution;

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{assemble, ArchGraph};
use crate::grammar::{default_max_depth, Grammar, SampleError, Sampler};
use crate::kernel::{Featurizer, HwlConfig, TermFeatures};
use crate::objective::{ObjectiveError, ObjectiveSpec};
use crate::surrogate::{FitOptions, GpModel, Hyperparameters, SurrogateError, TrainPoint};
use crate::term::{parse_term, Term, TermError};

pub use acquisition::{
    expected_improvement, kriging_believer_batch, optimize_acquisition, Acquisition, EvolutionConfig,
};
pub use evolution::{crossover, mutate, self_crossover, swap_subterms, OPERATOR_ATTEMPTS};

/// Population and tournament size of the regularized-evolution baseline.
pub const RE_POPULATION: usize = 30;
pub const RE_SAMPLE: usize = 10;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error("bad record in run log: {0}")]
    Log(String),
    #[error(transparent)]
    Term(#[from] TermError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Banat,
    Rs,
    Re,
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "banat" => Ok(Strategy::Banat),
            "rs" => Ok(Strategy::Rs),
            "re" => Ok(Strategy::Re),
            _ => Err(format!("unknown strategy `{s}` (banat, rs, re)")),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Banat => "banat",
            Strategy::Rs => "rs",
            Strategy::Re => "re",
        })
    }
}

/// Surrogate kernel: hierarchical over all fold levels, or WL on the full graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    Hwl,
    Wl,
}

impl FromStr for SurrogateKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hwl" => Ok(SurrogateKind::Hwl),
            "wl" => Ok(SurrogateKind::Wl),
            _ => Err(format!("unknown surrogate `{s}` (hwl, wl)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SearchConfig {
    pub budget: usize,
    pub initial: usize,
    pub workers: usize,
    /// Terms picked per Kriging-Believer round.
    pub batch: usize,
    pub seed: u64,
    pub objective: ObjectiveSpec,
    pub strategy: Strategy,
    pub surrogate: SurrogateKind,
    /// Overrides the kernel implied by `surrogate`.
    pub kernel: Option<HwlConfig>,
    pub evolution: EvolutionConfig,
    pub fit: FitOptions,
    /// Term depth bound; defaults to the grammar's.
    pub max_depth: Option<usize>,
    /// Value recorded for failed evaluations.
    pub penalty: f64,
    /// Record wall-clock times (makes logs differ between runs).
    pub timing: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            budget: 100,
            initial: 10,
            workers: 8,
            batch: 1,
            seed: 0,
            objective: ObjectiveSpec::synthetic(),
            strategy: Strategy::Banat,
            surrogate: SurrogateKind::Hwl,
            kernel: None,
            evolution: EvolutionConfig::default(),
            fit: FitOptions::default(),
            max_depth: None,
            penalty: 1.0,
            timing: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.workers == 0 || self.batch == 0 {
            return Err(SearchError::Config("workers and batch must be at least 1".into()));
        }
        if self.initial > self.budget {
            return Err(SearchError::Config("initial design exceeds the budget".into()));
        }
        self.evolution.validate().map_err(SearchError::Config)?;
        if let Some(k) = &self.kernel {
            k.validate().map_err(|e| SearchError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Kernel for a grammar whose terms have at most `max_depth` levels.
    pub fn kernel_for(&self, max_depth: usize) -> HwlConfig {
        self.kernel.clone().unwrap_or_else(|| match self.surrogate {
            SurrogateKind::Hwl => HwlConfig::uniform(max_depth),
            SurrogateKind::Wl => HwlConfig::top_only(max_depth),
        })
    }
}

/// One evaluation in the run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// Position in completion order.
    pub iteration: usize,
    /// Position in proposal order.
    pub proposal: usize,
    pub term: String,
    pub value: f64,
    pub incumbent: f64,
    /// How the term was chosen: initial, random, model, mutation.
    pub source: String,
    pub worker: usize,
    #[serde(default)]
    pub hyper: Option<Hyperparameters>,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub wall_time: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunHistory {
    pub records: Vec<Record>,
}

impl RunHistory {
    pub fn incumbent(&self) -> Option<f64> {
        self.records.last().map(|r| r.incumbent)
    }

    pub fn best(&self) -> Option<&Record> {
        self.records.iter().min_by(|a, b| a.value.total_cmp(&b.value))
    }

    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect()
    }
}

/// Reads a JSON-lines run log; blank lines are skipped.
pub fn read_log<R: BufRead>(r: R) -> Result<Vec<Record>, SearchError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SearchError::Log(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

struct Job {
    id: usize,
    term: String,
    graph: Option<ArchGraph>,
}

struct Done {
    id: usize,
    worker: usize,
    result: Result<f64, String>,
}

struct Proposal {
    term: Term,
    source: &'static str,
    hyper: Option<Hyperparameters>,
}

struct Pending {
    term: Term,
    key: String,
    source: &'static str,
    hyper: Option<Hyperparameters>,
}

struct State<'g> {
    g: &'g Grammar,
    cfg: &'g SearchConfig,
    sampler: Sampler<'g>,
    featurizer: Featurizer<'g>,
    kernel: HwlConfig,
    rng: ChaCha8Rng,
    /// Completed evaluations in completion order.
    done: Vec<(Term, String, f64)>,
    seen: HashSet<String>,
    features: HashMap<String, Arc<TermFeatures>>,
    population: VecDeque<usize>,
    proposals: usize,
}

impl<'g> State<'g> {
    fn random(&mut self) -> Result<Term, SearchError> {
        let mut last = None;
        for _ in 0..1000 {
            let t = self.sampler.sample(&mut self.rng)?;
            if !self.seen.contains(&t.canonical()) {
                return Ok(t);
            }
            last = Some(t);
        }
        // the space is (nearly) exhausted; repeat rather than stall
        Ok(last.expect("loop ran"))
    }

    fn features(&mut self, t: &Term, key: &str) -> Result<Arc<TermFeatures>, SearchError> {
        if let Some(f) = self.features.get(key) {
            return Ok(f.clone());
        }
        let f = Arc::new(self.featurizer.featurize(t).map_err(SurrogateError::from)?);
        self.features.insert(key.to_string(), f.clone());
        Ok(f)
    }

    fn next_random(&mut self, source: &'static str) -> Result<Proposal, SearchError> {
        let t = self.random()?;
        Ok(Proposal { term: t, source, hyper: None })
    }

    /// Proposes up to `k` terms (at least one).
    fn propose(&mut self, pending: &[&Pending], k: usize) -> Result<Vec<Proposal>, SearchError> {
        if self.proposals < self.cfg.initial {
            return Ok(vec![self.next_random("initial")?]);
        }
        match self.cfg.strategy {
            Strategy::Rs => Ok(vec![self.next_random("random")?]),
            Strategy::Re => Ok(vec![self.propose_re()?]),
            Strategy::Banat => self.propose_banat(pending, k),
        }
    }

    fn propose_re(&mut self) -> Result<Proposal, SearchError> {
        if self.population.len() < RE_POPULATION.min(self.cfg.budget) {
            return self.next_random("random");
        }
        let members: Vec<usize> = self.population.iter().copied().collect();
        let parent = *members
            .choose_multiple(&mut self.rng, RE_SAMPLE)
            .min_by(|&&a, &&b| self.done[a].2.total_cmp(&self.done[b].2).then(a.cmp(&b)))
            .unwrap();
        let parent = self.done[parent].0.clone();
        for _ in 0..50 {
            let child = mutate(&parent, &self.sampler, &mut self.rng);
            if !self.seen.contains(&child.canonical()) {
                return Ok(Proposal { term: child, source: "mutation", hyper: None });
            }
        }
        self.next_random("random")
    }

    fn propose_banat(&mut self, pending: &[&Pending], k: usize) -> Result<Vec<Proposal>, SearchError> {
        if self.done.len() < 2 {
            return Ok(vec![self.next_random("random")?]);
        }
        let mut points = Vec::with_capacity(self.done.len());
        for i in 0..self.done.len() {
            let (t, key, v) = self.done[i].clone();
            points.push(TrainPoint { features: self.features(&t, &key)?, key, value: v });
        }
        let mut model = match GpModel::fit(points, &self.kernel, &self.cfg.fit) {
            Ok(m) => m,
            Err(SurrogateError::NotPositiveDefinite(_)) => return Ok(vec![self.next_random("random")?]),
            Err(e) => return Err(e.into()),
        };
        let hyper = model.hyperparameters().clone();
        // in-flight evaluations enter the model at their posterior mean
        for p in pending {
            let f = self.features(&p.term, &p.key)?;
            let (mu, _) = model.predict_features(&f);
            model = model.condition_on(TrainPoint { key: p.key.clone(), features: f, value: mu })?;
        }
        let best = self.done.iter().map(|d| d.2).fold(f64::INFINITY, f64::min);
        let mut order: Vec<usize> = (0..self.done.len()).collect();
        order.sort_by(|&a, &b| self.done[a].2.total_cmp(&self.done[b].2).then(a.cmp(&b)));
        let incumbents: Vec<Term> =
            order.iter().take(self.cfg.evolution.seeds).map(|&i| self.done[i].0.clone()).collect();
        let picks = kriging_believer_batch(
            &model,
            &self.featurizer,
            &self.sampler,
            best,
            k.max(1),
            &incumbents,
            &self.seen,
            &self.cfg.evolution,
            &mut self.rng,
        )?;
        if picks.is_empty() {
            let mut p = self.next_random("random")?;
            p.hyper = Some(hyper);
            return Ok(vec![p]);
        }
        Ok(picks.into_iter().map(|t| Proposal { term: t, source: "model", hyper: Some(hyper.clone()) }).collect())
    }
}

/// Runs a search. `resume` holds records of an earlier run with the same
/// settings; they count against the budget. Each new record is written to
/// `log` as one JSON line as soon as it completes.
pub fn run_search(
    g: &Grammar,
    cfg: &SearchConfig,
    resume: &[Record],
    mut log: Option<&mut dyn Write>,
) -> Result<RunHistory, SearchError> {
    cfg.validate()?;
    let max_depth = cfg.max_depth.unwrap_or_else(|| default_max_depth(g));
    let kernel = cfg.kernel_for(max_depth);
    let mut st = State {
        g,
        cfg,
        sampler: Sampler::new(g, max_depth),
        featurizer: Featurizer::new(g, &kernel),
        kernel,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        done: Vec::new(),
        seen: HashSet::new(),
        features: HashMap::new(),
        population: VecDeque::new(),
        proposals: 0,
    };
    let mut history = RunHistory::default();
    for r in resume {
        let t = parse_term(&r.term, g)?;
        let key = t.canonical();
        st.seen.insert(key.clone());
        st.done.push((t, key, r.value));
        st.population.push_back(st.done.len() - 1);
        if st.population.len() > RE_POPULATION {
            st.population.pop_front();
        }
        history.records.push(r.clone());
    }
    if !resume.is_empty() {
        st.proposals = resume.iter().map(|r| r.proposal + 1).max().unwrap_or(0);
        st.rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (resume.len() as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    let started = Instant::now();

    let objectives = (0..cfg.workers).map(|_| cfg.objective.instantiate()).collect::<Result<Vec<_>, _>>()?;
    let (done_tx, done_rx) = mpsc::channel::<Done>();
    let mut job_txs = Vec::with_capacity(cfg.workers);
    let mut handles = Vec::with_capacity(cfg.workers);
    for (w, mut obj) in objectives.into_iter().enumerate() {
        let (tx, rx) = mpsc::channel::<Job>();
        let done_tx = done_tx.clone();
        job_txs.push(tx);
        handles.push(thread::spawn(move || {
            for job in rx {
                let result = match &job.graph {
                    Some(graph) => obj.evaluate(&job.term, graph).map_err(|e| e.to_string()),
                    None => Err("term does not assemble".to_string()),
                };
                let msg = Done { id: job.id, worker: w, result };
                if done_tx.send(msg).is_err() {
                    break;
                }
            }
        }));
    }
    drop(done_tx);

    let mut in_flight: HashMap<usize, Pending> = HashMap::new();
    let mut free: Vec<usize> = (0..cfg.workers).rev().collect();
    let mut dispatched = history.records.len();
    let mut incumbent = history.incumbent().unwrap_or(f64::INFINITY);
    let result = (|| -> Result<(), SearchError> {
        while history.records.len() < cfg.budget {
            while dispatched < cfg.budget && !free.is_empty() {
                let mut ids: Vec<&usize> = in_flight.keys().collect();
                ids.sort();
                let pending: Vec<&Pending> = ids.into_iter().map(|i| &in_flight[i]).collect();
                let k = cfg.batch.min(free.len()).min(cfg.budget - dispatched);
                let batch = st.propose(&pending, k)?;
                for Proposal { term, source, hyper } in batch {
                    let key = term.canonical();
                    st.seen.insert(key.clone());
                    let id = st.proposals;
                    st.proposals += 1;
                    let graph = assemble(&term, st.g).ok();
                    let w = free.pop().unwrap();
                    job_txs[w]
                        .send(Job { id, term: key.clone(), graph })
                        .map_err(|_| SearchError::Config("worker stopped".into()))?;
                    in_flight.insert(id, Pending { term, key, source, hyper });
                    dispatched += 1;
                }
            }
            let Ok(done) = done_rx.recv() else {
                return Err(SearchError::Config("all workers stopped".into()));
            };
            free.push(done.worker);
            let p = in_flight.remove(&done.id).expect("known job");
            let (value, error) = match done.result {
                Ok(v) if v.is_finite() => (v, None),
                Ok(v) => (cfg.penalty, Some(format!("non-finite value {v}"))),
                Err(e) => (cfg.penalty, Some(e)),
            };
            incumbent = incumbent.min(value);
            let record = Record {
                iteration: history.records.len(),
                proposal: done.id,
                term: p.key.clone(),
                value,
                incumbent,
                source: p.source.to_string(),
                worker: done.worker,
                hyper: p.hyper,
                error,
                wall_time: cfg.timing.then(|| started.elapsed().as_secs_f64()),
            };
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{}", serde_json::to_string(&record).expect("record serializes"))?;
                w.flush()?;
            }
            history.records.push(record);
            st.done.push((p.term, p.key, value));
            st.population.push_back(st.done.len() - 1);
            if st.population.len() > RE_POPULATION {
                st.population.pop_front();
            }
        }
        Ok(())
    })();
    drop(job_txs);
    for h in handles {
        let _ = h.join();
    }
    result.map(|_| history)
}

#[cfg(test)]
mod tests;
