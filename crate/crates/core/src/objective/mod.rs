//! Desk-scale objectives over assembled graphs and the client for external
//! evaluator processes.

mod external;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::ArchGraph;

pub use external::{ExternalEvaluator, Request, Response};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(3600);

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("could not start evaluator `{command}`: {source}")]
    Spawn { command: String, source: std::io::Error },
    #[error("evaluator timed out after {0:?}")]
    Timeout(Duration),
    #[error("malformed evaluator response: {0}")]
    Malformed(String),
    #[error("evaluator exited: {0}")]
    Exited(String),
    #[error("evaluator reported: {0}")]
    Worker(String),
    #[error("i/o error talking to evaluator: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid objective spec: {0}")]
    Spec(String),
}

/// Target for the synthetic objective: a primitive mix and a depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub target: BTreeMap<String, f64>,
    pub target_depth: usize,
    pub weights: (f64, f64),
}

impl Default for SyntheticSpec {
    /// Conv/relu/batch-heavy mix with a shallow target depth. Random samples
    /// of the bundled hierarchical grammar have longest paths of about 76 to
    /// 181, so the depth term mostly rewards getting shallower; a target in
    /// the middle of that range folds the term into a V that random search
    /// already sits at the bottom of.
    fn default() -> Self {
        let target = [("conv3x3", 0.3), ("relu", 0.3), ("batch", 0.3), ("id", 0.1)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        SyntheticSpec { target, target_depth: 80, weights: (0.5, 0.5) }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let sum: f64 = self.target.values().sum();
        if (sum - 1.0).abs() > 1e-9 || self.target.values().any(|&p| p < 0.0) {
            return Err(ObjectiveError::Spec(format!("target mix sums to {sum}")));
        }
        if self.target_depth == 0 {
            return Err(ObjectiveError::Spec("target depth must be positive".into()));
        }
        let (a, b) = self.weights;
        if a < 0.0 || b < 0.0 || (a + b - 1.0).abs() > 1e-9 {
            return Err(ObjectiveError::Spec("weights must be non-negative and sum to one".into()));
        }
        Ok(())
    }
}

/// Total-variation distance between the pruned graph's label histogram and
/// the target, mixed with the relative longest-path error. Disconnected
/// graphs score 1.
pub fn evaluate_synthetic(g: &ArchGraph, spec: &SyntheticSpec) -> f64 {
    if !g.is_connected() {
        return 1.0;
    }
    let stats = g.stats();
    let total = stats.edges as f64;
    let mut tv = 0.0;
    for (label, &count) in &stats.labels {
        let p = count as f64 / total;
        tv += (p - spec.target.get(label).copied().unwrap_or(0.0)).abs();
    }
    for (label, &q) in &spec.target {
        if !stats.labels.contains_key(label) {
            tv += q;
        }
    }
    let tv = 0.5 * tv;
    let lstar = spec.target_depth as f64;
    let depth = ((stats.longest_path as f64 - lstar).abs() / lstar).min(1.0);
    (spec.weights.0 * tv + spec.weights.1 * depth).clamp(0.0, 1.0)
}

/// 64-bit FNV-1a, stable across platforms and releases.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Synthetic value plus Gaussian noise drawn from a generator keyed by the
/// seed and the term, clamped to [0, 1].
pub fn evaluate_noisy(g: &ArchGraph, spec: &SyntheticSpec, sigma: f64, seed: u64, term_key: &str) -> f64 {
    let base = evaluate_synthetic(g, spec);
    if sigma <= 0.0 {
        return base;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(term_key.as_bytes()));
    let noise = Normal::new(0.0, sigma).expect("positive sigma").sample(&mut rng);
    (base + noise).clamp(0.0, 1.0)
}

/// Which objective to run; parsed from `synthetic`, `noisy:<sigma>` or
/// `external:<command line>`.
#[derive(Clone, Debug, PartialEq)]
pub enum ObjectiveKind {
    Synthetic,
    Noisy(f64),
    External { command: Vec<String>, timeout: Duration },
}

impl FromStr for ObjectiveKind {
    type Err = ObjectiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "synthetic" || s == "synthetic-mix" {
            return Ok(ObjectiveKind::Synthetic);
        }
        if let Some(rest) = s.strip_prefix("noisy:").or_else(|| s.strip_prefix("synthetic-mix-noisy:")) {
            let sigma: f64 = rest.parse().map_err(|_| ObjectiveError::Spec(format!("bad noise level `{rest}`")))?;
            if !(sigma >= 0.0) {
                return Err(ObjectiveError::Spec(format!("bad noise level `{rest}`")));
            }
            return Ok(ObjectiveKind::Noisy(sigma));
        }
        if let Some(rest) = s.strip_prefix("external:") {
            let command: Vec<String> = rest.split_whitespace().map(String::from).collect();
            if command.is_empty() {
                return Err(ObjectiveError::Spec("empty external command".into()));
            }
            return Ok(ObjectiveKind::External { command, timeout: DEFAULT_TIMEOUT });
        }
        Err(ObjectiveError::Spec(format!("unknown objective `{s}`")))
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectiveKind::Synthetic => write!(f, "synthetic"),
            ObjectiveKind::Noisy(s) => write!(f, "noisy:{s}"),
            ObjectiveKind::External { command, .. } => write!(f, "external:{}", command.join(" ")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub synthetic: SyntheticSpec,
    /// Seed for the noisy variant.
    pub seed: u64,
}

impl ObjectiveSpec {
    pub fn synthetic() -> Self {
        ObjectiveSpec { kind: ObjectiveKind::Synthetic, synthetic: SyntheticSpec::default(), seed: 0 }
    }

    /// One evaluator per worker slot.
    pub fn instantiate(&self) -> Result<Box<dyn Objective>, ObjectiveError> {
        self.synthetic.validate()?;
        Ok(match &self.kind {
            ObjectiveKind::Synthetic => Box::new(Synthetic { spec: self.synthetic.clone(), sigma: 0.0, seed: 0 }),
            ObjectiveKind::Noisy(sigma) => {
                Box::new(Synthetic { spec: self.synthetic.clone(), sigma: *sigma, seed: self.seed })
            }
            ObjectiveKind::External { command, timeout } => Box::new(ExternalEvaluator::new(command.clone(), *timeout)),
        })
    }
}

/// Something that scores an architecture; lower is better.
pub trait Objective: Send {
    fn evaluate(&mut self, term: &str, graph: &ArchGraph) -> Result<f64, ObjectiveError>;
}

struct Synthetic {
    spec: SyntheticSpec,
    sigma: f64,
    seed: u64,
}

impl Objective for Synthetic {
    fn evaluate(&mut self, term: &str, graph: &ArchGraph) -> Result<f64, ObjectiveError> {
        Ok(evaluate_noisy(graph, &self.spec, self.sigma, self.seed, term))
    }
}

#[cfg(test)]
mod tests;
