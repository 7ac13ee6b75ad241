//! Gaussian-process regression over terms with the hierarchical WL kernel.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::Grammar;
use crate::kernel::{level_kernels, Featurizer, HwlConfig, KernelError, LabelDictionary, LevelGrams, TermFeatures};
use crate::term::Term;

pub const DEFAULT_JITTER: f64 = 1e-6;
pub const MAX_JITTER: f64 = 1e-2;
/// Smallest noise standard deviation the optimizer may pick.
pub const NOISE_STD_FLOOR: f64 = 1e-4;

const LOG_SIGNAL: (f64, f64) = (-4.6, 4.6);
const LOG_NOISE: (f64, f64) = (-18.42, 0.0);
const THETA: (f64, f64) = (-6.0, 6.0);

#[derive(Clone, Debug, Error, PartialEq)]
pub enum SurrogateError {
    #[error("need at least {0} observations")]
    TooFewObservations(usize),
    #[error("observation value {0} is not finite")]
    NonFinite(f64),
    #[error("covariance matrix is not positive definite even with jitter {0}")]
    NotPositiveDefinite(f64),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub term: Term,
    pub value: f64,
    /// Hallucinated value for an evaluation still in flight.
    pub pending: bool,
}

/// Kernel weights and variances, on the standardized target scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Weight of fold level `i + 2`; sums to one over active levels.
    pub lambda: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    pub optimize: bool,
    pub restarts: usize,
    /// Total likelihood evaluations across restarts.
    pub budget: usize,
    pub jitter: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { optimize: true, restarts: 5, budget: 500, jitter: DEFAULT_JITTER }
    }
}

/// A training point already featurized; `key` is the canonical term string.
#[derive(Clone, Debug)]
pub struct TrainPoint {
    pub key: String,
    pub features: Arc<TermFeatures>,
    pub value: f64,
}

/// Fitted GP. Immutable; `predict` is safe to call concurrently.
#[derive(Clone, Debug)]
pub struct GpModel {
    kernel: HwlConfig,
    points: Vec<TrainPoint>,
    grams: LevelGrams,
    hyper: Hyperparameters,
    mean: f64,
    scale: f64,
    jitter: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    lml: f64,
    evaluations: usize,
}

struct Factor {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    lml: f64,
    jitter: f64,
}

fn factor(k: &DMatrix<f64>, hyper: &Hyperparameters, y: &DVector<f64>, jitter: f64) -> Result<Factor, SurrogateError> {
    let n = k.nrows();
    let mut j = jitter;
    loop {
        let mut c = k * hyper.signal_var;
        for i in 0..n {
            c[(i, i)] += hyper.noise_var + j;
        }
        if let Some(chol) = Cholesky::new(c) {
            let alpha = chol.solve(y);
            let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
            let lml = -0.5 * y.dot(&alpha) - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
            return Ok(Factor { chol, alpha, lml, jitter: j });
        }
        if j >= MAX_JITTER {
            return Err(SurrogateError::NotPositiveDefinite(j));
        }
        j = (j * 10.0).min(MAX_JITTER);
    }
}

fn standardize(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

/// Softmax over the active levels; inactive levels stay at zero.
fn weights(theta: &[f64], active: &[bool]) -> Vec<f64> {
    let mut out = vec![0.0; active.len()];
    let idx: Vec<usize> = (0..active.len()).filter(|&i| active[i]).collect();
    let m = idx.iter().map(|&i| theta[i]).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = idx.iter().map(|&i| (theta[i] - m).exp()).sum();
    for &i in &idx {
        out[i] = (theta[i] - m).exp() / z;
    }
    out
}

impl GpModel {
    /// Fits hyperparameters by maximizing the log marginal likelihood, or
    /// keeps those of `kernel` (unit signal, 10⁻² noise) if `opts.optimize`
    /// is off. Points are sorted by key first, so input order does not matter.
    pub fn fit(mut points: Vec<TrainPoint>, kernel: &HwlConfig, opts: &FitOptions) -> Result<Self, SurrogateError> {
        kernel.validate()?;
        if points.is_empty() {
            return Err(SurrogateError::TooFewObservations(1));
        }
        if let Some(p) = points.iter().find(|p| !p.value.is_finite()) {
            return Err(SurrogateError::NonFinite(p.value));
        }
        points.sort_by(|a, b| a.key.cmp(&b.key).then(a.value.total_cmp(&b.value)));
        let feats: Vec<&TermFeatures> = points.iter().map(|p| &*p.features).collect();
        let grams = LevelGrams::new(&feats, kernel.normalize);
        let values: Vec<f64> = points.iter().map(|p| p.value).collect();
        let (mean, scale) = standardize(&values);
        let y = DVector::from_iterator(values.len(), values.iter().map(|v| (v - mean) / scale));

        let active = kernel.active();
        let total: f64 = kernel.lambda.iter().sum();
        let init = Hyperparameters {
            lambda: kernel.lambda.iter().map(|w| w / total).collect(),
            signal_var: 1.0,
            noise_var: 1e-2,
        };
        let (hyper, evaluations) = if opts.optimize {
            optimize(&grams, &y, &init, &active, opts)
        } else {
            (init, 0)
        };
        Self::assemble(kernel, points, grams, hyper, mean, scale, opts.jitter, evaluations)
    }

    /// Model with the given hyperparameters and no search.
    pub fn with_hyperparameters(
        mut points: Vec<TrainPoint>,
        kernel: &HwlConfig,
        hyper: Hyperparameters,
        jitter: f64,
    ) -> Result<Self, SurrogateError> {
        if points.is_empty() {
            return Err(SurrogateError::TooFewObservations(1));
        }
        points.sort_by(|a, b| a.key.cmp(&b.key).then(a.value.total_cmp(&b.value)));
        let feats: Vec<&TermFeatures> = points.iter().map(|p| &*p.features).collect();
        let grams = LevelGrams::new(&feats, kernel.normalize);
        let values: Vec<f64> = points.iter().map(|p| p.value).collect();
        let (mean, scale) = standardize(&values);
        Self::assemble(kernel, points, grams, hyper, mean, scale, jitter, 0)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        kernel: &HwlConfig,
        points: Vec<TrainPoint>,
        grams: LevelGrams,
        hyper: Hyperparameters,
        mean: f64,
        scale: f64,
        jitter: f64,
        evaluations: usize,
    ) -> Result<Self, SurrogateError> {
        let y = DVector::from_iterator(points.len(), points.iter().map(|p| (p.value - mean) / scale));
        let k = grams.combine(&hyper.lambda);
        let f = factor(&k, &hyper, &y, jitter)?;
        let mut kernel = kernel.clone();
        kernel.lambda = hyper.lambda.clone();
        Ok(GpModel {
            kernel,
            points,
            grams,
            hyper,
            mean,
            scale,
            jitter: f.jitter,
            chol: f.chol,
            alpha: f.alpha,
            lml: f.lml,
            evaluations,
        })
    }

    /// Adds one observation with the current hyperparameters and
    /// standardization (Kriging Believer step).
    pub fn condition_on(&self, point: TrainPoint) -> Result<Self, SurrogateError> {
        let n = self.points.len();
        let ks = self.cross_levels(&point.features);
        let own = level_kernels(&point.features, &point.features, self.kernel.normalize);
        let mut mats = Vec::with_capacity(self.grams.mats.len());
        for (l, m) in self.grams.mats.iter().enumerate() {
            let mut big = m.clone().resize(n + 1, n + 1, 0.0);
            for i in 0..n {
                big[(i, n)] = ks[i][l];
                big[(n, i)] = ks[i][l];
            }
            big[(n, n)] = own[l];
            mats.push(big);
        }
        let mut points = self.points.clone();
        points.push(point);
        let grams = LevelGrams { mats };
        Self::assemble(
            &self.kernel,
            points,
            grams,
            self.hyper.clone(),
            self.mean,
            self.scale,
            self.jitter,
            0,
        )
    }

    fn cross_levels(&self, f: &TermFeatures) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| level_kernels(f, &p.features, self.kernel.normalize)).collect()
    }

    /// Posterior mean and latent variance on the original target scale.
    pub fn predict_features(&self, f: &TermFeatures) -> (f64, f64) {
        let lam = &self.hyper.lambda;
        let combine = |ks: &[f64]| ks.iter().zip(lam).map(|(k, w)| k * w).sum::<f64>();
        let kstar = DVector::from_iterator(
            self.points.len(),
            self.cross_levels(f).iter().map(|ks| self.hyper.signal_var * combine(ks)),
        );
        let kss = self.hyper.signal_var * combine(&level_kernels(f, f, self.kernel.normalize));
        let mu = kstar.dot(&self.alpha);
        let v = self.chol.l_dirty().solve_lower_triangular(&kstar).expect("factor is nonsingular");
        let var = (kss - v.dot(&v)).max(0.0);
        (self.mean + self.scale * mu, self.scale * self.scale * var)
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn kernel(&self) -> &HwlConfig {
        &self.kernel
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// (mean, standard deviation) used to standardize targets.
    pub fn standardization(&self) -> (f64, f64) {
        (self.mean, self.scale)
    }

    pub fn points(&self) -> &[TrainPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Likelihood evaluations spent by the hyperparameter search.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    /// σ_f²·K + (σ_n² + jitter)·I on the standardized scale.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mut c = self.grams.combine(&self.hyper.lambda) * self.hyper.signal_var;
        for i in 0..c.nrows() {
            c[(i, i)] += self.hyper.noise_var + self.jitter;
        }
        c
    }

    /// Per-level Gram matrices of the training points, in sorted key order.
    pub fn level_grams(&self) -> &LevelGrams {
        &self.grams
    }
}

/// Coordinate ascent in log space from several fixed starts.
fn optimize(
    grams: &LevelGrams,
    y: &DVector<f64>,
    init: &Hyperparameters,
    active: &[bool],
    opts: &FitOptions,
) -> (Hyperparameters, usize) {
    let m = active.len();
    let learn_theta = active.iter().filter(|&&a| a).count() > 1;
    // x = [theta_0 .. theta_{m-1}, log signal, log noise]
    let decode = |x: &[f64]| Hyperparameters {
        lambda: weights(&x[..m], active),
        signal_var: x[m].exp(),
        noise_var: x[m + 1].exp(),
    };
    let mut used = 0usize;
    let eval = |x: &[f64], used: &mut usize| -> f64 {
        *used += 1;
        let h = decode(x);
        match factor(&grams.combine(&h.lambda), &h, y, opts.jitter) {
            Ok(f) if f.lml.is_finite() => f.lml,
            _ => f64::NEG_INFINITY,
        }
    };
    let theta0: Vec<f64> = init.lambda.iter().map(|&w| if w > 0.0 { w.ln() } else { 0.0 }).collect();
    let ramp = |up: bool| -> Vec<f64> {
        (0..m).map(|i| if up { i as f64 } else { (m - 1 - i) as f64 } * 4.0 / m.max(2) as f64).collect()
    };
    let mut starts: Vec<Vec<f64>> = vec![
        [theta0.clone(), vec![init.signal_var.ln(), init.noise_var.ln()]].concat(),
        [vec![0.0; m], vec![0.0, (1e-1f64).ln()]].concat(),
        [vec![0.0; m], vec![0.0, (1e-4f64).ln()]].concat(),
        [ramp(true), vec![0.0, (1e-3f64).ln()]].concat(),
        [ramp(false), vec![0.0, (1e-3f64).ln()]].concat(),
        [vec![0.0; m], vec![(0.3f64).ln(), (3e-2f64).ln()]].concat(),
        [vec![0.0; m], vec![(3.0f64).ln(), (1e-6f64).ln()]].concat(),
    ];
    starts.truncate(opts.restarts.max(1));
    let budget = opts.budget.max(starts.len() + 1);
    let per_start = (budget - 1) / starts.len();
    let mut coords: Vec<usize> = Vec::new();
    if learn_theta {
        coords.extend((0..m).filter(|&i| active[i]));
    }
    coords.extend([m, m + 1]);
    let bounds = |c: usize| {
        if c < m {
            THETA
        } else if c == m {
            LOG_SIGNAL
        } else {
            LOG_NOISE
        }
    };

    let mut best_x = starts[0].clone();
    let mut best = eval(&best_x, &mut used);
    for start in starts {
        let mut x = start;
        for &c in &coords {
            let (lo, hi) = bounds(c);
            x[c] = x[c].clamp(lo, hi);
        }
        let stop = (used + per_start).min(budget);
        let mut fx = eval(&x, &mut used);
        let mut step = 1.0;
        while step > 1.0 / 16.0 && used < stop {
            let mut moved = false;
            for &c in &coords {
                let (lo, hi) = bounds(c);
                for dir in [1.0, -1.0] {
                    if used >= stop {
                        break;
                    }
                    let mut t = x.clone();
                    t[c] = (x[c] + dir * step).clamp(lo, hi);
                    if t[c] == x[c] {
                        continue;
                    }
                    let ft = eval(&t, &mut used);
                    if ft > fx {
                        x = t;
                        fx = ft;
                        moved = true;
                        break;
                    }
                }
            }
            if !moved {
                step /= 2.0;
            }
        }
        if fx > best {
            best = fx;
            best_x = x;
        }
    }
    (decode(&best_x), used)
}

/// A GP bundled with the featurizer that maps terms into its feature space.
pub struct Surrogate<'g> {
    pub featurizer: Featurizer<'g>,
    pub model: GpModel,
}

impl<'g> Surrogate<'g> {
    /// Featurizes `obs` and fits. The returned surrogate owns a fresh
    /// label dictionary unless one is supplied.
    pub fn fit(
        obs: &[Observation],
        g: &'g Grammar,
        kernel: &HwlConfig,
        opts: &FitOptions,
        dict: Option<Arc<LabelDictionary>>,
    ) -> Result<Self, SurrogateError> {
        if obs.len() < 2 {
            return Err(SurrogateError::TooFewObservations(2));
        }
        let featurizer = match dict {
            Some(d) => Featurizer::with_dictionary(g, kernel, d),
            None => Featurizer::new(g, kernel),
        };
        let points = obs
            .iter()
            .map(|o| {
                Ok(TrainPoint {
                    key: o.term.canonical(),
                    features: Arc::new(featurizer.featurize(&o.term)?),
                    value: o.value,
                })
            })
            .collect::<Result<Vec<_>, KernelError>>()?;
        let model = GpModel::fit(points, kernel, opts)?;
        Ok(Surrogate { featurizer, model })
    }

    pub fn predict(&self, t: &Term) -> Result<(f64, f64), SurrogateError> {
        Ok(self.model.predict_features(&self.featurizer.featurize(t)?))
    }
}
