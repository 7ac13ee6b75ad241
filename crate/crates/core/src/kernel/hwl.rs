use std::borrow::Borrow;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::{dot, graph_features, KernelError, LabelDictionary, WlFeatures};
use crate::assembly::assemble;
use crate::grammar::Grammar;
use crate::term::Term;

/// Hierarchical kernel settings. `lambda[i]` weighs fold level `i + 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct HwlConfig {
    pub h: usize,
    pub levels: usize,
    pub lambda: Vec<f64>,
    pub normalize: bool,
}

impl HwlConfig {
    /// Equal weights on levels `2..=levels`, summing to one.
    pub fn uniform(levels: usize) -> Self {
        let n = levels.saturating_sub(1).max(1);
        HwlConfig { h: 2, levels: levels.max(2), lambda: vec![1.0 / n as f64; n], normalize: true }
    }

    /// All weight on the top level: plain WL on the unfolded graph.
    pub fn top_only(levels: usize) -> Self {
        let mut cfg = Self::uniform(levels);
        let n = cfg.lambda.len();
        cfg.lambda = vec![0.0; n];
        cfg.lambda[n - 1] = 1.0;
        cfg
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.levels < 2 {
            return Err(KernelError::InvalidConfig("at least two levels are needed".into()));
        }
        if self.lambda.len() != self.levels - 1 {
            return Err(KernelError::InvalidConfig(format!(
                "{} weights for levels 2..={}",
                self.lambda.len(),
                self.levels
            )));
        }
        if self.lambda.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(KernelError::InvalidConfig("weights must be finite and non-negative".into()));
        }
        if !self.lambda.iter().any(|&w| w > 0.0) {
            return Err(KernelError::InvalidConfig("at least one weight must be positive".into()));
        }
        Ok(())
    }

    /// Fold levels carrying weight.
    pub fn active(&self) -> Vec<bool> {
        self.lambda.iter().map(|&w| w > 0.0).collect()
    }
}

/// WL features of a term at each fold level `2..=L`; `None` for inactive levels.
#[derive(Clone, Debug)]
pub struct TermFeatures {
    pub levels: Vec<Option<WlFeatures>>,
}

/// Turns terms into per-level features against one shared dictionary.
pub struct Featurizer<'g> {
    grammar: &'g Grammar,
    dict: Arc<LabelDictionary>,
    h: usize,
    active: Vec<bool>,
}

impl<'g> Featurizer<'g> {
    pub fn new(grammar: &'g Grammar, cfg: &HwlConfig) -> Self {
        Self::with_dictionary(grammar, cfg, Arc::new(LabelDictionary::new()))
    }

    pub fn with_dictionary(grammar: &'g Grammar, cfg: &HwlConfig, dict: Arc<LabelDictionary>) -> Self {
        Featurizer { grammar, dict, h: cfg.h, active: cfg.active() }
    }

    pub fn dictionary(&self) -> &Arc<LabelDictionary> {
        &self.dict
    }

    pub fn featurize(&self, t: &Term) -> Result<TermFeatures, KernelError> {
        let depth = t.depth();
        let mut full: Option<WlFeatures> = None;
        let mut levels = Vec::with_capacity(self.active.len());
        for (i, &on) in self.active.iter().enumerate() {
            let l = i + 2;
            if !on {
                levels.push(None);
                continue;
            }
            let f = if l >= depth {
                if full.is_none() {
                    full = Some(graph_features(&assemble(t, self.grammar)?, self.h, &self.dict));
                }
                full.clone()
            } else {
                Some(graph_features(&assemble(&t.fold(l), self.grammar)?, self.h, &self.dict))
            };
            levels.push(f);
        }
        Ok(TermFeatures { levels })
    }
}

/// Per-level WL kernel values; zero for inactive levels.
pub fn level_kernels(a: &TermFeatures, b: &TermFeatures, normalize: bool) -> Vec<f64> {
    a.levels
        .iter()
        .zip(&b.levels)
        .map(|(x, y)| match (x, y) {
            (Some(x), Some(y)) => {
                let k = dot(x, y);
                if normalize {
                    k / (x.self_dot() * y.self_dot()).sqrt()
                } else {
                    k
                }
            }
            _ => 0.0,
        })
        .collect()
}

/// Hierarchical kernel of two terms with a fresh dictionary.
pub fn hwl_kernel(a: &Term, b: &Term, g: &Grammar, cfg: &HwlConfig) -> Result<f64, KernelError> {
    cfg.validate()?;
    let fz = Featurizer::new(g, cfg);
    let (fa, fb) = (fz.featurize(a)?, fz.featurize(b)?);
    Ok(level_kernels(&fa, &fb, cfg.normalize).iter().zip(&cfg.lambda).map(|(k, w)| k * w).sum())
}

/// One Gram matrix per fold level, so level weights can change cheaply.
#[derive(Clone, Debug)]
pub struct LevelGrams {
    pub mats: Vec<DMatrix<f64>>,
}

impl LevelGrams {
    pub fn new<F: Borrow<TermFeatures>>(features: &[F], normalize: bool) -> Self {
        let features: Vec<&TermFeatures> = features.iter().map(Borrow::borrow).collect();
        let n = features.len();
        let levels = features.first().map_or(0, |f| f.levels.len());
        let mut mats = vec![DMatrix::zeros(n, n); levels];
        for i in 0..n {
            for j in i..n {
                for (l, k) in level_kernels(features[i], features[j], normalize).into_iter().enumerate() {
                    mats[l][(i, j)] = k;
                    mats[l][(j, i)] = k;
                }
            }
        }
        LevelGrams { mats }
    }

    pub fn combine(&self, lambda: &[f64]) -> DMatrix<f64> {
        let n = self.mats.first().map_or(0, |m| m.nrows());
        let mut out = DMatrix::zeros(n, n);
        for (m, &w) in self.mats.iter().zip(lambda) {
            if w != 0.0 {
                out += m * w;
            }
        }
        out
    }
}

pub fn gram_matrix(terms: &[Term], g: &Grammar, cfg: &HwlConfig) -> Result<DMatrix<f64>, KernelError> {
    cfg.validate()?;
    let fz = Featurizer::new(g, cfg);
    let feats = terms.iter().map(|t| fz.featurize(t)).collect::<Result<Vec<_>, _>>()?;
    Ok(LevelGrams::new(&feats, cfg.normalize).combine(&cfg.lambda))
}
