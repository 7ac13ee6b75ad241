//! Summaries of finished runs: which productions show up among the best and
//! worst architectures, how values are distributed, and how they relate to
//! term depth. Everything is written as CSV.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::grammar::Grammar;
use crate::search::Record;
use crate::term::{family_bindings, parse_term, Node, Term, TermError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no records to analyze")]
    Empty,
    #[error("record {index}: {source}")]
    Term { index: usize, source: TermError },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityBin {
    pub bin_start: f64,
    pub bin_end: f64,
    pub count: usize,
    /// Count over (records × bin width); count over records when all values coincide.
    pub density: f64,
}

/// Occurrences of one production among the worst, middle and top cohorts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CohortRow {
    pub production: String,
    pub worst: usize,
    pub middle: usize,
    pub top: usize,
    pub worst_fraction: f64,
    pub middle_fraction: f64,
    pub top_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginalRow {
    pub production: String,
    /// Records whose term uses the production at least once.
    pub records: usize,
    pub mean_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DepthRow {
    pub record: usize,
    pub depth: usize,
    pub size: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnalysisReport {
    pub density: Vec<DensityBin>,
    pub cohorts: Vec<CohortRow>,
    pub marginals: Vec<MarginalRow>,
    pub depth: Vec<DepthRow>,
    /// Sizes of the top and worst cohorts.
    pub cohort_size: usize,
}

/// File names written by [`AnalysisReport::write_dir`].
pub const FILES: [&str; 4] = ["density.csv", "production_cohorts.csv", "production_marginals.csv", "depth_vs_value.csv"];

/// Production-use counts of a term, keyed by label.
pub fn production_counts(t: &Term, g: &Grammar) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    let mut tally = |node: &Node, member: &Grammar, prefix: &str| {
        node.walk(&mut Vec::new(), &mut |n, _| {
            for step in &n.derivation {
                let Some(nt) = member.symbol_id(&step.nt) else { continue };
                let Some(&p) = member.productions_of(nt).get(step.production as usize) else { continue };
                *out.entry(format!("{prefix}{}", member.production_label(p))).or_insert(0) += 1;
            }
        });
    };
    tally(&t.root, g, "");
    let members = family_bindings(g);
    for b in &t.bindings {
        if let Some((_, binding)) = members.iter().find(|(m, bd)| *m.name_of(bd.placeholder) == b.name) {
            let sub = binding.grammar.as_ref();
            tally(&b.node, sub, &format!("{}.", sub.name()));
        }
    }
    out
}

fn density(values: &[f64], bins: usize) -> Vec<DensityBin> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = values.len() as f64;
    if hi <= lo {
        return vec![DensityBin { bin_start: lo, bin_end: hi, count: values.len(), density: 1.0 }];
    }
    let bins = bins.max(1);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| DensityBin {
            bin_start: lo + i as f64 * width,
            bin_end: if i + 1 == bins { hi } else { lo + (i + 1) as f64 * width },
            count: c,
            density: c as f64 / (n * width),
        })
        .collect()
}

/// Analyzes records (lower values are better) from one or more logs,
/// concatenated in evaluation order.
pub fn analyze(g: &Grammar, records: &[Record], bins: usize) -> Result<AnalysisReport, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let terms = records
        .iter()
        .enumerate()
        .map(|(index, r)| parse_term(&r.term, g).map_err(|source| AnalysisError::Term { index, source }))
        .collect::<Result<Vec<_>, _>>()?;
    let uses: Vec<BTreeMap<String, usize>> = terms.iter().map(|t| production_counts(t, g)).collect();
    let values: Vec<f64> = records.iter().map(|r| r.value).collect();

    // best first; ties keep evaluation order
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let n = records.len();
    let k = n.div_ceil(10);
    let worst_k = k.min(n - k);
    let mut cohort = vec![1usize; n];
    order[..k].iter().for_each(|&i| cohort[i] = 2);
    order[n - worst_k..].iter().for_each(|&i| cohort[i] = 0);

    let mut per: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    let mut marg: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for (i, u) in uses.iter().enumerate() {
        for (p, &c) in u {
            per.entry(p).or_default()[cohort[i]] += c;
            let m = marg.entry(p).or_default();
            m.0 += 1;
            m.1 += values[i];
        }
    }
    let cohorts = per
        .into_iter()
        .map(|(p, [w, m, t])| {
            let total = (w + m + t) as f64;
            CohortRow {
                production: p.to_string(),
                worst: w,
                middle: m,
                top: t,
                worst_fraction: w as f64 / total,
                middle_fraction: m as f64 / total,
                top_fraction: t as f64 / total,
            }
        })
        .collect();
    let marginals = marg
        .into_iter()
        .map(|(p, (c, s))| MarginalRow { production: p.to_string(), records: c, mean_value: s / c as f64 })
        .collect();
    let depth = terms
        .iter()
        .zip(&values)
        .enumerate()
        .map(|(i, (t, &v))| DepthRow { record: i, depth: t.depth(), size: t.root.size(), value: v })
        .collect();
    Ok(AnalysisReport { density: density(&values, bins), cohorts, marginals, depth, cohort_size: k })
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

impl AnalysisReport {
    /// Writes the four CSV files (see [`FILES`]) into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), AnalysisError> {
        std::fs::create_dir_all(dir)?;
        write_rows(&dir.join(FILES[0]), &self.density)?;
        write_rows(&dir.join(FILES[1]), &self.cohorts)?;
        write_rows(&dir.join(FILES[2]), &self.marginals)?;
        write_rows(&dir.join(FILES[3]), &self.depth)?;
        Ok(())
    }
}
