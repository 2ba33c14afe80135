//! Top-p ranking metrics with binary relevance.
//!
//! ```text
//! DCG@p  = sum_{r=1..p} rel_r / log2(r + 1)
//! IDCG@p = sum_{r=1..min(|truth|, p)} 1 / log2(r + 1)
//! Pre@p  = hits / p,  Rec@p = hits / |truth|,  F1 = 2 Pre Rec / (Pre + Rec)
//! ```

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Catalog;
use crate::error::{Error, Result};
use crate::factors::{FactorModel, ScoreMode, Scorer};

/// A (user, item) pair with its ground-truth rationale set (sorted, unique).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPair {
    pub user: usize,
    pub item: usize,
    pub truth: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PairMetrics {
    pub ndcg: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn unique_truth(truth: &[usize]) -> Result<Vec<usize>> {
    if truth.is_empty() {
        return Err(Error::invalid("empty ground-truth set"));
    }
    let mut t = truth.to_vec();
    t.sort_unstable();
    t.dedup();
    Ok(t)
}

fn check_cutoff(p: usize) -> Result<()> {
    if p == 0 {
        return Err(Error::invalid("cutoff must be at least 1"));
    }
    Ok(())
}

#[inline]
fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

pub fn ndcg_at(ranked: &[usize], truth: &[usize], p: usize) -> Result<f64> {
    check_cutoff(p)?;
    let truth = unique_truth(truth)?;
    Ok(ndcg_sorted(ranked, &truth, p))
}

fn ndcg_sorted(ranked: &[usize], truth: &[usize], p: usize) -> f64 {
    let dcg: f64 = ranked
        .iter()
        .take(p)
        .enumerate()
        .filter(|(_, e)| truth.binary_search(e).is_ok())
        .map(|(r, _)| discount(r + 1))
        .sum();
    let idcg: f64 = (1..=truth.len().min(p)).map(discount).sum();
    dcg / idcg
}

fn hits_sorted(ranked: &[usize], truth: &[usize], p: usize) -> usize {
    ranked
        .iter()
        .take(p)
        .filter(|e| truth.binary_search(e).is_ok())
        .count()
}

fn prf_from_hits(hits: usize, truth_len: usize, p: usize) -> (f64, f64, f64) {
    let pre = hits as f64 / p as f64;
    let rec = hits as f64 / truth_len as f64;
    let f1 = if hits == 0 { 0.0 } else { 2.0 * pre * rec / (pre + rec) };
    (pre, rec, f1)
}

pub fn precision_recall_f1_at(ranked: &[usize], truth: &[usize], p: usize) -> Result<(f64, f64, f64)> {
    check_cutoff(p)?;
    let truth = unique_truth(truth)?;
    Ok(prf_from_hits(hits_sorted(ranked, &truth, p), truth.len(), p))
}

pub fn pair_metrics(ranked: &[usize], truth: &[usize], p: usize) -> Result<PairMetrics> {
    check_cutoff(p)?;
    let truth = unique_truth(truth)?;
    let (precision, recall, f1) = prf_from_hits(hits_sorted(ranked, &truth, p), truth.len(), p);
    Ok(PairMetrics {
        ndcg: ndcg_sorted(ranked, &truth, p),
        precision,
        recall,
        f1,
    })
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub user: usize,
    pub item: usize,
    pub metrics: PairMetrics,
}

/// Dataset-level means, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cutoff: usize,
    pub ndcg: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub pairs: usize,
    /// Pairs none of whose truth rationales were among the candidates.
    pub unreachable: usize,
    #[serde(skip)]
    pub per_pair: Vec<PairResult>,
}

impl EvalReport {
    pub fn from_pairs(cutoff: usize, per_pair: Vec<PairResult>, unreachable: usize) -> Result<Self> {
        if per_pair.is_empty() {
            return Err(Error::invalid("no pairs to aggregate"));
        }
        let n = per_pair.len() as f64;
        let mean = |f: fn(&PairMetrics) -> f64| {
            100.0 * compensated_sum(per_pair.iter().map(|r| f(&r.metrics))) / n
        };
        Ok(Self {
            cutoff,
            ndcg: mean(|m| m.ndcg),
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
            pairs: per_pair.len(),
            unreachable,
            per_pair,
        })
    }

    /// `ndcg@10 11.833` style lines, three decimals.
    pub fn to_text(&self) -> String {
        let p = self.cutoff;
        let mut s = String::new();
        let _ = writeln!(s, "ndcg@{p} {:.3}", self.ndcg);
        let _ = writeln!(s, "pre@{p} {:.3}", self.precision);
        let _ = writeln!(s, "rec@{p} {:.3}", self.recall);
        let _ = writeln!(s, "f1@{p} {:.3}", self.f1);
        let _ = writeln!(s, "pairs {}", self.pairs);
        let _ = writeln!(s, "unreachable {}", self.unreachable);
        s
    }

    /// Per-pair TSV: `user item ndcg pre rec f1` (fractions, not percent).
    pub fn write_pairs_tsv<W: Write>(&self, catalog: &Catalog, mut w: W) -> Result<()> {
        writeln!(w, "user\titem\tndcg\tpre\trec\tf1")?;
        for r in &self.per_pair {
            let m = r.metrics;
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}",
                catalog.users.id(r.user).unwrap_or("?"),
                catalog.items.id(r.item).unwrap_or("?"),
                m.ndcg,
                m.precision,
                m.recall,
                m.f1
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Candidates {
    #[default]
    All,
    Subset(Vec<usize>),
}

/// Ranks candidates for every pair and averages the four metrics.
///
/// Pairs are scored in parallel; the reduction runs in pair order.
pub fn evaluate(
    model: &FactorModel,
    pairs: &[EvalPair],
    candidates: &Candidates,
    p: usize,
    mu: f64,
    mode: ScoreMode,
) -> Result<EvalReport> {
    check_cutoff(p)?;
    if pairs.is_empty() {
        return Err(Error::invalid("no evaluation pairs"));
    }
    let scorer = Scorer::new(model, mode, mu)?;
    let mut subset_sorted = match candidates {
        Candidates::All => None,
        Candidates::Subset(c) => Some(c.clone()),
    };
    if let Some(c) = subset_sorted.as_mut() {
        c.sort_unstable();
        c.dedup();
    }
    let results: Vec<Result<(PairResult, bool)>> = pairs
        .par_iter()
        .enumerate()
        .map(|(n, pair)| {
            let ranked = match candidates {
                Candidates::All => scorer.rank_all(pair.user, pair.item, p),
                Candidates::Subset(c) => scorer.rank(pair.user, pair.item, c, p),
            }
            .map_err(|e| Error::invalid(format!("pair #{n} (user {}, item {}): {e}", pair.user, pair.item)))?;
            let metrics = pair_metrics(&ranked.indices(), &pair.truth, p)?;
            let reachable = match &subset_sorted {
                None => pair.truth.iter().any(|&e| e < model.dims().n_rationales),
                Some(c) => pair.truth.iter().any(|e| c.binary_search(e).is_ok()),
            };
            Ok((
                PairResult {
                    user: pair.user,
                    item: pair.item,
                    metrics,
                },
                !reachable,
            ))
        })
        .collect();
    let mut per_pair = Vec::with_capacity(pairs.len());
    let mut unreachable = 0;
    for r in results {
        let (res, unreach) = r?;
        unreachable += unreach as usize;
        per_pair.push(res);
    }
    EvalReport::from_pairs(p, per_pair, unreachable)
}
