//! Independent oracles shared by the integration tests.
//!
//! Nothing here calls into the library's metric or loss code: the formulas are
//! restated in plain f64 so the tests compare two implementations.

#![allow(dead_code)]

use std::path::PathBuf;

use rrank::factors::{Block, FactorModel};
use rrank::planted::{generate, PlantedConfig};
use rrank::train::SparseGrads;
use rrank::{prepare, Prepared};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures").join(name)
}

// ---- ranking metrics ----

pub struct OracleMetrics {
    pub ndcg: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Brute force: walks positions 1..=p explicitly, counts membership by linear scan.
pub fn metric_oracle(ranked: &[usize], truth: &[usize], p: usize) -> OracleMetrics {
    let mut uniq: Vec<usize> = Vec::new();
    for &t in truth {
        if !uniq.contains(&t) {
            uniq.push(t);
        }
    }
    let mut dcg = 0.0;
    let mut hits = 0usize;
    for pos in 1..=p {
        if pos > ranked.len() {
            break;
        }
        if uniq.contains(&ranked[pos - 1]) {
            dcg += 1.0 / ((pos + 1) as f64).log2();
            hits += 1;
        }
    }
    let mut idcg = 0.0;
    for pos in 1..=uniq.len().min(p) {
        idcg += 1.0 / ((pos + 1) as f64).log2();
    }
    let precision = hits as f64 / p as f64;
    let recall = hits as f64 / uniq.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    OracleMetrics {
        ndcg: dcg / idcg,
        precision,
        recall,
        f1,
    }
}

// ---- losses ----

/// Every parameter block of a model, widened to f64.
#[derive(Clone)]
pub struct Params {
    pub blocks: Vec<Vec<Vec<f64>>>,
    pub s: Vec<Vec<f64>>,
}

const BLOCKS: [Block; 7] = [
    Block::User,
    Block::Item,
    Block::RationaleU,
    Block::RationaleI,
    Block::BiasU,
    Block::BiasI,
    Block::Projection,
];

impl Params {
    pub fn from_model(m: &FactorModel) -> Self {
        let widen = |rows: usize, row: &dyn Fn(usize) -> Vec<f64>| (0..rows).map(row).collect::<Vec<_>>();
        let mut blocks = Vec::new();
        for b in BLOCKS {
            blocks.push(match m.block(b) {
                Some(mat) => widen(mat.rows(), &|r| mat.row(r).iter().map(|&x| x as f64).collect()),
                None => Vec::new(),
            });
        }
        let s = match &m.extras {
            Some(x) => widen(x.s.rows(), &|r| x.s.row(r).iter().map(|&v| v as f64).collect()),
            None => Vec::new(),
        };
        Params { blocks, s }
    }

    fn b(&self, b: Block) -> &Vec<Vec<f64>> {
        &self.blocks[BLOCKS.iter().position(|&x| x == b).unwrap()]
    }
}

fn softplus_neg(x: f64) -> f64 {
    (1.0 + (-x).exp()).ln()
}

fn dotf(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

fn sq(v: &[f64]) -> f64 {
    dotf(v, v)
}

fn uniq(first: usize, rest: &[usize]) -> Vec<usize> {
    let mut v = vec![first];
    for &r in rest {
        if !v.contains(&r) {
            v.push(r);
        }
    }
    v
}

/// Rationale factor on one side; with `plus`, multiplied elementwise by `W s_e`.
fn rationale_vec(p: &Params, side: Block, e: usize, plus: bool) -> Vec<f64> {
    let o = p.b(side)[e].clone();
    if !plus {
        return o;
    }
    let w = p.b(Block::Projection);
    (0..o.len()).map(|k| o[k] * dotf(&w[k], &p.s[e])).collect()
}

/// BPER (or BPER+) triplet loss, regularizing the rows the triplet touches.
pub fn bper_loss_oracle(
    p: &Params,
    plus: bool,
    (u, i, e): (usize, usize, usize),
    negs_u: &[usize],
    negs_i: &[usize],
    l2: f64,
) -> f64 {
    let pu = &p.b(Block::User)[u];
    let qi = &p.b(Block::Item)[i];
    let r_ue = |r: usize| dotf(pu, &rationale_vec(p, Block::RationaleU, r, plus)) + p.b(Block::BiasU)[r][0];
    let r_ie = |r: usize| dotf(qi, &rationale_vec(p, Block::RationaleI, r, plus)) + p.b(Block::BiasI)[r][0];
    let mut loss = 0.0;
    for &n in negs_u {
        loss += softplus_neg(r_ue(e) - r_ue(n));
    }
    for &n in negs_i {
        loss += softplus_neg(r_ie(e) - r_ie(n));
    }
    let mut reg = sq(pu) + sq(qi);
    for r in uniq(e, negs_u) {
        reg += sq(&p.b(Block::RationaleU)[r]) + sq(&p.b(Block::BiasU)[r]);
    }
    for r in uniq(e, negs_i) {
        reg += sq(&p.b(Block::RationaleI)[r]) + sq(&p.b(Block::BiasI)[r]);
    }
    if plus {
        for row in p.b(Block::Projection) {
            reg += sq(row);
        }
    }
    loss + l2 * reg
}

/// PITF triplet loss: item-ranking term plus `alpha` times the rationale-ranking term.
#[allow(clippy::too_many_arguments)]
pub fn pitf_loss_oracle(
    p: &Params,
    (u, i, e): (usize, usize, usize),
    neg_items: &[usize],
    negs_e: &[usize],
    alpha: f64,
    l2: f64,
) -> f64 {
    let pu = &p.b(Block::User)[u];
    let q = p.b(Block::Item);
    let ou = p.b(Block::RationaleU);
    let oi = p.b(Block::RationaleI);
    let full = |item: usize, r: usize| dotf(pu, &ou[r]) + dotf(&q[item], &oi[r]);
    let mut loss = 0.0;
    for &n in neg_items {
        loss += softplus_neg(full(i, e) - full(n, e));
    }
    for &n in negs_e {
        loss += alpha * softplus_neg(full(i, e) - full(i, n));
    }
    let mut reg = sq(pu);
    for it in uniq(i, neg_items) {
        reg += sq(&q[it]);
    }
    for r in uniq(e, negs_e) {
        reg += sq(&ou[r]) + sq(&oi[r]);
    }
    loss + l2 * reg
}

/// Worst relative error between `grads` and central differences of `loss`
/// over every parameter of every present block. The denominator is floored
/// at `floor` so exact zeros compare absolutely.
pub fn fd_max_rel_error(
    params: &Params,
    grads: &SparseGrads,
    h: f64,
    floor: f64,
    loss: impl Fn(&Params) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    let mut work = params.clone();
    for (bi, &block) in BLOCKS.iter().enumerate() {
        for r in 0..params.blocks[bi].len() {
            for c in 0..params.blocks[bi][r].len() {
                let x = params.blocks[bi][r][c];
                work.blocks[bi][r][c] = x + h;
                let plus = loss(&work);
                work.blocks[bi][r][c] = x - h;
                let minus = loss(&work);
                work.blocks[bi][r][c] = x;
                let numeric = (plus - minus) / (2.0 * h);
                let analytic = grads.get(block, r).map_or(0.0, |g| g[c]);
                let denom = analytic.abs().max(numeric.abs()).max(floor);
                worst = worst.max((analytic - numeric).abs() / denom);
            }
        }
    }
    worst
}

// ---- planted data ----

/// Planted records, all used as train; 5% held out for validation.
pub fn planted_prepared(cfg: &PlantedConfig, split_seed: u64) -> Prepared {
    let data = generate(cfg).unwrap();
    prepare(&data.records, &[], 0.05, split_seed).unwrap()
}

pub fn tiny_planted() -> PlantedConfig {
    PlantedConfig {
        n_users: 20,
        n_items: 10,
        n_rationales: 30,
        n_records: 400,
        ..Default::default()
    }
}
