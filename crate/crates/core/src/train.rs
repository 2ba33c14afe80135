//! Pairwise training: negative sampling, BPR-style losses with analytic
//! gradients, sparse Adam, and the early-stopped epoch loop.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Histories, Triplet};
use crate::error::{Error, Result};
use crate::evalrank::{evaluate, Candidates, EvalPair};
use crate::factors::{check_mu, Block, FactorModel, Matrix, ScoreMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2: f64,
    /// Negatives drawn per side per triplet.
    pub n_negatives: usize,
    pub mu: f64,
    /// Weight of the rationale term in the PITF loss.
    pub alpha: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: ScoreMode,
    /// Cutoff of the validation nDCG used for early stopping.
    pub eval_cutoff: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            l2: 1e-4,
            n_negatives: 3,
            mu: 0.7,
            alpha: 1.0,
            max_epochs: 100,
            patience: 3,
            batch_size: 32,
            seed: 0,
            mode: ScoreMode::Bper,
            eval_cutoff: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {}", self.learning_rate)));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::invalid(format!("l2 {}", self.l2)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha {}", self.alpha)));
        }
        check_mu(self.mu)?;
        if self.n_negatives == 0 || self.patience == 0 || self.batch_size == 0 || self.eval_cutoff == 0 {
            return Err(Error::invalid(
                "negatives, patience, batch size and cutoff must be at least 1",
            ));
        }
        Ok(())
    }
}

/// Row-sparse gradient over the parameter blocks of a [`FactorModel`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrads {
    rows: [BTreeMap<usize, Vec<f64>>; 7],
}

impl SparseGrads {
    fn entry(&mut self, block: Block, row: usize, width: usize) -> &mut Vec<f64> {
        self.rows[block.index()]
            .entry(row)
            .or_insert_with(|| vec![0.0; width])
    }

    pub fn add(&mut self, block: Block, row: usize, grad: &[f64]) {
        let g = self.entry(block, row, grad.len());
        for (a, b) in g.iter_mut().zip(grad) {
            *a += b;
        }
    }

    fn add_scaled(&mut self, block: Block, row: usize, v: &[f64], scale: f64) {
        let g = self.entry(block, row, v.len());
        for (a, b) in g.iter_mut().zip(v) {
            *a += scale * b;
        }
    }

    pub fn get(&self, block: Block, row: usize) -> Option<&[f64]> {
        self.rows[block.index()].get(&row).map(Vec::as_slice)
    }

    pub fn rows(&self, block: Block) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows[block.index()].iter().map(|(&r, g)| (r, g.as_slice()))
    }

    pub fn touched(&self, block: Block) -> Vec<usize> {
        self.rows[block.index()].keys().copied().collect()
    }

    pub fn merge(&mut self, other: SparseGrads) {
        for (mine, theirs) in self.rows.iter_mut().zip(other.rows) {
            for (row, g) in theirs {
                match mine.get_mut(&row) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        mine.insert(row, g);
                    }
                }
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(BTreeMap::is_empty)
    }
}

/// Draws `n` indices uniformly, with replacement, from `[0, catalog_size)` minus `excluded`.
///
/// `excluded` must be sorted ascending without duplicates.
pub fn sample_negatives<R: Rng + ?Sized>(
    excluded: &[usize],
    catalog_size: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    debug_assert!(excluded.windows(2).all(|w| w[0] < w[1]));
    let n_excluded = excluded.iter().filter(|&&e| e < catalog_size).count();
    if n_excluded >= catalog_size {
        return Err(Error::invalid(format!(
            "no negatives available: {n_excluded} of {catalog_size} excluded"
        )));
    }
    if 2 * n_excluded <= catalog_size {
        // rejection: acceptance rate at least 1/2
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let c = rng.gen_range(0..catalog_size);
            if excluded.binary_search(&c).is_err() {
                out.push(c);
            }
        }
        Ok(out)
    } else {
        let complement: Vec<usize> = (0..catalog_size)
            .filter(|c| excluded.binary_search(c).is_err())
            .collect();
        Ok((0..n)
            .map(|_| complement[rng.gen_range(0..complement.len())])
            .collect())
    }
}

/// `-ln σ(x)`, stable for large |x|.
#[inline]
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// `σ(-x)`, i.e. minus the derivative of `-ln σ(x)`.
#[inline]
fn sigmoid_neg(x: f64) -> f64 {
    if x >= 0.0 {
        let z = (-x).exp();
        z / (1.0 + z)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum()
}

fn ensure_finite(what: &str, x: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("{what} = {x}")));
    }
    Ok(())
}

/// Adds `l2 * ||row||^2` to the loss and `2 l2 row` to the gradient for each listed row.
fn regularize(model: &FactorModel, grads: &mut SparseGrads, block: Block, rows: &[usize], l2: f64) -> f64 {
    let m = model.block(block).expect("regularized block exists");
    let mut loss = 0.0;
    for &r in rows {
        let row = m.row(r);
        loss += l2 * sq_norm(row);
        let g: Vec<f64> = row.iter().map(|&x| 2.0 * l2 * x as f64).collect();
        grads.add(block, r, &g);
    }
    loss
}

fn distinct(first: usize, rest: &[usize]) -> Vec<usize> {
    let mut v: Vec<usize> = std::iter::once(first).chain(rest.iter().copied()).collect();
    v.sort_unstable();
    v.dedup();
    v
}

struct Side {
    anchor: Block,
    factors: Block,
    bias: Block,
}

const USER_SIDE: Side = Side {
    anchor: Block::User,
    factors: Block::RationaleU,
    bias: Block::BiasU,
};
const ITEM_SIDE: Side = Side {
    anchor: Block::Item,
    factors: Block::RationaleI,
    bias: Block::BiasI,
};

/// One side of the BPER loss: `sum_neg -ln σ(r(pos) - r(neg))` for a fixed anchor row.
///
/// With `projection` set (BPER+), rationale factors are `o_e ⊙ W s_e`.
#[allow(clippy::too_many_arguments)]
fn bpr_side(
    model: &FactorModel,
    side: &Side,
    anchor_row: usize,
    pos: usize,
    negs: &[usize],
    projection: Option<&BTreeMap<usize, Vec<f64>>>,
    grads: &mut SparseGrads,
    dz: &mut BTreeMap<usize, Vec<f64>>,
) -> Result<f64> {
    let anchor = to_f64(model.block(side.anchor).unwrap().row(anchor_row));
    let factors = model.block(side.factors).unwrap();
    let bias = model.block(side.bias).unwrap();
    let effective = |e: usize| -> Vec<f64> {
        let o = factors.row(e);
        match projection {
            None => to_f64(o),
            Some(z) => o.iter().zip(&z[&e]).map(|(&a, b)| a as f64 * b).collect(),
        }
    };
    let score = |e: usize| dot64(&anchor, &effective(e)) + bias.row(e)[0] as f64;

    let r_pos = score(pos);
    let mut loss = 0.0;
    // dL/dr_e per rationale
    let mut coeff: BTreeMap<usize, f64> = BTreeMap::new();
    for &neg in negs {
        let x = r_pos - score(neg);
        ensure_finite("score difference", x)?;
        loss += neg_log_sigmoid(x);
        let g = -sigmoid_neg(x);
        *coeff.entry(pos).or_default() += g;
        *coeff.entry(neg).or_default() -= g;
    }

    let d = anchor.len();
    let mut g_anchor = vec![0.0; d];
    for (&e, &c) in &coeff {
        let eff = effective(e);
        g_anchor.iter_mut().zip(&eff).for_each(|(a, v)| *a += c * v);
        grads.add(side.bias, e, &[c]);
        match projection {
            None => grads.add_scaled(side.factors, e, &anchor, c),
            Some(z) => {
                let z = &z[&e];
                let g_o: Vec<f64> = (0..d).map(|k| c * anchor[k] * z[k]).collect();
                grads.add(side.factors, e, &g_o);
                let o = factors.row(e);
                let acc = dz.entry(e).or_insert_with(|| vec![0.0; d]);
                for k in 0..d {
                    acc[k] += c * anchor[k] * o[k] as f64;
                }
            }
        }
    }
    grads.add(side.anchor, anchor_row, &g_anchor);
    Ok(loss)
}

fn check_triplet(model: &FactorModel, u: usize, i: usize, e: usize) -> Result<()> {
    model.check_user(u)?;
    model.check_item(i)?;
    model.check_rationale(e)
}

fn bper_loss(
    model: &FactorModel,
    plus: bool,
    (u, i, e): (usize, usize, usize),
    negs_u: &[usize],
    negs_i: &[usize],
    l2: f64,
) -> Result<(f64, SparseGrads)> {
    check_triplet(model, u, i, e)?;
    for &n in negs_u.iter().chain(negs_i) {
        model.check_rationale(n)?;
        if n == e {
            return Err(Error::invalid(format!("positive rationale {e} sampled as a negative")));
        }
    }
    let extras = if plus {
        Some(
            model
                .extras
                .as_ref()
                .ok_or_else(|| Error::invalid("bper_plus loss needs projection extras"))?,
        )
    } else {
        None
    };
    let projection: Option<BTreeMap<usize, Vec<f64>>> = extras.map(|x| {
        distinct(e, &[negs_u, negs_i].concat())
            .into_iter()
            .map(|r| (r, x.projected(r)))
            .collect()
    });

    let mut grads = SparseGrads::default();
    let mut dz: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut loss = bpr_side(model, &USER_SIDE, u, e, negs_u, projection.as_ref(), &mut grads, &mut dz)?;
    loss += bpr_side(model, &ITEM_SIDE, i, e, negs_i, projection.as_ref(), &mut grads, &mut dz)?;

    if let Some(x) = extras {
        // dL/dW[r][c] = sum_e dL/dz_e[r] * s_e[c]
        let d_sem = x.d_sem();
        for r in 0..x.w.rows() {
            let mut g = vec![0.0; d_sem];
            for (&er, dzr) in &dz {
                let s = x.s.row(er);
                for c in 0..d_sem {
                    g[c] += dzr[r] * s[c] as f64;
                }
            }
            grads.add(Block::Projection, r, &g);
        }
    }

    if l2 > 0.0 {
        let ru = distinct(e, negs_u);
        let ri = distinct(e, negs_i);
        loss += regularize(model, &mut grads, Block::User, &[u], l2);
        loss += regularize(model, &mut grads, Block::RationaleU, &ru, l2);
        loss += regularize(model, &mut grads, Block::BiasU, &ru, l2);
        loss += regularize(model, &mut grads, Block::Item, &[i], l2);
        loss += regularize(model, &mut grads, Block::RationaleI, &ri, l2);
        loss += regularize(model, &mut grads, Block::BiasI, &ri, l2);
        if let Some(x) = extras {
            let all: Vec<usize> = (0..x.w.rows()).collect();
            loss += regularize(model, &mut grads, Block::Projection, &all, l2);
        }
    }
    ensure_finite("loss", loss)?;
    Ok((loss, grads))
}

/// BPER loss for one observed triplet and its sampled negatives:
///
/// ```text
/// sum_{e'} -ln σ(r_ue - r_ue') + sum_{e''} -ln σ(r_ie - r_ie'') + l2 * ||touched||^2
/// ```
pub fn bper_triplet_loss_and_grads(
    model: &FactorModel,
    u: usize,
    i: usize,
    e: usize,
    negs_u: &[usize],
    negs_i: &[usize],
    l2: f64,
) -> Result<(f64, SparseGrads)> {
    bper_loss(model, false, (u, i, e), negs_u, negs_i, l2)
}

/// As [`bper_triplet_loss_and_grads`] with rationale factors `o_e ⊙ W s_e`;
/// gradients also flow into `W`.
pub fn bper_plus_triplet_loss_and_grads(
    model: &FactorModel,
    u: usize,
    i: usize,
    e: usize,
    negs_u: &[usize],
    negs_i: &[usize],
    l2: f64,
) -> Result<(f64, SparseGrads)> {
    bper_loss(model, true, (u, i, e), negs_u, negs_i, l2)
}

/// PITF loss for one observed triplet.
///
/// The item term compares `i` against each negative item `i'` with the positive
/// rationale fixed, `r_uie - r_ui'e = <q_i - q_i', o_e^I>`; the rationale term
/// compares `e` against each negative rationale, `r_uie - r_uie'`, weighted by `alpha`.
#[allow(clippy::too_many_arguments)]
pub fn pitf_loss_and_grads(
    model: &FactorModel,
    u: usize,
    i: usize,
    e: usize,
    neg_items: &[usize],
    negs_e: &[usize],
    alpha: f64,
    l2: f64,
) -> Result<(f64, SparseGrads)> {
    check_triplet(model, u, i, e)?;
    for &n in neg_items {
        model.check_item(n)?;
        if n == i {
            return Err(Error::invalid(format!("positive item {i} sampled as a negative")));
        }
    }
    for &n in negs_e {
        model.check_rationale(n)?;
        if n == e {
            return Err(Error::invalid(format!("positive rationale {e} sampled as a negative")));
        }
    }
    let pu = to_f64(model.p.row(u));
    let qi = to_f64(model.q.row(i));
    let oi_e = to_f64(model.o_i.row(e));
    let mut grads = SparseGrads::default();
    let mut loss = 0.0;

    for &n in neg_items {
        let qn = to_f64(model.q.row(n));
        let diff: Vec<f64> = qi.iter().zip(&qn).map(|(a, b)| a - b).collect();
        let x = dot64(&diff, &oi_e);
        ensure_finite("item score difference", x)?;
        loss += neg_log_sigmoid(x);
        let g = -sigmoid_neg(x);
        grads.add_scaled(Block::Item, i, &oi_e, g);
        grads.add_scaled(Block::Item, n, &oi_e, -g);
        grads.add_scaled(Block::RationaleI, e, &diff, g);
    }

    let pitf = |r: usize| dot64(&pu, &to_f64(model.o_u.row(r))) + dot64(&qi, &to_f64(model.o_i.row(r)));
    let r_pos = pitf(e);
    let mut coeff: BTreeMap<usize, f64> = BTreeMap::new();
    for &n in negs_e {
        let x = r_pos - pitf(n);
        ensure_finite("rationale score difference", x)?;
        loss += alpha * neg_log_sigmoid(x);
        let g = -alpha * sigmoid_neg(x);
        *coeff.entry(e).or_default() += g;
        *coeff.entry(n).or_default() -= g;
    }
    let d = pu.len();
    let mut g_p = vec![0.0; d];
    let mut g_q = vec![0.0; d];
    for (&r, &c) in &coeff {
        let ou = model.o_u.row(r);
        let oi = model.o_i.row(r);
        for k in 0..d {
            g_p[k] += c * ou[k] as f64;
            g_q[k] += c * oi[k] as f64;
        }
        grads.add_scaled(Block::RationaleU, r, &pu, c);
        grads.add_scaled(Block::RationaleI, r, &qi, c);
    }
    if !negs_e.is_empty() {
        grads.add(Block::User, u, &g_p);
        grads.add(Block::Item, i, &g_q);
    }

    if l2 > 0.0 {
        let items = distinct(i, neg_items);
        let rats = distinct(e, negs_e);
        loss += regularize(model, &mut grads, Block::User, &[u], l2);
        loss += regularize(model, &mut grads, Block::Item, &items, l2);
        loss += regularize(model, &mut grads, Block::RationaleU, &rats, l2);
        loss += regularize(model, &mut grads, Block::RationaleI, &rats, l2);
    }
    ensure_finite("loss", loss)?;
    Ok((loss, grads))
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moments, shaped like the model's parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Option<Matrix>>,
    v: Vec<Option<Matrix>>,
    step: u64,
}

impl AdamState {
    pub fn new(model: &FactorModel) -> Self {
        let shapes: Vec<Option<Matrix>> = Block::ALL
            .iter()
            .map(|&b| model.block(b).map(|m| Matrix::zeros(m.rows(), m.cols())))
            .collect();
        Self {
            m: shapes.clone(),
            v: shapes,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, block: Block) -> Option<&Matrix> {
        self.m[block.index()].as_ref()
    }
}

/// One Adam update (bias-corrected) applied to the rows present in `grads` only.
pub fn adam_step(model: &mut FactorModel, grads: &SparseGrads, state: &mut AdamState, lr: f64) -> Result<()> {
    for &b in &Block::ALL {
        let (pm, sm) = (model.block(b), state.m[b.index()].as_ref());
        match (pm, sm) {
            (Some(p), Some(m)) if p.rows() == m.rows() && p.cols() == m.cols() => {}
            (None, None) => {}
            (p, m) => {
                return Err(Error::Dimension {
                    expected: p.map_or(0, |p| p.rows() * p.cols()),
                    actual: m.map_or(0, |m| m.rows() * m.cols()),
                })
            }
        }
        for (row, g) in grads.rows(b) {
            let p = model
                .block(b)
                .ok_or_else(|| Error::invalid(format!("gradient for absent block {b:?}")))?;
            if row >= p.rows() {
                return Err(Error::Index {
                    kind: "gradient row",
                    index: row,
                    size: p.rows(),
                });
            }
            if g.len() != p.cols() {
                return Err(Error::Dimension {
                    expected: p.cols(),
                    actual: g.len(),
                });
            }
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for &b in &Block::ALL {
        let (Some(m), Some(v)) = (state.m[b.index()].as_mut(), state.v[b.index()].as_mut()) else {
            continue;
        };
        let params = model.block_mut(b).expect("checked above");
        for (row, g) in grads.rows(b) {
            let (pr, mr, vr) = (params.row_mut(row), m.row_mut(row), v.row_mut(row));
            for k in 0..g.len() {
                let mk = ADAM_BETA1 * mr[k] as f64 + (1.0 - ADAM_BETA1) * g[k];
                let vk = ADAM_BETA2 * vr[k] as f64 + (1.0 - ADAM_BETA2) * g[k] * g[k];
                mr[k] = mk as f32;
                vr[k] = vk as f32;
                let update = lr * (mk / c1) / ((vk / c2).sqrt() + ADAM_EPS);
                pr[k] = (pr[k] as f64 - update) as f32;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-triplet training loss.
    pub loss: f64,
    /// Validation nDCG at the configured cutoff, in percent.
    pub val_ndcg: f64,
    /// Wall time; shown in progress lines, left out of serialized reports.
    #[serde(skip)]
    pub secs: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {} loss {:.6} val_ndcg10 {:.4} secs {:.3}",
            self.epoch, self.loss, self.val_ndcg, self.secs
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Validation nDCG of the model before any update (epoch 0).
    pub initial_val_ndcg: f64,
    pub epochs: Vec<EpochRecord>,
    /// 0 when no epoch improved on the initial model.
    pub best_epoch: usize,
    pub best_val_ndcg: f64,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

/// Sampled loss and gradient for one triplet under the configured mode.
fn triplet_step(
    model: &FactorModel,
    t: Triplet,
    histories: &Histories,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, SparseGrads)> {
    let dims = model.dims();
    let n = config.n_negatives;
    match config.mode {
        ScoreMode::Bper | ScoreMode::BperPlus => {
            let negs_u = negatives_or_none(&histories.user_rationales[t.user], dims.n_rationales, n, rng)?;
            let negs_i = negatives_or_none(&histories.item_rationales[t.item], dims.n_rationales, n, rng)?;
            bper_loss(
                model,
                config.mode == ScoreMode::BperPlus,
                (t.user, t.item, t.rationale),
                &negs_u,
                &negs_i,
                config.l2,
            )
        }
        ScoreMode::Pitf => {
            let neg_items = negatives_or_none(&histories.user_items[t.user], dims.n_items, n, rng)?;
            let negs_e = negatives_or_none(histories.pair_rationales(t.user, t.item), dims.n_rationales, n, rng)?;
            pitf_loss_and_grads(model, t.user, t.item, t.rationale, &neg_items, &negs_e, config.alpha, config.l2)
        }
    }
}

/// Like [`sample_negatives`], but an empty complement yields no negatives,
/// dropping that ranking term for the triplet instead of failing the epoch.
fn negatives_or_none(excluded: &[usize], catalog_size: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if excluded.iter().filter(|&&e| e < catalog_size).count() >= catalog_size {
        return Ok(Vec::new());
    }
    sample_negatives(excluded, catalog_size, n, rng)
}

fn epoch_rng(seed: u64, worker: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((worker << 32) | epoch as u64);
    rng
}

pub fn fit(
    model: FactorModel,
    triplets: &[Triplet],
    histories: &Histories,
    validation: &[EvalPair],
    config: &TrainConfig,
) -> Result<(FactorModel, TrainReport)> {
    fit_with_progress(model, triplets, histories, validation, config, |_| {})
}

/// Trains until validation nDCG fails to improve for `patience` consecutive
/// epochs (or `max_epochs`), returning the best-epoch snapshot.
///
/// Single writer: the result is a pure function of the inputs and `config.seed`.
pub fn fit_with_progress(
    mut model: FactorModel,
    triplets: &[Triplet],
    histories: &Histories,
    validation: &[EvalPair],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(FactorModel, TrainReport)> {
    config.validate()?;
    if validation.is_empty() {
        return Err(Error::invalid("empty validation set"));
    }
    if triplets.is_empty() {
        return Err(Error::invalid("no training triplets"));
    }
    if config.mode == ScoreMode::BperPlus && model.extras.is_none() {
        return Err(Error::invalid("bper_plus training needs projection extras"));
    }
    let validate = |m: &FactorModel| -> Result<f64> {
        Ok(evaluate(m, validation, &Candidates::All, config.eval_cutoff, config.mu, config.mode)?.ndcg)
    };

    let mut report = TrainReport {
        initial_val_ndcg: validate(&model)?,
        ..Default::default()
    };
    report.best_val_ndcg = report.initial_val_ndcg;
    let mut best = model.clone();
    let mut adam = AdamState::new(&model);
    let mut stale = 0;
    let mut order: Vec<usize> = (0..triplets.len()).collect();

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        let mut rng = epoch_rng(config.seed, 0, epoch);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = SparseGrads::default();
            for &k in batch {
                let (loss, g) = triplet_step(&model, triplets[k], histories, config, &mut rng).map_err(|e| {
                    Error::Diverged {
                        epoch,
                        reason: e.to_string(),
                        report: Box::new(report.clone()),
                    }
                })?;
                total += loss;
                grads.merge(g);
            }
            adam_step(&mut model, &grads, &mut adam, config.learning_rate)?;
        }
        let loss = total / triplets.len() as f64;
        if !loss.is_finite() || !model.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: format!("non-finite parameters or loss ({loss})"),
                report: Box::new(report),
            });
        }
        let val_ndcg = validate(&model)?;
        let record = EpochRecord {
            epoch,
            loss,
            val_ndcg,
            secs: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        report.epochs.push(record);
        if val_ndcg > report.best_val_ndcg {
            report.best_val_ndcg = val_ndcg;
            report.best_epoch = epoch;
            best.clone_from(&model);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok((best, report))
}
