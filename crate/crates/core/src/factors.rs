//! Model parameters and scoring rules.
//!
//! User-side and item-side scores are dot products plus a per-rationale bias:
//!
//! ```text
//! r_ue  = <p_u, o_e^U> + b_e^U
//! r_ie  = <q_i, o_e^I> + b_e^I
//! r_uie = mu * r_ue + (1 - mu) * r_ie        (BPER)
//! r_uie = <p_u, o_e^U> + <q_i, o_e^I>        (PITF, no biases)
//! ```
//!
//! In BPER+ mode the rationale factors are replaced by `o_e ⊙ (W s_e)`, where
//! `s_e` is a frozen semantic vector and `W` a learned projection.
//!
//! Parameters are stored as `f32`; every dot product accumulates in `f64`.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub n_users: usize,
    pub n_items: usize,
    pub n_rationales: usize,
    pub d: usize,
}

impl ModelDims {
    pub fn new(n_users: usize, n_items: usize, n_rationales: usize, d: usize) -> Result<Self> {
        let dims = Self {
            n_users,
            n_items,
            n_rationales,
            d,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_items == 0 || self.n_rationales == 0 || self.d == 0 {
            return Err(Error::invalid(format!("all model dims must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Row-major dense `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    fn fill_uniform(&mut self, dist: &Uniform<f32>, rng: &mut ChaCha8Rng) {
        for x in &mut self.data {
            *x = dist.sample(rng);
        }
    }
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Learned projection `W` (d × d_sem) and frozen semantic rows `S` (n_rationales × d_sem).
#[derive(Debug, Clone, PartialEq)]
pub struct BperPlusExtras {
    pub w: Matrix,
    pub s: Matrix,
}

impl BperPlusExtras {
    pub fn new(w: Matrix, s: Matrix) -> Result<Self> {
        if w.cols() != s.cols() {
            return Err(Error::Dimension {
                expected: w.cols(),
                actual: s.cols(),
            });
        }
        Ok(Self { w, s })
    }

    /// Uniform `W` in `±1/sqrt(d_sem)` so `W s_e` starts at the scale of `s_e`.
    pub fn init_random(d: usize, s: Matrix, seed: u64) -> Result<Self> {
        if s.cols() == 0 {
            return Err(Error::invalid("empty semantic matrix"));
        }
        let bound = 1.0 / (s.cols() as f32).sqrt();
        let mut w = Matrix::zeros(d, s.cols());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        w.fill_uniform(&Uniform::new_inclusive(-bound, bound), &mut rng);
        Ok(Self { w, s })
    }

    pub fn d_sem(&self) -> usize {
        self.s.cols()
    }

    /// `W · s_e` in f64.
    pub fn projected(&self, e: usize) -> Vec<f64> {
        let s = self.s.row(e);
        (0..self.w.rows()).map(|r| dot(self.w.row(r), s)).collect()
    }
}

/// Identifies one parameter block of a [`FactorModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Block {
    User,
    Item,
    RationaleU,
    RationaleI,
    BiasU,
    BiasI,
    Projection,
}

impl Block {
    pub const ALL: [Block; 7] = [
        Block::User,
        Block::Item,
        Block::RationaleU,
        Block::RationaleI,
        Block::BiasU,
        Block::BiasI,
        Block::Projection,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    dims: ModelDims,
    /// User factors `p_u`.
    pub p: Matrix,
    /// Item factors `q_i`.
    pub q: Matrix,
    /// Rationale factors on the user-rationale side, `o_e^U`.
    pub o_u: Matrix,
    /// Rationale factors on the item-rationale side, `o_e^I`.
    pub o_i: Matrix,
    /// `b_e^U`, stored as an n_rationales × 1 matrix.
    pub b_u: Matrix,
    /// `b_e^I`, stored as an n_rationales × 1 matrix.
    pub b_i: Matrix,
    pub extras: Option<BperPlusExtras>,
}

impl FactorModel {
    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            dims,
            p: Matrix::zeros(dims.n_users, dims.d),
            q: Matrix::zeros(dims.n_items, dims.d),
            o_u: Matrix::zeros(dims.n_rationales, dims.d),
            o_i: Matrix::zeros(dims.n_rationales, dims.d),
            b_u: Matrix::zeros(dims.n_rationales, 1),
            b_i: Matrix::zeros(dims.n_rationales, 1),
            extras: None,
        }
    }

    /// Assembles a model from its blocks, checking that the shapes agree.
    pub fn from_parts(p: Matrix, q: Matrix, o_u: Matrix, o_i: Matrix, b_u: Matrix, b_i: Matrix) -> Result<Self> {
        let dims = ModelDims::new(p.rows(), q.rows(), o_u.rows(), p.cols())?;
        let expect = [
            (&q, dims.n_items, dims.d),
            (&o_u, dims.n_rationales, dims.d),
            (&o_i, dims.n_rationales, dims.d),
            (&b_u, dims.n_rationales, 1),
            (&b_i, dims.n_rationales, 1),
        ];
        for (m, rows, cols) in expect {
            if m.rows() != rows || m.cols() != cols {
                return Err(Error::Dimension {
                    expected: rows * cols,
                    actual: m.rows() * m.cols(),
                });
            }
        }
        Ok(Self {
            dims,
            p,
            q,
            o_u,
            o_i,
            b_u,
            b_i,
            extras: None,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn with_extras(mut self, extras: BperPlusExtras) -> Result<Self> {
        if extras.w.rows() != self.dims.d {
            return Err(Error::Dimension {
                expected: self.dims.d,
                actual: extras.w.rows(),
            });
        }
        if extras.s.rows() != self.dims.n_rationales {
            return Err(Error::Dimension {
                expected: self.dims.n_rationales,
                actual: extras.s.rows(),
            });
        }
        self.extras = Some(extras);
        Ok(self)
    }

    pub fn block(&self, b: Block) -> Option<&Matrix> {
        match b {
            Block::User => Some(&self.p),
            Block::Item => Some(&self.q),
            Block::RationaleU => Some(&self.o_u),
            Block::RationaleI => Some(&self.o_i),
            Block::BiasU => Some(&self.b_u),
            Block::BiasI => Some(&self.b_i),
            Block::Projection => self.extras.as_ref().map(|x| &x.w),
        }
    }

    pub fn block_mut(&mut self, b: Block) -> Option<&mut Matrix> {
        match b {
            Block::User => Some(&mut self.p),
            Block::Item => Some(&mut self.q),
            Block::RationaleU => Some(&mut self.o_u),
            Block::RationaleI => Some(&mut self.o_i),
            Block::BiasU => Some(&mut self.b_u),
            Block::BiasI => Some(&mut self.b_i),
            Block::Projection => self.extras.as_mut().map(|x| &mut x.w),
        }
    }

    pub fn is_finite(&self) -> bool {
        Block::ALL
            .iter()
            .filter_map(|&b| self.block(b))
            .all(|m| m.as_slice().iter().all(|x| x.is_finite()))
    }

    pub(crate) fn check_user(&self, u: usize) -> Result<()> {
        check_index("user", u, self.dims.n_users)
    }

    pub(crate) fn check_item(&self, i: usize) -> Result<()> {
        check_index("item", i, self.dims.n_items)
    }

    pub(crate) fn check_rationale(&self, e: usize) -> Result<()> {
        check_index("rationale", e, self.dims.n_rationales)
    }
}

fn check_index(kind: &'static str, index: usize, size: usize) -> Result<()> {
    if index >= size {
        return Err(Error::Index { kind, index, size });
    }
    Ok(())
}

/// Uniform `[-scale, scale]` factors, zero biases.
pub fn init_random(dims: ModelDims, seed: u64, scale: f32) -> Result<FactorModel> {
    dims.validate()?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("init scale must be positive, got {scale}")));
    }
    let mut model = FactorModel::zeros(dims);
    let dist = Uniform::new_inclusive(-scale, scale);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.p.fill_uniform(&dist, &mut rng);
    model.q.fill_uniform(&dist, &mut rng);
    model.o_u.fill_uniform(&dist, &mut rng);
    model.o_i.fill_uniform(&dist, &mut rng);
    Ok(model)
}

pub fn score_ue(model: &FactorModel, u: usize, e: usize) -> Result<f64> {
    model.check_user(u)?;
    model.check_rationale(e)?;
    Ok(dot(model.p.row(u), model.o_u.row(e)) + model.b_u.row(e)[0] as f64)
}

pub fn score_ie(model: &FactorModel, i: usize, e: usize) -> Result<f64> {
    model.check_item(i)?;
    model.check_rationale(e)?;
    Ok(dot(model.q.row(i), model.o_i.row(e)) + model.b_i.row(e)[0] as f64)
}

pub(crate) fn check_mu(mu: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::invalid(format!("mu {mu} outside [0, 1]")));
    }
    Ok(())
}

#[inline]
fn fuse(mu: f64, r_ue: f64, r_ie: f64) -> f64 {
    if mu == 1.0 {
        r_ue
    } else if mu == 0.0 {
        r_ie
    } else {
        mu * r_ue + (1.0 - mu) * r_ie
    }
}

pub fn score_uie(model: &FactorModel, u: usize, i: usize, e: usize, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    Ok(fuse(mu, score_ue(model, u, e)?, score_ie(model, i, e)?))
}

pub fn score_pitf(model: &FactorModel, u: usize, i: usize, e: usize) -> Result<f64> {
    model.check_user(u)?;
    model.check_item(i)?;
    model.check_rationale(e)?;
    Ok(dot(model.p.row(u), model.o_u.row(e)) + dot(model.q.row(i), model.o_i.row(e)))
}

/// `(o_e^U ⊙ W s_e, o_e^I ⊙ W s_e)`.
pub fn enhanced_rationale_factors(
    model: &FactorModel,
    extras: &BperPlusExtras,
    e: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    model.check_rationale(e)?;
    let d = model.dims.d;
    if extras.w.rows() != d {
        return Err(Error::Dimension {
            expected: d,
            actual: extras.w.rows(),
        });
    }
    if e >= extras.s.rows() {
        return Err(Error::Index {
            kind: "semantic row",
            index: e,
            size: extras.s.rows(),
        });
    }
    if extras.w.cols() != extras.s.cols() {
        return Err(Error::Dimension {
            expected: extras.w.cols(),
            actual: extras.s.cols(),
        });
    }
    let z = extras.projected(e);
    let ou = model.o_u.row(e);
    let oi = model.o_i.row(e);
    Ok((
        (0..d).map(|k| ou[k] as f64 * z[k]).collect(),
        (0..d).map(|k| oi[k] as f64 * z[k]).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Bper,
    BperPlus,
    Pitf,
}

impl FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bper" => Ok(ScoreMode::Bper),
            "bper_plus" | "bper-plus" => Ok(ScoreMode::BperPlus),
            "pitf" => Ok(ScoreMode::Pitf),
            other => Err(Error::invalid(format!("unknown scoring mode `{other}`"))),
        }
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreMode::Bper => "bper",
            ScoreMode::BperPlus => "bper_plus",
            ScoreMode::Pitf => "pitf",
        })
    }
}

/// Ranked `(rationale, score)` pairs, score descending then index ascending.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankList(pub Vec<(usize, f64)>);

impl RankList {
    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().map(|&(e, _)| e).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[inline]
fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Top-k selection under the rank order.
pub fn top_k(mut scored: Vec<(usize, f64)>, k: usize) -> RankList {
    if k == 0 {
        return RankList::default();
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    RankList(scored)
}

/// Precomputed scoring view of a model for one mode.
///
/// For BPER+ the enhanced rationale factors are materialized once so that
/// scoring a full candidate list costs only dot products.
pub struct Scorer<'a> {
    model: &'a FactorModel,
    mode: ScoreMode,
    mu: f64,
    o_u: Cow<'a, Matrix>,
    o_i: Cow<'a, Matrix>,
}

impl<'a> Scorer<'a> {
    pub fn new(model: &'a FactorModel, mode: ScoreMode, mu: f64) -> Result<Self> {
        check_mu(mu)?;
        let (o_u, o_i) = match mode {
            ScoreMode::Bper | ScoreMode::Pitf => (Cow::Borrowed(&model.o_u), Cow::Borrowed(&model.o_i)),
            ScoreMode::BperPlus => {
                let extras = model
                    .extras
                    .as_ref()
                    .ok_or_else(|| Error::invalid("bper_plus scoring needs projection extras"))?;
                let (n, d) = (model.dims.n_rationales, model.dims.d);
                let mut ou = Matrix::zeros(n, d);
                let mut oi = Matrix::zeros(n, d);
                for e in 0..n {
                    let (a, b) = enhanced_rationale_factors(model, extras, e)?;
                    for k in 0..d {
                        ou.row_mut(e)[k] = a[k] as f32;
                        oi.row_mut(e)[k] = b[k] as f32;
                    }
                }
                (Cow::Owned(ou), Cow::Owned(oi))
            }
        };
        Ok(Self {
            model,
            mode,
            mu,
            o_u,
            o_i,
        })
    }

    pub fn mode(&self) -> ScoreMode {
        self.mode
    }

    pub fn score(&self, u: usize, i: usize, e: usize) -> Result<f64> {
        self.model.check_user(u)?;
        self.model.check_item(i)?;
        self.model.check_rationale(e)?;
        Ok(self.score_unchecked(self.model.p.row(u), self.model.q.row(i), e))
    }

    #[inline]
    fn score_unchecked(&self, pu: &[f32], qi: &[f32], e: usize) -> f64 {
        let m = self.model;
        match self.mode {
            ScoreMode::Pitf => dot(pu, self.o_u.row(e)) + dot(qi, self.o_i.row(e)),
            ScoreMode::Bper | ScoreMode::BperPlus => {
                let r_ue = dot(pu, self.o_u.row(e)) + m.b_u.row(e)[0] as f64;
                let r_ie = dot(qi, self.o_i.row(e)) + m.b_i.row(e)[0] as f64;
                fuse(self.mu, r_ue, r_ie)
            }
        }
    }

    pub fn rank(&self, u: usize, i: usize, candidates: &[usize], k: usize) -> Result<RankList> {
        if candidates.is_empty() {
            return Err(Error::invalid("empty candidate list"));
        }
        self.model.check_user(u)?;
        self.model.check_item(i)?;
        let (pu, qi) = (self.model.p.row(u), self.model.q.row(i));
        let mut scored = Vec::with_capacity(candidates.len());
        for &e in candidates {
            self.model.check_rationale(e)?;
            scored.push((e, self.score_unchecked(pu, qi, e)));
        }
        Ok(top_k(scored, k))
    }

    /// Ranks the whole rationale catalog.
    pub fn rank_all(&self, u: usize, i: usize, k: usize) -> Result<RankList> {
        self.model.check_user(u)?;
        self.model.check_item(i)?;
        let (pu, qi) = (self.model.p.row(u), self.model.q.row(i));
        let scored = (0..self.model.dims.n_rationales)
            .map(|e| (e, self.score_unchecked(pu, qi, e)))
            .collect();
        Ok(top_k(scored, k))
    }
}

pub fn rank_rationales(
    model: &FactorModel,
    u: usize,
    i: usize,
    candidates: &[usize],
    k: usize,
    mu: f64,
    mode: ScoreMode,
) -> Result<RankList> {
    Scorer::new(model, mode, mu)?.rank(u, i, candidates, k)
}
