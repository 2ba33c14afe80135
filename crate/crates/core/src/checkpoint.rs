//! Binary model checkpoints.
//!
//! ```text
//! "RRNK" | version u32 | n_users u64 | n_items u64 | n_rationales u64 | d u64
//! | kind u8 | mu f64 | P | Q | O_U | O_I | b_U | b_I        (row-major f32)
//! [bper-plus only] d_sem u32 | W (d x d_sem) | S (n_rationales x d_sem)
//! ```
//!
//! All integers and floats are little-endian.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::factors::{check_mu, BperPlusExtras, FactorModel, Matrix, ModelDims, ScoreMode};
use crate::seminit::ByteCursor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RRNK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Which model family produced a checkpoint; stored as the kind byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Rand = 0,
    Pitf = 1,
    Bper = 2,
    BperPlus = 3,
    SeBper = 4,
}

impl ModelKind {
    pub fn score_mode(self) -> ScoreMode {
        match self {
            ModelKind::Rand | ModelKind::Bper | ModelKind::SeBper => ScoreMode::Bper,
            ModelKind::BperPlus => ScoreMode::BperPlus,
            ModelKind::Pitf => ScoreMode::Pitf,
        }
    }

    pub fn needs_embeddings(self) -> bool {
        matches!(self, ModelKind::BperPlus | ModelKind::SeBper)
    }

    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => ModelKind::Rand,
            1 => ModelKind::Pitf,
            2 => ModelKind::Bper,
            3 => ModelKind::BperPlus,
            4 => ModelKind::SeBper,
            _ => return None,
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rand" => ModelKind::Rand,
            "pitf" => ModelKind::Pitf,
            "bper" => ModelKind::Bper,
            "bper-plus" | "bper_plus" => ModelKind::BperPlus,
            "se-bper" | "se_bper" => ModelKind::SeBper,
            other => return Err(Error::invalid(format!("unknown model `{other}`"))),
        })
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Rand => "rand",
            ModelKind::Pitf => "pitf",
            ModelKind::Bper => "bper",
            ModelKind::BperPlus => "bper-plus",
            ModelKind::SeBper => "se-bper",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub mu: f64,
    pub model: FactorModel,
}

fn write_f32s<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    let mut buf = Vec::with_capacity(m.as_slice().len() * 4);
    for x in m.as_slice() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        check_mu(self.mu)?;
        let m = &self.model;
        let dims = m.dims();
        if (self.kind == ModelKind::BperPlus) != m.extras.is_some() {
            return Err(Error::invalid(
                "projection extras must be present exactly for bper-plus checkpoints",
            ));
        }
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for n in [dims.n_users, dims.n_items, dims.n_rationales, dims.d] {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        w.write_all(&[self.kind as u8])?;
        w.write_all(&self.mu.to_le_bytes())?;
        for block in [&m.p, &m.q, &m.o_u, &m.o_i, &m.b_u, &m.b_i] {
            write_f32s(&mut w, block)?;
        }
        if let Some(x) = &m.extras {
            let d_sem = u32::try_from(x.d_sem()).map_err(|_| Error::invalid("d_sem exceeds u32"))?;
            w.write_all(&d_sem.to_le_bytes())?;
            write_f32s(&mut w, &x.w)?;
            write_f32s(&mut w, &x.s)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write(&mut out)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor::new(bytes);
        if cur.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "bad magic, expected `RRNK`"));
        }
        let version = cur.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
        }
        let mut raw = [0usize; 4];
        for (slot, what) in raw.iter_mut().zip(["n_users", "n_items", "n_rationales", "d"]) {
            let at = cur.offset();
            *slot = usize::try_from(cur.u64(what)?)
                .map_err(|_| Error::format(at, format!("{what} does not fit in memory")))?;
        }
        let dims = ModelDims::new(raw[0], raw[1], raw[2], raw[3]).map_err(|e| Error::format(8, e.to_string()))?;
        let kind_at = cur.offset();
        let kind = ModelKind::from_byte(cur.u8("kind")?)
            .ok_or_else(|| Error::format(kind_at, "unknown model kind byte"))?;
        let mu_at = cur.offset();
        let mu = cur.f64("mu")?;
        check_mu(mu).map_err(|e| Error::format(mu_at, e.to_string()))?;

        let read_matrix = |cur: &mut ByteCursor, rows: usize, cols: usize, what: &str| -> Result<Matrix> {
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::format(cur.offset(), format!("{what} size overflows")))?;
            Matrix::from_vec(rows, cols, cur.f32s(n, what)?)
        };
        let p = read_matrix(&mut cur, dims.n_users, dims.d, "P")?;
        let q = read_matrix(&mut cur, dims.n_items, dims.d, "Q")?;
        let o_u = read_matrix(&mut cur, dims.n_rationales, dims.d, "O_U")?;
        let o_i = read_matrix(&mut cur, dims.n_rationales, dims.d, "O_I")?;
        let b_u = read_matrix(&mut cur, dims.n_rationales, 1, "b_U")?;
        let b_i = read_matrix(&mut cur, dims.n_rationales, 1, "b_I")?;
        let mut model = FactorModel::from_parts(p, q, o_u, o_i, b_u, b_i)?;
        if kind == ModelKind::BperPlus {
            let d_sem = cur.u32("d_sem")? as usize;
            let w = read_matrix(&mut cur, dims.d, d_sem, "W")?;
            let s = read_matrix(&mut cur, dims.n_rationales, d_sem, "S")?;
            model = model.with_extras(BperPlusExtras::new(w, s)?)?;
        }
        if cur.remaining() != 0 {
            return Err(Error::format(cur.offset(), "trailing bytes after checkpoint"));
        }
        Ok(Checkpoint { kind, mu, model })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
