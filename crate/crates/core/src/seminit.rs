//! Rationale embedding tables and semantic initialization of factor models.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! "SEBP" | version u32 | count u64 | dim u32
//! count x { id_len u16 | id utf-8 bytes | dim x f32 }
//! ```
//!
//! Records are written sorted by id. Files ending in `.tsv` are read as
//! `id <TAB> v1,v2,...` instead, with values parsed as decimal `f32`.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::corpus::{Catalog, Histories};
use crate::error::{Error, Result};
use crate::factors::{FactorModel, ModelDims};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"SEBP";
pub const EMBEDDING_VERSION: u32 = 1;
/// Bytes before the first record.
pub const EMBEDDING_HEADER_LEN: usize = 4 + 4 + 8 + 4;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, id: &str, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        if let Some(bad) = vector.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("embedding `{id}` has {bad}")));
        }
        if id.len() > u16::MAX as usize {
            return Err(Error::invalid(format!("id longer than {} bytes", u16::MAX)));
        }
        if self.vectors.insert(id.to_string(), vector).is_some() {
            return Err(Error::invalid(format!("duplicate embedding id `{id}`")));
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    /// Entries in id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

pub fn write_embeddings<W: Write>(table: &EmbeddingTable, mut w: W) -> Result<()> {
    if table.is_empty() {
        return Err(Error::invalid("refusing to write an empty embedding table"));
    }
    let dim = u32::try_from(table.dim).map_err(|_| Error::invalid("dimension exceeds u32"))?;
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
    w.write_all(&(table.len() as u64).to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    for (id, v) in table.iter() {
        w.write_all(&(id.len() as u16).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        for x in v {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_embedding_file(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_embeddings(table, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Byte reader that reports the offset of whatever it failed to read.
pub(crate) struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.offset(),
                format!("truncated {what}: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::format(self.offset(), format!("{what} length overflows")))?;
        let raw = self.take(len, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn parse_embeddings(bytes: &[u8]) -> Result<EmbeddingTable> {
    let mut cur = ByteCursor::new(bytes);
    if cur.take(4, "magic")? != EMBEDDING_MAGIC {
        return Err(Error::format(0, "bad magic, expected `SEBP`"));
    }
    let version = cur.u32("version")?;
    if version != EMBEDDING_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let count = cur.u64("record count")?;
    let dim = cur.u32("dimension")? as usize;
    let mut table = EmbeddingTable::new(dim);
    for _ in 0..count {
        let at = cur.offset();
        let id_len = cur.u16("id length")? as usize;
        let id = std::str::from_utf8(cur.take(id_len, "id")?)
            .map_err(|_| Error::format(at + 2, "id is not valid utf-8"))?;
        let v = cur.f32s(dim, "vector")?;
        table.insert(id, v).map_err(|e| Error::format(at, e.to_string()))?;
    }
    if cur.remaining() != 0 {
        return Err(Error::format(cur.offset(), "trailing bytes after last record"));
    }
    Ok(table)
}

pub fn parse_embeddings_tsv<R: BufRead>(reader: R) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = None;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: n + 1, message };
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected `id<TAB>values`".into()))?;
        let v = values
            .split(',')
            .map(|s| s.trim().parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(e.to_string()))?;
        let t = table.get_or_insert_with(|| EmbeddingTable::new(v.len()));
        t.insert(id, v).map_err(|e| parse_err(e.to_string()))?;
    }
    table.ok_or_else(|| Error::invalid("embedding file has no records"))
}

/// Text fallback: `id<TAB>v1,v2,...`, shortest round-trip float formatting.
pub fn write_embeddings_tsv<W: Write>(table: &EmbeddingTable, mut w: W) -> Result<()> {
    for (id, v) in table.iter() {
        if id.contains(['\t', '\n']) {
            return Err(Error::invalid(format!("id `{id}` cannot be written as tsv")));
        }
        let values: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        writeln!(w, "{id}\t{}", values.join(","))?;
    }
    Ok(())
}

pub fn read_embedding_file(path: &Path) -> Result<EmbeddingTable> {
    if path.extension().is_some_and(|e| e == "tsv") {
        let file = std::fs::File::open(path)?;
        return parse_embeddings_tsv(std::io::BufReader::new(file));
    }
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_embeddings(&bytes)
}

/// A semantically initialized model plus the count of table entries that
/// matched no catalog rationale.
#[derive(Debug, Clone)]
pub struct SemanticInit {
    pub model: FactorModel,
    pub unused_embeddings: usize,
}

/// Mean of the given rows, accumulated in f64 in the order given.
fn mean_of(rows: &[&[f32]], d: usize) -> Vec<f32> {
    let mut acc = vec![0.0f64; d];
    for r in rows {
        for (a, &x) in acc.iter_mut().zip(r.iter()) {
            *a += x as f64;
        }
    }
    let n = rows.len() as f64;
    acc.into_iter().map(|a| (a / n) as f32).collect()
}

/// Rationale factors (both sides) set to the embeddings; user and item factors
/// set to the mean embedding of their train history; biases zero. Users or
/// items with an empty history get the mean over all catalog rationales.
pub fn semantic_initialize(
    dims: ModelDims,
    table: &EmbeddingTable,
    catalog: &Catalog,
    histories: &Histories,
) -> Result<SemanticInit> {
    dims.validate()?;
    if table.dim() != dims.d {
        return Err(Error::Dimension {
            expected: dims.d,
            actual: table.dim(),
        });
    }
    let (n_users, n_items, n_rationales) = catalog.sizes();
    if (n_users, n_items, n_rationales) != (dims.n_users, dims.n_items, dims.n_rationales) {
        return Err(Error::Catalog(format!(
            "catalog sizes {:?} disagree with model dims {dims:?}",
            catalog.sizes()
        )));
    }
    if histories.user_rationales.len() != n_users || histories.item_rationales.len() != n_items {
        return Err(Error::Catalog("histories do not match catalog".into()));
    }

    let mut missing = Vec::new();
    let mut rows: Vec<&[f32]> = Vec::with_capacity(n_rationales);
    for id in catalog.rationales.ids() {
        match table.get(id) {
            Some(v) => rows.push(v),
            None => missing.push(id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingEmbeddings(missing));
    }
    let unused = table
        .iter()
        .filter(|(id, _)| catalog.rationales.get(id).is_none())
        .count();
    if unused > 0 {
        log::warn!("{unused} embedding(s) match no catalog rationale and were ignored");
    }

    let d = dims.d;
    let global = mean_of(&rows, d);
    let mut model = FactorModel::zeros(dims);
    for (e, v) in rows.iter().enumerate() {
        model.o_u.row_mut(e).copy_from_slice(v);
        model.o_i.row_mut(e).copy_from_slice(v);
    }
    let history_mean = |hist: &[usize]| -> Vec<f32> {
        if hist.is_empty() {
            global.clone()
        } else {
            let h: Vec<&[f32]> = hist.iter().map(|&e| rows[e]).collect();
            mean_of(&h, d)
        }
    };
    for (u, hist) in histories.user_rationales.iter().enumerate() {
        model.p.row_mut(u).copy_from_slice(&history_mean(hist));
    }
    for (i, hist) in histories.item_rationales.iter().enumerate() {
        model.q.row_mut(i).copy_from_slice(&history_mean(hist));
    }
    Ok(SemanticInit {
        model,
        unused_embeddings: unused,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_catalog, build_histories, InteractionRecord};

    fn table(entries: &[(&str, &[f32])]) -> EmbeddingTable {
        let mut t = EmbeddingTable::new(entries[0].1.len());
        for (id, v) in entries {
            t.insert(id, v.to_vec()).unwrap();
        }
        t
    }

    #[test]
    fn hand_assembled_bytes() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"SEBP");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        for (id, vals) in [("e1", [1.0f32, -2.5, 0.125]), ("e2", [3.0, 0.0, -0.75])] {
            bytes.extend_from_slice(&(id.len() as u16).to_le_bytes());
            bytes.extend_from_slice(id.as_bytes());
            for v in vals {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let t = parse_embeddings(&bytes).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.get("e1").unwrap(), &[1.0, -2.5, 0.125]);
        assert_eq!(t.get("e2").unwrap(), &[3.0, 0.0, -0.75]);

        let mut out = Vec::new();
        write_embeddings(&t, &mut out).unwrap();
        assert_eq!(out, bytes);
    }

    #[test]
    fn single_record_size() {
        let t = table(&[("abc", &[1.5])]);
        let mut out = Vec::new();
        write_embeddings(&t, &mut out).unwrap();
        assert_eq!(out.len(), EMBEDDING_HEADER_LEN + 2 + 3 + 4);
    }

    #[test]
    fn truncated_and_corrupt_inputs() {
        let t = table(&[("a", &[1.0, 2.0]), ("b", &[3.0, 4.0])]);
        let mut out = Vec::new();
        write_embeddings(&t, &mut out).unwrap();
        let cut = out.len() - 3;
        match parse_embeddings(&out[..cut]) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, (EMBEDDING_HEADER_LEN + 2 + 1 + 8 + 2 + 1) as u64);
                assert!(message.contains("truncated"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut bad = out.clone();
        bad[0] = b'X';
        assert!(matches!(parse_embeddings(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = out.clone();
        bad[4] = 9;
        assert!(matches!(parse_embeddings(&bad), Err(Error::Format { offset: 4, .. })));
        let mut extra = out.clone();
        extra.push(0);
        assert!(parse_embeddings(&extra).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"SEBP");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        for _ in 0..2 {
            bytes.extend_from_slice(&1u16.to_le_bytes());
            bytes.push(b'x');
            bytes.extend_from_slice(&0.5f32.to_le_bytes());
        }
        assert!(matches!(parse_embeddings(&bytes), Err(Error::Format { offset: 27, .. })));
    }

    #[test]
    fn tsv_fallback() {
        let t = parse_embeddings_tsv("e1\t0.5,1\ne2\t-2,3.25\n".as_bytes()).unwrap();
        assert_eq!(t.get("e2").unwrap(), &[-2.0, 3.25]);
        assert!(parse_embeddings_tsv("e1\t0.5,1\ne2\t1\n".as_bytes()).is_err());
    }

    fn setup(train: &[InteractionRecord]) -> (Catalog, Histories, ModelDims) {
        let c = build_catalog(train, None).unwrap();
        let h = build_histories(&c, train, &[]).unwrap();
        let (nu, ni, ne) = c.sizes();
        (c, h, ModelDims::new(nu, ni, ne, 2).unwrap())
    }

    #[test]
    fn means_and_equal_sides() {
        let train = vec![
            InteractionRecord::new("u1", "i1", &["a"]),
            InteractionRecord::new("u2", "i1", &["a", "b"]),
        ];
        let (c, h, dims) = setup(&train);
        let t = table(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0]), ("zzz", &[9.0, 9.0])]);
        let init = semantic_initialize(dims, &t, &c, &h).unwrap();
        let m = &init.model;
        assert_eq!(init.unused_embeddings, 1);
        assert_eq!(m.p.row(0), &[1.0, 0.0]);
        assert_eq!(m.p.row(1), &[0.5, 0.5]);
        assert_eq!(m.q.row(0), &[0.5, 0.5]);
        assert_eq!(m.o_u, m.o_i);
        assert!(m.b_u.as_slice().iter().chain(m.b_i.as_slice()).all(|&x| x == 0.0));
    }

    #[test]
    fn cold_item_gets_global_mean() {
        let train = vec![InteractionRecord::new("u1", "i1", &["a", "b"])];
        let test = vec![InteractionRecord::new("u1", "i2", &["a"])];
        let mut c = build_catalog(&train, None).unwrap();
        c.extend(&test);
        let h = build_histories(&c, &train, &test).unwrap();
        let (nu, ni, ne) = c.sizes();
        let dims = ModelDims::new(nu, ni, ne, 2).unwrap();
        let t = table(&[("a", &[1.0, 0.0]), ("b", &[3.0, 0.0])]);
        let m = semantic_initialize(dims, &t, &c, &h).unwrap().model;
        assert_eq!(m.q.row(1), &[2.0, 0.0]);
    }

    #[test]
    fn missing_and_mismatched() {
        let train = vec![InteractionRecord::new("u1", "i1", &["a", "b"])];
        let (c, h, dims) = setup(&train);
        let t = table(&[("a", &[1.0, 0.0])]);
        match semantic_initialize(dims, &t, &c, &h) {
            Err(Error::MissingEmbeddings(ids)) => assert_eq!(ids, vec!["b".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
        let t = table(&[("a", &[1.0, 0.0, 0.0]), ("b", &[1.0, 0.0, 0.0])]);
        assert!(matches!(semantic_initialize(dims, &t, &c, &h), Err(Error::Dimension { .. })));
    }

    #[test]
    fn tsv_round_trip_is_bit_exact() {
        let mut t = EmbeddingTable::new(3);
        t.insert("a", vec![0.1, -1.0e-30, 3.4e38]).unwrap();
        t.insert("b", vec![f32::MIN_POSITIVE, 1.0 / 3.0, -0.0]).unwrap();
        let mut buf = Vec::new();
        write_embeddings_tsv(&t, &mut buf).unwrap();
        let back = parse_embeddings_tsv(buf.as_slice()).unwrap();
        for (id, v) in t.iter() {
            let w = back.get(id).unwrap();
            assert!(v.iter().zip(w).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
