//! Interaction and rationale-text ingestion, ID catalogs, and rationale histories.
//!
//! Interaction files are line-oriented TSV:
//!
//! ```text
//! user_id <TAB> item_id <TAB> rationale_id[,rationale_id...]
//! ```
//!
//! Rationale text files are `rationale_id <TAB> text`. In both, blank lines and
//! lines starting with `#` are skipped.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evalrank::EvalPair;

/// One observed (user, item, rationale-set) record.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub rationale_ids: Vec<String>,
}

impl InteractionRecord {
    pub fn new(user_id: &str, item_id: &str, rationale_ids: &[&str]) -> Self {
        Self {
            user_id: user_id.to_string(),
            item_id: item_id.to_string(),
            rationale_ids: rationale_ids.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedInteractions {
    pub records: Vec<InteractionRecord>,
    /// Rationale ids dropped because they repeated within a single line.
    pub duplicates_removed: usize,
}

impl ParsedInteractions {
    pub fn triplet_count(&self) -> usize {
        self.records.iter().map(|r| r.rationale_ids.len()).sum()
    }
}

fn is_skipped(line: &str) -> bool {
    line.trim().is_empty() || line.starts_with('#')
}

pub fn parse_interactions<R: BufRead>(reader: R) -> Result<ParsedInteractions> {
    let mut out = ParsedInteractions::default();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if is_skipped(line) {
            continue;
        }
        let mut fields = line.split('\t');
        let (user, item, rats) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(u), Some(i), Some(r), None) => (u, i, r),
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    message: "expected 3 tab-separated fields".into(),
                })
            }
        };
        if user.is_empty() || item.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                message: "empty user or item id".into(),
            });
        }
        if rats.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                message: "empty rationale field".into(),
            });
        }
        let mut rationale_ids: Vec<String> = Vec::new();
        for id in rats.split(',') {
            if id.is_empty() {
                return Err(Error::Parse {
                    line: lineno,
                    message: "empty rationale id".into(),
                });
            }
            if rationale_ids.iter().any(|r| r == id) {
                out.duplicates_removed += 1;
            } else {
                rationale_ids.push(id.to_string());
            }
        }
        out.records.push(InteractionRecord {
            user_id: user.to_string(),
            item_id: item.to_string(),
            rationale_ids,
        });
    }
    Ok(out)
}

pub fn parse_interactions_str(text: &str) -> Result<ParsedInteractions> {
    parse_interactions(text.as_bytes())
}

pub fn read_interactions(path: &Path) -> Result<ParsedInteractions> {
    let file = std::fs::File::open(path)?;
    parse_interactions(std::io::BufReader::new(file))
}

pub fn write_interactions<W: Write>(records: &[InteractionRecord], mut w: W) -> Result<()> {
    for r in records {
        writeln!(w, "{}\t{}\t{}", r.user_id, r.item_id, r.rationale_ids.join(","))?;
    }
    Ok(())
}

/// Parses `rationale_id <TAB> text` lines. Text is everything after the first tab.
pub fn parse_rationale_texts<R: BufRead>(reader: R) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if is_skipped(line) {
            continue;
        }
        let (id, text) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: n + 1,
            message: "expected `id<TAB>text`".into(),
        })?;
        if id.is_empty() {
            return Err(Error::Parse {
                line: n + 1,
                message: "empty rationale id".into(),
            });
        }
        out.push((id.to_string(), text.to_string()));
    }
    Ok(out)
}

pub fn read_rationale_texts(path: &Path) -> Result<Vec<(String, String)>> {
    let file = std::fs::File::open(path)?;
    parse_rationale_texts(std::io::BufReader::new(file))
}

/// Dense string <-> index bijection, indices assigned in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn insert(&mut self, id: &str) -> usize {
        if let Some(&idx) = self.index.get(id) {
            return idx;
        }
        let idx = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), idx);
        idx
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> Option<&str> {
        self.ids.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Catalog {
    pub users: IdMap,
    pub items: IdMap,
    pub rationales: IdMap,
    texts: Vec<Option<String>>,
}

pub fn build_catalog(
    records: &[InteractionRecord],
    texts: Option<&[(String, String)]>,
) -> Result<Catalog> {
    if records.is_empty() {
        return Err(Error::Catalog("no records".into()));
    }
    let mut catalog = Catalog::default();
    catalog.extend(records);
    if let Some(texts) = texts {
        catalog.attach_texts(texts)?;
    }
    Ok(catalog)
}

impl Catalog {
    /// Adds ids not yet present, continuing the first-appearance numbering.
    pub fn extend(&mut self, records: &[InteractionRecord]) {
        for r in records {
            self.users.insert(&r.user_id);
            self.items.insert(&r.item_id);
            for e in &r.rationale_ids {
                self.rationales.insert(e);
            }
        }
        self.texts.resize(self.rationales.len(), None);
    }

    pub fn attach_texts(&mut self, texts: &[(String, String)]) -> Result<()> {
        self.texts.resize(self.rationales.len(), None);
        for (id, text) in texts {
            let idx = self
                .rationales
                .get(id)
                .ok_or_else(|| Error::Catalog(format!("text for unknown rationale `{id}`")))?;
            self.texts[idx] = Some(text.clone());
        }
        Ok(())
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.users.len(), self.items.len(), self.rationales.len())
    }

    pub fn text(&self, rationale: usize) -> Option<&str> {
        self.texts.get(rationale).and_then(|t| t.as_deref())
    }

    pub fn user(&self, id: &str) -> Result<usize> {
        self.users.get(id).ok_or_else(|| Error::UnknownId {
            kind: "user",
            id: id.to_string(),
        })
    }

    pub fn item(&self, id: &str) -> Result<usize> {
        self.items.get(id).ok_or_else(|| Error::UnknownId {
            kind: "item",
            id: id.to_string(),
        })
    }

    pub fn rationale(&self, id: &str) -> Result<usize> {
        self.rationales.get(id).ok_or_else(|| Error::UnknownId {
            kind: "rationale",
            id: id.to_string(),
        })
    }

    /// Sidecar format: a header line then `u|i|e <TAB> id [<TAB> text]` in index order.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "#rrank-catalog\t1")?;
        for id in self.users.ids() {
            writeln!(w, "u\t{id}")?;
        }
        for id in self.items.ids() {
            writeln!(w, "i\t{id}")?;
        }
        for (idx, id) in self.rationales.ids().iter().enumerate() {
            match self.text(idx) {
                Some(text) => writeln!(w, "e\t{id}\t{text}")?,
                None => writeln!(w, "e\t{id}")?,
            }
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut catalog = Catalog::default();
        let mut texts = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if n == 0 {
                if line != "#rrank-catalog\t1" {
                    return Err(Error::Parse {
                        line: 1,
                        message: "not a catalog file".into(),
                    });
                }
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (kind, id) = match (parts.next(), parts.next()) {
                (Some(k), Some(id)) if !id.is_empty() => (k, id),
                _ => {
                    return Err(Error::Parse {
                        line: n + 1,
                        message: "malformed catalog entry".into(),
                    })
                }
            };
            let map = match kind {
                "u" => &mut catalog.users,
                "i" => &mut catalog.items,
                "e" => &mut catalog.rationales,
                other => {
                    return Err(Error::Parse {
                        line: n + 1,
                        message: format!("unknown entry kind `{other}`"),
                    })
                }
            };
            let before = map.len();
            if map.insert(id) != before {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("duplicate id `{id}`"),
                });
            }
            if kind == "e" {
                texts.push(parts.next().map(str::to_string));
            }
        }
        catalog.texts = texts;
        Ok(catalog)
    }
}

/// A single (user, item, rationale) training event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub user: usize,
    pub item: usize,
    pub rationale: usize,
}

/// Expands records to one triplet per rationale, keeping repeats across records.
pub fn triplets(catalog: &Catalog, records: &[InteractionRecord]) -> Result<Vec<Triplet>> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let user = catalog.user(&r.user_id)?;
        let item = catalog.item(&r.item_id)?;
        for e in &r.rationale_ids {
            out.push(Triplet {
                user,
                item,
                rationale: catalog.rationale(e)?,
            });
        }
    }
    Ok(out)
}

/// Groups records by (user, item) in first-appearance order, merging rationale sets.
pub fn eval_pairs(catalog: &Catalog, records: &[InteractionRecord]) -> Result<Vec<EvalPair>> {
    let mut pos: HashMap<(usize, usize), usize> = HashMap::new();
    let mut pairs: Vec<EvalPair> = Vec::new();
    for r in records {
        let user = catalog.user(&r.user_id)?;
        let item = catalog.item(&r.item_id)?;
        let slot = *pos.entry((user, item)).or_insert_with(|| {
            pairs.push(EvalPair {
                user,
                item,
                truth: Vec::new(),
            });
            pairs.len() - 1
        });
        for e in &r.rationale_ids {
            pairs[slot].truth.push(catalog.rationale(e)?);
        }
    }
    for p in &mut pairs {
        p.truth.sort_unstable();
        p.truth.dedup();
    }
    Ok(pairs)
}

/// Per-user and per-item rationale sets from train, and ground truth from test.
///
/// All sets are sorted ascending and duplicate-free.
#[derive(Debug, Clone, Default)]
pub struct Histories {
    pub user_rationales: Vec<Vec<usize>>,
    pub item_rationales: Vec<Vec<usize>>,
    /// Items each user interacted with in train.
    pub user_items: Vec<Vec<usize>>,
    train_pairs: HashMap<(usize, usize), Vec<usize>>,
    pub test_pairs: Vec<EvalPair>,
}

pub fn build_histories(
    catalog: &Catalog,
    train: &[InteractionRecord],
    test: &[InteractionRecord],
) -> Result<Histories> {
    let (n_users, n_items, _) = catalog.sizes();
    let mut h = Histories {
        user_rationales: vec![Vec::new(); n_users],
        item_rationales: vec![Vec::new(); n_items],
        user_items: vec![Vec::new(); n_users],
        train_pairs: HashMap::new(),
        test_pairs: Vec::new(),
    };
    for t in triplets(catalog, train)? {
        h.user_rationales[t.user].push(t.rationale);
        h.item_rationales[t.item].push(t.rationale);
        h.user_items[t.user].push(t.item);
        h.train_pairs
            .entry((t.user, t.item))
            .or_default()
            .push(t.rationale);
    }
    for set in h
        .user_rationales
        .iter_mut()
        .chain(h.item_rationales.iter_mut())
        .chain(h.user_items.iter_mut())
        .chain(h.train_pairs.values_mut())
    {
        set.sort_unstable();
        set.dedup();
    }
    h.test_pairs = eval_pairs(catalog, test)?;
    Ok(h)
}

impl Histories {
    /// Rationales the user attached to the item in train (empty if the pair is unseen).
    pub fn pair_rationales(&self, user: usize, item: usize) -> &[usize] {
        self.train_pairs
            .get(&(user, item))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn mean_truth_size(&self) -> f64 {
        if self.test_pairs.is_empty() {
            return 0.0;
        }
        let total: usize = self.test_pairs.iter().map(|p| p.truth.len()).sum();
        total as f64 / self.test_pairs.len() as f64
    }
}

/// Deterministic hold-out of `round(fraction * n)` records; both parts keep input order.
pub fn split_validation(
    train: &[InteractionRecord],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<InteractionRecord>, Vec<InteractionRecord>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "validation fraction {fraction} not in (0, 1)"
        )));
    }
    let n_val = (fraction * train.len() as f64).round() as usize;
    if n_val == 0 || n_val >= train.len() {
        return Err(Error::invalid(format!(
            "fraction {fraction} of {} records leaves an empty side",
            train.len()
        )));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut held = vec![false; train.len()];
    for &i in &order[..n_val] {
        held[i] = true;
    }
    let mut keep = Vec::with_capacity(train.len() - n_val);
    let mut val = Vec::with_capacity(n_val);
    for (r, h) in train.iter().zip(held) {
        if h {
            val.push(r.clone());
        } else {
            keep.push(r.clone());
        }
    }
    Ok((keep, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_basic_line() {
        let p = parse_interactions_str("u1\ti1\te1,e2\n").unwrap();
        assert_eq!(p.records, vec![InteractionRecord::new("u1", "i1", &["e1", "e2"])]);
        assert_eq!(p.duplicates_removed, 0);
    }

    #[test]
    fn dedups_within_line() {
        let p = parse_interactions_str("u1\ti1\te1,e1").unwrap();
        assert_eq!(p.records[0].rationale_ids, vec!["e1"]);
        assert_eq!(p.duplicates_removed, 1);
    }

    #[test]
    fn skips_comments_and_blanks() {
        let p = parse_interactions_str("# header\n\nu1\ti1\te1\n").unwrap();
        assert_eq!(p.records.len(), 1);
    }

    #[test]
    fn malformed_lines_report_line_number() {
        match parse_interactions_str("u1\ti1\te1\nu2\ti2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match parse_interactions_str("u1\ti1\t\n") {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 1);
                assert!(message.contains("empty rationale"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_interactions_str("u1\ti1\te1\textra\n").is_err());
        assert!(parse_interactions_str("u1\ti1\te1,,e2\n").is_err());
    }

    #[test]
    fn singleton_catalog() {
        let recs = vec![InteractionRecord::new("u1", "i1", &["e1"])];
        let c = build_catalog(&recs, None).unwrap();
        assert_eq!(c.sizes(), (1, 1, 1));
        assert_eq!(c.users.get("u1"), Some(0));
    }

    #[test]
    fn first_appearance_order() {
        let recs = vec![
            InteractionRecord::new("u3", "i1", &["e1"]),
            InteractionRecord::new("u1", "i1", &["e1"]),
            InteractionRecord::new("u2", "i1", &["e1"]),
            InteractionRecord::new("u3", "i2", &["e2"]),
        ];
        let c = build_catalog(&recs, None).unwrap();
        assert_eq!(c.users.get("u3"), Some(0));
        assert_eq!(c.users.get("u1"), Some(1));
        assert_eq!(c.users.get("u2"), Some(2));
        assert_eq!(c.users.id(2), Some("u2"));
    }

    #[test]
    fn empty_records_rejected() {
        assert!(build_catalog(&[], None).is_err());
    }

    #[test]
    fn text_for_unknown_rationale_is_error() {
        let recs = vec![InteractionRecord::new("u1", "i1", &["e1"])];
        let texts = vec![("e9".to_string(), "nope".to_string())];
        assert!(matches!(build_catalog(&recs, Some(&texts)), Err(Error::Catalog(_))));
        let texts = vec![("e1".to_string(), "Excellent movie".to_string())];
        let c = build_catalog(&recs, Some(&texts)).unwrap();
        assert_eq!(c.text(0), Some("Excellent movie"));
    }

    #[test]
    fn histories_union_and_separation() {
        let train = vec![
            InteractionRecord::new("u1", "i1", &["e1"]),
            InteractionRecord::new("u1", "i2", &["e2"]),
        ];
        let test = vec![InteractionRecord::new("u1", "i3", &["e2"])];
        let mut c = build_catalog(&train, None).unwrap();
        c.extend(&test);
        let h = build_histories(&c, &train, &test).unwrap();
        let e1 = c.rationales.get("e1").unwrap();
        let e2 = c.rationales.get("e2").unwrap();
        let u1 = c.users.get("u1").unwrap();
        let i1 = c.items.get("i1").unwrap();
        let i3 = c.items.get("i3").unwrap();
        assert_eq!(h.user_rationales[u1], vec![e1, e2]);
        assert_eq!(h.item_rationales[i1], vec![e1]);
        assert!(h.item_rationales[i3].is_empty());
        assert_eq!(h.test_pairs.len(), 1);
        assert_eq!(h.test_pairs[0].user, u1);
        assert_eq!(h.test_pairs[0].item, i3);
        assert_eq!(h.test_pairs[0].truth, vec![e2]);
        assert_eq!(h.pair_rationales(u1, i1), &[e1]);
    }

    #[test]
    fn test_only_rationale_pair_is_retained() {
        let train = vec![InteractionRecord::new("u1", "i1", &["e1"])];
        let test = vec![InteractionRecord::new("u1", "i1", &["e7"])];
        let mut c = build_catalog(&train, None).unwrap();
        c.extend(&test);
        let h = build_histories(&c, &train, &test).unwrap();
        assert_eq!(h.test_pairs.len(), 1);
        assert_eq!(h.test_pairs[0].truth, vec![1]);
    }

    #[test]
    fn catalog_miss_is_error() {
        let train = vec![InteractionRecord::new("u1", "i1", &["e1"])];
        let test = vec![InteractionRecord::new("u2", "i1", &["e1"])];
        let c = build_catalog(&train, None).unwrap();
        assert!(matches!(
            build_histories(&c, &train, &test),
            Err(Error::UnknownId { kind: "user", .. })
        ));
    }

    fn hundred() -> Vec<InteractionRecord> {
        (0..100)
            .map(|k| InteractionRecord::new(&format!("u{k}"), "i", &["e"]))
            .collect()
    }

    #[test]
    fn split_counts_and_determinism() {
        let recs = hundred();
        let (a, b) = split_validation(&recs, 0.05, 7).unwrap();
        assert_eq!((a.len(), b.len()), (95, 5));
        let (a2, b2) = split_validation(&recs, 0.05, 7).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        let mut all: Vec<_> = a.into_iter().chain(b).collect();
        let mut orig = recs.clone();
        all.sort_by(|x, y| x.user_id.cmp(&y.user_id));
        orig.sort_by(|x, y| x.user_id.cmp(&y.user_id));
        assert_eq!(all, orig);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let recs = hundred();
        assert!(split_validation(&recs, 0.0, 1).is_err());
        assert!(split_validation(&recs, 1.0, 1).is_err());
        assert!(split_validation(&recs, 0.001, 1).is_err());
    }

    #[test]
    fn catalog_sidecar_round_trip() {
        let recs = vec![
            InteractionRecord::new("u1", "i1", &["e1", "e2"]),
            InteractionRecord::new("u2", "i1", &["e3"]),
        ];
        let texts = vec![("e2".to_string(), "great\tvalue".to_string())];
        let c = build_catalog(&recs, Some(&texts)).unwrap();
        let mut buf = Vec::new();
        c.write(&mut buf).unwrap();
        let back = Catalog::read(buf.as_slice()).unwrap();
        assert_eq!(back, c);
    }
}
