//! Python bindings: datasets, embedding tables, models, training and metrics.
//!
//! Everything is index based on the Python side; `Dataset` maps string ids
//! to the indices a `Model` expects.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use rrank::corpus::{read_interactions, InteractionRecord};
use rrank::evalrank::EvalReport;
use rrank::factors::Block;
use rrank::pipeline::{evaluate_test, initial_model, prepare, train_kind, DEFAULT_INIT_SCALE, DEFAULT_VALIDATION_FRACTION};
use rrank::seminit::write_embeddings_tsv;
use rrank::planted::{cluster_embeddings, generate, PlantedConfig};
use rrank::train::EpochRecord;
use rrank::{
    load_checkpoint, read_embedding_file, save_checkpoint, write_embedding_file, Checkpoint, EmbeddingTable, ModelKind,
    Prepared, Scorer, TrainConfig, TrainReport,
};

fn to_py(e: rrank::Error) -> PyErr {
    match e {
        rrank::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

type RecordTuple = (String, String, Vec<String>);

fn to_records(rows: Vec<RecordTuple>) -> Vec<InteractionRecord> {
    rows.into_iter()
        .map(|(user_id, item_id, rationale_ids)| InteractionRecord {
            user_id,
            item_id,
            rationale_ids,
        })
        .collect()
}

fn parse_block(name: &str) -> PyResult<Block> {
    Ok(match name {
        "p" | "user" => Block::User,
        "q" | "item" => Block::Item,
        "o_u" => Block::RationaleU,
        "o_i" => Block::RationaleI,
        "b_u" => Block::BiasU,
        "b_i" => Block::BiasI,
        "w" => Block::Projection,
        other => return Err(PyValueError::new_err(format!("unknown block `{other}`"))),
    })
}

/// Embedding table keyed by rationale id.
#[pyclass(name = "Embeddings", module = "rrank")]
struct PyEmbeddings {
    inner: EmbeddingTable,
}

#[pymethods]
impl PyEmbeddings {
    #[new]
    fn new(dim: usize) -> Self {
        Self {
            inner: EmbeddingTable::new(dim),
        }
    }

    /// Reads the binary format, or the TSV fallback for `.tsv` paths.
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_embedding_file(&path).map_err(to_py)?,
        })
    }

    /// Cluster-indicator vectors plus Gaussian noise for ids `e0..e{n-1}`.
    #[staticmethod]
    #[pyo3(signature = (n_rationales, n_clusters, dim, noise=0.01, seed=0))]
    fn clusters(n_rationales: usize, n_clusters: usize, dim: usize, noise: f64, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: cluster_embeddings(n_rationales, n_clusters, dim, noise, seed).map_err(to_py)?,
        })
    }

    /// Writes the binary format, or TSV for `.tsv` paths.
    fn write(&self, path: PathBuf) -> PyResult<()> {
        if path.extension().is_some_and(|e| e == "tsv") {
            let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
            write_embeddings_tsv(&self.inner, &mut out).map_err(to_py)?;
            return Ok(std::io::Write::flush(&mut out)?);
        }
        write_embedding_file(&self.inner, &path).map_err(to_py)
    }

    fn insert(&mut self, id: &str, vector: Vec<f32>) -> PyResult<()> {
        self.inner.insert(id, vector).map_err(to_py)
    }

    fn get(&self, id: &str) -> Option<Vec<f32>> {
        self.inner.get(id).map(<[f32]>::to_vec)
    }

    fn ids(&self) -> Vec<String> {
        self.inner.iter().map(|(id, _)| id.to_string()).collect()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Embeddings(count={}, dim={})", self.inner.len(), self.inner.dim())
    }
}

/// A train/test split with its catalog, histories and validation hold-out.
#[pyclass(name = "Dataset", module = "rrank")]
struct PyDataset {
    inner: Prepared,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (train, test, validation_fraction=DEFAULT_VALIDATION_FRACTION, seed=0))]
    fn from_files(train: PathBuf, test: PathBuf, validation_fraction: f64, seed: u64) -> PyResult<Self> {
        let train = read_interactions(&train).map_err(to_py)?.records;
        let test = read_interactions(&test).map_err(to_py)?.records;
        Ok(Self {
            inner: prepare(&train, &test, validation_fraction, seed).map_err(to_py)?,
        })
    }

    /// Records are `(user_id, item_id, [rationale_id, ...])` tuples.
    #[staticmethod]
    #[pyo3(signature = (train, test, validation_fraction=DEFAULT_VALIDATION_FRACTION, seed=0))]
    fn from_records(
        train: Vec<RecordTuple>,
        test: Vec<RecordTuple>,
        validation_fraction: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let (train, test) = (to_records(train), to_records(test));
        Ok(Self {
            inner: prepare(&train, &test, validation_fraction, seed).map_err(to_py)?,
        })
    }

    /// Synthetic data with 5 planted clusters; every fifth record is test.
    #[staticmethod]
    #[pyo3(signature = (seed=7))]
    fn planted(seed: u64) -> PyResult<Self> {
        let data = generate(&PlantedConfig {
            seed,
            ..Default::default()
        })
        .map_err(to_py)?;
        let (test, train): (Vec<_>, Vec<_>) = data.records.iter().enumerate().partition(|(n, _)| n % 5 == 0);
        let strip = |v: Vec<(usize, &InteractionRecord)>| v.into_iter().map(|(_, r)| r.clone()).collect::<Vec<_>>();
        Ok(Self {
            inner: prepare(&strip(train), &strip(test), DEFAULT_VALIDATION_FRACTION, seed).map_err(to_py)?,
        })
    }

    /// `(n_users, n_items, n_rationales)`.
    #[getter]
    fn sizes(&self) -> (usize, usize, usize) {
        self.inner.catalog.sizes()
    }

    #[getter]
    fn n_triplets(&self) -> usize {
        self.inner.triplets.len()
    }

    #[getter]
    fn n_validation_pairs(&self) -> usize {
        self.inner.validation.len()
    }

    /// Test pairs as `(user, item, [rationale, ...])` indices.
    fn test_pairs(&self) -> Vec<(usize, usize, Vec<usize>)> {
        self.inner
            .histories
            .test_pairs
            .iter()
            .map(|p| (p.user, p.item, p.truth.clone()))
            .collect()
    }

    fn user_index(&self, id: &str) -> PyResult<usize> {
        self.inner.catalog.user(id).map_err(to_py)
    }

    fn item_index(&self, id: &str) -> PyResult<usize> {
        self.inner.catalog.item(id).map_err(to_py)
    }

    fn rationale_index(&self, id: &str) -> PyResult<usize> {
        self.inner.catalog.rationale(id).map_err(to_py)
    }

    fn rationale_id(&self, index: usize) -> Option<String> {
        self.inner.catalog.rationales.id(index).map(str::to_string)
    }
}

/// A model of one kind plus its fusion weight, as stored in checkpoints.
#[pyclass(name = "Model", module = "rrank")]
struct PyModel {
    inner: Checkpoint,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_checkpoint(&path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: Checkpoint::from_bytes(data).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, &path).map_err(to_py)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = self.inner.to_bytes().map_err(to_py)?;
        Ok(PyBytes::new(py, &bytes))
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind.to_string()
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu
    }

    /// `(n_users, n_items, n_rationales, d)`.
    #[getter]
    fn dims(&self) -> (usize, usize, usize, usize) {
        let d = self.inner.model.dims();
        (d.n_users, d.n_items, d.n_rationales, d.d)
    }

    fn score(&self, user: usize, item: usize, rationale: usize) -> PyResult<f64> {
        let scorer = Scorer::new(&self.inner.model, self.inner.kind.score_mode(), self.inner.mu).map_err(to_py)?;
        scorer.score(user, item, rationale).map_err(to_py)
    }

    /// Top-k `(rationale, score)` over the whole catalog.
    #[pyo3(signature = (user, item, k=10))]
    fn rank(&self, user: usize, item: usize, k: usize) -> PyResult<Vec<(usize, f64)>> {
        let scorer = Scorer::new(&self.inner.model, self.inner.kind.score_mode(), self.inner.mu).map_err(to_py)?;
        Ok(scorer.rank_all(user, item, k).map_err(to_py)?.0)
    }

    /// Rows of one parameter block: p, q, o_u, o_i, b_u, b_i or w.
    fn factors(&self, block: &str) -> PyResult<Vec<Vec<f32>>> {
        let m = self
            .inner
            .model
            .block(parse_block(block)?)
            .ok_or_else(|| PyValueError::new_err(format!("model has no `{block}` block")))?;
        Ok((0..m.rows()).map(|r| m.row(r).to_vec()).collect())
    }

    fn __repr__(&self) -> String {
        let (u, i, e, d) = self.dims();
        format!("Model(kind={}, users={u}, items={i}, rationales={e}, d={d})", self.inner.kind)
    }
}

fn epoch_dict<'py>(py: Python<'py>, r: &EpochRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("epoch", r.epoch)?;
    d.set_item("loss", r.loss)?;
    d.set_item("val_ndcg", r.val_ndcg)?;
    d.set_item("secs", r.secs)?;
    Ok(d)
}

fn train_dict<'py>(py: Python<'py>, r: &TrainReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("initial_val_ndcg", r.initial_val_ndcg)?;
    d.set_item("best_epoch", r.best_epoch)?;
    d.set_item("best_val_ndcg", r.best_val_ndcg)?;
    let epochs = r
        .epochs
        .iter()
        .map(|e| epoch_dict(py, e))
        .collect::<PyResult<Vec<_>>>()?;
    d.set_item("epochs", epochs)?;
    Ok(d)
}

fn eval_dict<'py>(py: Python<'py>, r: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("cutoff", r.cutoff)?;
    d.set_item("ndcg", r.ndcg)?;
    d.set_item("precision", r.precision)?;
    d.set_item("recall", r.recall)?;
    d.set_item("f1", r.f1)?;
    d.set_item("pairs", r.pairs)?;
    d.set_item("unreachable", r.unreachable)?;
    Ok(d)
}

/// Starting model of the given kind (rand, pitf, bper, bper-plus, se-bper).
#[pyfunction]
#[pyo3(signature = (dataset, model="bper", dim=64, embeddings=None, init_scale=DEFAULT_INIT_SCALE, seed=0, mu=0.7))]
fn init_model(
    dataset: PyRef<'_, PyDataset>,
    model: &str,
    dim: usize,
    embeddings: Option<PyRef<'_, PyEmbeddings>>,
    init_scale: f32,
    seed: u64,
    mu: f64,
) -> PyResult<PyModel> {
    let kind: ModelKind = model.parse().map_err(to_py)?;
    let table = embeddings.as_ref().map(|e| &e.inner);
    let m = initial_model(kind, &dataset.inner, dim, table, init_scale, seed).map_err(to_py)?;
    Ok(PyModel {
        inner: Checkpoint { kind, mu, model: m },
    })
}

/// Trains a copy of `model`; returns `(best_model, report)`.
///
/// `on_epoch`, if given, is called with one dict per finished epoch.
#[pyfunction]
#[pyo3(signature = (
    model, dataset, lr=1e-3, l2=1e-4, negatives=3, mu=None, alpha=1.0,
    epochs=100, patience=3, batch=32, seed=0, cutoff=10, on_epoch=None
))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    model: PyRef<'_, PyModel>,
    dataset: PyRef<'_, PyDataset>,
    lr: f64,
    l2: f64,
    negatives: usize,
    mu: Option<f64>,
    alpha: f64,
    epochs: usize,
    patience: usize,
    batch: usize,
    seed: u64,
    cutoff: usize,
    on_epoch: Option<Py<PyAny>>,
) -> PyResult<(PyModel, Bound<'py, PyDict>)> {
    let kind = model.inner.kind;
    let config = TrainConfig {
        learning_rate: lr,
        l2,
        n_negatives: negatives,
        mu: mu.unwrap_or(model.inner.mu),
        alpha,
        max_epochs: epochs,
        patience,
        batch_size: batch,
        seed,
        mode: kind.score_mode(),
        eval_cutoff: cutoff,
    };
    let start = model.inner.model.clone();
    let prepared = &dataset.inner;
    let mut callback_error: Option<PyErr> = None;
    let result = py.detach(|| {
        train_kind(kind, start, prepared, &config, |r| {
            let Some(cb) = &on_epoch else { return };
            if callback_error.is_some() {
                return;
            }
            Python::attach(|py| {
                if let Err(e) = epoch_dict(py, r).and_then(|d| cb.call1(py, (d,))) {
                    callback_error = Some(e);
                }
            });
        })
    });
    if let Some(e) = callback_error {
        return Err(e);
    }
    let (trained, report) = result.map_err(to_py)?;
    Ok((
        PyModel {
            inner: Checkpoint {
                kind,
                mu: config.mu,
                model: trained,
            },
        },
        train_dict(py, &report)?,
    ))
}

/// Test-split metrics in percent.
#[pyfunction]
#[pyo3(signature = (model, dataset, cutoff=10))]
fn evaluate<'py>(
    py: Python<'py>,
    model: PyRef<'_, PyModel>,
    dataset: PyRef<'_, PyDataset>,
    cutoff: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let c = &model.inner;
    let prepared = &dataset.inner;
    let report = py
        .detach(|| evaluate_test(c.kind, &c.model, prepared, cutoff, c.mu))
        .map_err(to_py)?;
    eval_dict(py, &report)
}

/// nDCG@p of one ranked list against a truth set (fraction, not percent).
#[pyfunction]
fn ndcg_at(ranked: Vec<usize>, truth: Vec<usize>, p: usize) -> PyResult<f64> {
    rrank::ndcg_at(&ranked, &truth, p).map_err(to_py)
}

/// `(precision, recall, f1)` at p (fractions).
#[pyfunction]
fn precision_recall_f1_at(ranked: Vec<usize>, truth: Vec<usize>, p: usize) -> PyResult<(f64, f64, f64)> {
    rrank::precision_recall_f1_at(&ranked, &truth, p).map_err(to_py)
}

#[pymodule(name = "rrank")]
fn rrank_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEmbeddings>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(init_model, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at, m)?)?;
    m.add_function(wrap_pyfunction!(precision_recall_f1_at, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
