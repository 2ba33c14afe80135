//! End-to-end glue: records in, trained model and test report out.

use crate::checkpoint::ModelKind;
use crate::corpus::{build_catalog, build_histories, eval_pairs, split_validation, triplets, Catalog, Histories};
use crate::corpus::{InteractionRecord, Triplet};
use crate::error::{Error, Result};
use crate::evalrank::{evaluate, Candidates, EvalPair, EvalReport};
use crate::factors::{init_random, BperPlusExtras, FactorModel, Matrix, ModelDims};
use crate::seminit::{semantic_initialize, EmbeddingTable};
use crate::train::{fit_with_progress, EpochRecord, TrainConfig, TrainReport};

/// Default half-width of the uniform random initialization.
pub const DEFAULT_INIT_SCALE: f32 = 0.1;

/// Fraction of train records held out for early stopping.
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.05;

/// Everything training needs, derived from one train/test split.
///
/// The catalog spans train and test. Histories and triplets come from the
/// train records minus the held-out validation records.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub catalog: Catalog,
    pub histories: Histories,
    pub triplets: Vec<Triplet>,
    pub validation: Vec<EvalPair>,
}

impl Prepared {
    pub fn dims(&self, d: usize) -> Result<ModelDims> {
        let (u, i, e) = self.catalog.sizes();
        ModelDims::new(u, i, e, d)
    }
}

pub fn prepare(
    train: &[InteractionRecord],
    test: &[InteractionRecord],
    validation_fraction: f64,
    seed: u64,
) -> Result<Prepared> {
    let mut all = train.to_vec();
    all.extend_from_slice(test);
    let catalog = build_catalog(&all, None)?;
    let (fit_part, val_part) = split_validation(train, validation_fraction, seed)?;
    let histories = build_histories(&catalog, &fit_part, test)?;
    Ok(Prepared {
        triplets: triplets(&catalog, &fit_part)?,
        validation: eval_pairs(&catalog, &val_part)?,
        catalog,
        histories,
    })
}

/// Rows of `table` for every catalog rationale, in catalog order.
pub fn semantic_matrix(table: &EmbeddingTable, catalog: &Catalog) -> Result<Matrix> {
    let mut missing = Vec::new();
    let mut rows = Vec::with_capacity(catalog.rationales.len());
    for id in catalog.rationales.ids() {
        match table.get(id) {
            Some(v) => rows.push(v.to_vec()),
            None => missing.push(id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingEmbeddings(missing));
    }
    let mut m = Matrix::zeros(rows.len(), table.dim());
    for (r, v) in rows.iter().enumerate() {
        m.row_mut(r).copy_from_slice(v);
    }
    Ok(m)
}

/// Starting point for `kind`: random for rand/pitf/bper, semantic for
/// se-bper, random factors plus a projection over frozen embeddings for bper-plus.
pub fn initial_model(
    kind: ModelKind,
    prepared: &Prepared,
    d: usize,
    embeddings: Option<&EmbeddingTable>,
    init_scale: f32,
    seed: u64,
) -> Result<FactorModel> {
    let dims = prepared.dims(d)?;
    let table = match (kind.needs_embeddings(), embeddings) {
        (true, None) => return Err(Error::invalid(format!("model `{kind}` needs an embedding table"))),
        (_, t) => t,
    };
    match kind {
        ModelKind::Rand | ModelKind::Pitf | ModelKind::Bper => init_random(dims, seed, init_scale),
        ModelKind::SeBper => {
            let init = semantic_initialize(dims, table.unwrap(), &prepared.catalog, &prepared.histories)?;
            Ok(init.model)
        }
        ModelKind::BperPlus => {
            let s = semantic_matrix(table.unwrap(), &prepared.catalog)?;
            let extras = BperPlusExtras::init_random(d, s, seed)?;
            init_random(dims, seed, init_scale)?.with_extras(extras)
        }
    }
}

/// Trains `model` unless `kind` is rand, which is returned untouched with a
/// report holding only its validation score.
pub fn train_kind(
    kind: ModelKind,
    model: FactorModel,
    prepared: &Prepared,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(FactorModel, TrainReport)> {
    let mut config = config.clone();
    config.mode = kind.score_mode();
    if kind == ModelKind::Rand {
        config.validate()?;
        let ndcg = evaluate(
            &model,
            &prepared.validation,
            &Candidates::All,
            config.eval_cutoff,
            config.mu,
            config.mode,
        )?
        .ndcg;
        let report = TrainReport {
            initial_val_ndcg: ndcg,
            best_val_ndcg: ndcg,
            ..Default::default()
        };
        return Ok((model, report));
    }
    fit_with_progress(
        model,
        &prepared.triplets,
        &prepared.histories,
        &prepared.validation,
        &config,
        on_epoch,
    )
}

/// Test-set report over all catalog rationales.
pub fn evaluate_test(
    kind: ModelKind,
    model: &FactorModel,
    prepared: &Prepared,
    cutoff: usize,
    mu: f64,
) -> Result<EvalReport> {
    evaluate(
        model,
        &prepared.histories.test_pairs,
        &Candidates::All,
        cutoff,
        mu,
        kind.score_mode(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planted::{cluster_embeddings, generate, PlantedConfig};

    fn tiny() -> Prepared {
        let cfg = PlantedConfig {
            n_users: 20,
            n_items: 10,
            n_rationales: 30,
            n_records: 300,
            ..Default::default()
        };
        let data = generate(&cfg).unwrap();
        let (train, test) = data.records.split_at(250);
        prepare(train, test, 0.1, 0).unwrap()
    }

    #[test]
    fn embeddings_required() {
        let p = tiny();
        for kind in [ModelKind::SeBper, ModelKind::BperPlus] {
            assert!(initial_model(kind, &p, 8, None, 0.1, 0).is_err());
        }
        assert!(initial_model(ModelKind::Bper, &p, 8, None, 0.1, 0).is_ok());
    }

    #[test]
    fn bper_plus_rows_follow_catalog() {
        let p = tiny();
        let table = cluster_embeddings(30, 5, 6, 0.1, 3).unwrap();
        let m = initial_model(ModelKind::BperPlus, &p, 4, Some(&table), 0.1, 0).unwrap();
        let s = &m.extras.as_ref().unwrap().s;
        for (r, id) in p.catalog.rationales.ids().iter().enumerate() {
            assert_eq!(s.row(r), table.get(id).unwrap());
        }
    }

    #[test]
    fn rand_is_not_trained() {
        let p = tiny();
        let m = initial_model(ModelKind::Rand, &p, 4, None, 0.1, 0).unwrap();
        let (out, report) = train_kind(ModelKind::Rand, m.clone(), &p, &TrainConfig::default(), |_| {}).unwrap();
        assert_eq!(out, m);
        assert!(report.epochs.is_empty());
    }
}
