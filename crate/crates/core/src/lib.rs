//! Latent-factor rationale ranking for explainable recommendation.
//!
//! Given a user and an item already chosen by some recommender, rank candidate
//! textual rationales by estimated relevance. The crate covers ingestion of
//! tripartite (user, item, rationale) data, the BPER / BPER+ / PITF scoring
//! rules, pairwise training with sparse Adam, semantic initialization of
//! factors from rationale embeddings, and top-p ranking metrics.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod evalrank;
pub mod factors;
pub mod pipeline;
pub mod planted;
pub mod seminit;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelKind};
pub use corpus::{
    build_catalog, build_histories, parse_interactions, split_validation, Catalog, Histories,
    InteractionRecord, Triplet,
};
pub use error::{Error, Result};
pub use evalrank::{evaluate, ndcg_at, precision_recall_f1_at, Candidates, EvalPair, EvalReport};
pub use factors::{
    init_random, rank_rationales, score_ie, score_pitf, score_ue, score_uie, FactorModel,
    ModelDims, RankList, ScoreMode, Scorer,
};
pub use pipeline::{initial_model, prepare, train_kind, Prepared};
pub use seminit::{read_embedding_file, semantic_initialize, write_embedding_file, EmbeddingTable};
pub use train::{fit, fit_with_progress, TrainConfig, TrainReport};
