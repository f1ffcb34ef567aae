//! Reranking of machine-translated image captions by retrieval over a
//! target-language caption collection.

pub mod collection;
pub mod error;
pub mod evalsig;
pub mod features;
pub mod kbest;
pub mod pipeline;
pub mod rerank;
pub mod retrieval;
pub mod textcore;
pub mod tune;

pub use collection::{CaptionDoc, Collection, CollectionBuilder, EmptyCaptionPolicy};
pub use error::{Error, Result};
pub use evalsig::{approx_randomization, bleu_score, bleu_stats, BleuStats, RandomizationResult};
pub use features::FeatureStore;
pub use kbest::{Hypothesis, KBestList};
pub use rerank::{select_best, RerankParams, RerankedOutput};
pub use retrieval::{MatchList, Mode, Query, RetrievalParams, Retriever};
pub use textcore::{IdfTable, TermWeight, TokenSeq};
pub use tune::{stepwise_search, GridSpec, TunePoint, TuneResult};
