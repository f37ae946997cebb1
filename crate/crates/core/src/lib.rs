//! Prompt retrieval for in-context learning.
//!
//! Selects in-context examples for a query either by nearest-neighbour search
//! over fixed embeddings ([`similarity`]) or through a projection head trained
//! with a contrastive objective on mined positive/negative examples
//! ([`mining`], [`trainer`]). The [`evaluation`] module compares selection
//! methods against a pluggable performance [`oracle`], and [`synthetic_bench`]
//! provides a seeded latent-factor dataset to run everything end to end.

pub mod cli;
pub mod embedding_store;
pub mod error;
pub mod evaluation;
pub mod mining;
pub mod oracle;
pub mod similarity;
pub mod synthetic_bench;
pub mod trainer;
mod vector;

pub use embedding_store::{EmbeddingRecord, EmbeddingSet, Role};
pub use error::{Error, Result};
pub use evaluation::{ExperimentReport, MethodKind, PipelineConfig, SelectionMethod};
pub use mining::ContrastiveSets;
pub use oracle::{Oracle, PerformanceMatrix, Prompt, SyntheticOracle, SyntheticOracleParams};
pub use similarity::{Metric, Ranking};
pub use synthetic_bench::{BenchParams, LatentStore};
pub use trainer::{ProjectionHead, TrainConfig};
