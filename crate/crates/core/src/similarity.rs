//! Pairwise scoring and exact top-K retrieval.
//!
//! Every metric is expressed as a score where larger is better, so distances
//! are negated. Rankings are sorted by `(score desc, id asc)`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding_store::{EmbeddingSet, Role};
use crate::error::{Error, Result};
use crate::trainer::ProjectionHead;
use crate::vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
    Manhattan,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Cosine, Metric::Euclidean, Metric::Manhattan];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
            Metric::Manhattan => "manhattan",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            "manhattan" => Ok(Metric::Manhattan),
            other => Err(Error::InvalidParams(format!("unknown metric {other:?}"))),
        }
    }
}

pub fn score(a: &[f64], b: &[f64], metric: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    match metric {
        Metric::Cosine => {
            vector::cosine(a, b).ok_or_else(|| Error::ZeroVector("cosine operand".into()))
        }
        Metric::Euclidean => Ok(-a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()),
        Metric::Manhattan => Ok(-a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()),
    }
}

pub fn apply_head(head: &ProjectionHead, v: &[f64]) -> Result<Vec<f64>> {
    head.apply(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
    /// Set when fewer than the requested `k` candidates existed.
    pub truncated: bool,
}

impl Ranking {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }
}

fn rank_order(a: &RankedEntry, b: &RankedEntry) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

/// Scores every source against a query in a (possibly projected) space.
/// Projection happens once at build time.
pub struct RetrievalIndex<'a> {
    set: &'a EmbeddingSet,
    metric: Metric,
    projected: Vec<Vec<f64>>,
    sources: Vec<usize>,
}

impl<'a> RetrievalIndex<'a> {
    pub fn build(set: &'a EmbeddingSet, metric: Metric, head: Option<&ProjectionHead>) -> Result<Self> {
        let projected = match head {
            Some(h) => set
                .records()
                .iter()
                .map(|r| h.apply(&r.vector))
                .collect::<Result<Vec<_>>>()?,
            None => set.records().iter().map(|r| r.vector.clone()).collect(),
        };
        if metric == Metric::Cosine {
            if let Some((i, _)) = projected
                .iter()
                .enumerate()
                .find(|(_, v)| vector::norm(v) == 0.0)
            {
                return Err(Error::ZeroVector(set.records()[i].id.clone()));
            }
        }
        let sources = set
            .records()
            .iter()
            .enumerate()
            .filter(|(_, r)| r.role == Role::Source)
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            set,
            metric,
            projected,
            sources,
        })
    }

    pub fn set(&self) -> &EmbeddingSet {
        self.set
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// The top `min(k, N)` sources for `query_id`, excluding the query itself.
    pub fn retrieve(&self, query_id: &str, k: usize) -> Result<Ranking> {
        if k == 0 {
            return Err(Error::InvalidParams("k must be positive".into()));
        }
        let qi = self
            .set
            .position(query_id)
            .ok_or_else(|| Error::UnknownQuery(query_id.to_string()))?;
        let q = &self.projected[qi];
        let records = self.set.records();
        let mut entries = self
            .sources
            .iter()
            .filter(|&&si| si != qi)
            .map(|&si| {
                Ok(RankedEntry {
                    id: records[si].id.clone(),
                    score: score(q, &self.projected[si], self.metric)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if entries.is_empty() {
            return Err(Error::NoCandidates(query_id.to_string()));
        }
        entries.sort_by(rank_order);
        let truncated = k > entries.len();
        entries.truncate(k);
        Ok(Ranking {
            query_id: query_id.to_string(),
            entries,
            truncated,
        })
    }
}

pub fn retrieve_topk(
    set: &EmbeddingSet,
    query_id: &str,
    k: usize,
    metric: Metric,
    head: Option<&ProjectionHead>,
) -> Result<Ranking> {
    RetrievalIndex::build(set, metric, head)?.retrieve(query_id, k)
}

/// Dense query × source score table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub query_ids: Vec<String>,
    pub source_ids: Vec<String>,
    /// Row-major, one row per query.
    pub values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn get(&self, q: usize, s: usize) -> f64 {
        self.values[q * self.source_ids.len() + s]
    }
}

/// Scores every query-role record against every source-role record.
/// Rows are computed in parallel; each cell is independent.
pub fn pairwise_scores(
    set: &EmbeddingSet,
    metric: Metric,
    head: Option<&ProjectionHead>,
) -> Result<ScoreMatrix> {
    let project = |v: &[f64]| match head {
        Some(h) => h.apply(v),
        None => Ok(v.to_vec()),
    };
    let queries: Vec<_> = set.queries().collect();
    let sources: Vec<_> = set.sources().collect();
    let src_vecs = sources
        .iter()
        .map(|r| project(&r.vector))
        .collect::<Result<Vec<_>>>()?;
    let rows = queries
        .par_iter()
        .map(|q| {
            let qv = project(&q.vector)?;
            src_vecs
                .iter()
                .map(|s| score(&qv, s, metric))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreMatrix {
        query_ids: queries.iter().map(|r| r.id.clone()).collect(),
        source_ids: sources.iter().map(|r| r.id.clone()).collect(),
        values: rows.into_iter().flatten().collect(),
    })
}
