//! Embedding sets: one feature vector per example plus the identity metadata
//! (category, fold, role, domain) the retrieval and evaluation code needs.
//!
//! On disk a set is JSON Lines, one record per line:
//!
//! ```text
//! {"id":"c0_s0","category":"cat0","split":0,"role":"source","domain":"base","vector":[0.1,0.2]}
//! ```
//!
//! Sets are immutable once built. Normalization returns a new set.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Query,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub category: String,
    #[serde(default)]
    pub split: Option<i64>,
    pub role: Role,
    #[serde(default)]
    pub domain: Option<String>,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    records: Vec<EmbeddingRecord>,
    dimension: usize,
    normalized: bool,
    index: HashMap<String, usize>,
}

impl PartialEq for EmbeddingSet {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
            && self.dimension == other.dimension
            && self.normalized == other.normalized
    }
}

impl EmbeddingSet {
    /// Validates ids and dimensions. The dimension is taken from the first record.
    pub fn from_records(records: Vec<EmbeddingRecord>) -> Result<Self> {
        let first = records.first().ok_or(Error::EmptySet)?;
        let dimension = first.vector.len();
        if dimension == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        let mut index = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            if rec.vector.len() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    found: rec.vector.len(),
                });
            }
            if index.insert(rec.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(rec.id.clone()));
            }
        }
        Ok(Self {
            records,
            dimension,
            normalized: false,
            index,
        })
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn sources(&self) -> impl Iterator<Item = &EmbeddingRecord> {
        self.records.iter().filter(|r| r.role == Role::Source)
    }

    pub fn queries(&self) -> impl Iterator<Item = &EmbeddingRecord> {
        self.records.iter().filter(|r| r.role == Role::Query)
    }

    /// A new set holding the records accepted by `keep`, in their original order.
    pub fn filter(&self, mut keep: impl FnMut(&EmbeddingRecord) -> bool) -> Result<Self> {
        let records = self.records.iter().filter(|r| keep(r)).cloned().collect();
        let mut set = Self::from_records(records)?;
        set.normalized = self.normalized;
        Ok(set)
    }

    /// Scales every vector to unit L2 norm.
    pub fn l2_normalize(&self) -> Result<Self> {
        let records = self
            .records
            .iter()
            .map(|r| {
                let vector =
                    vector::normalized(&r.vector).ok_or_else(|| Error::ZeroVector(r.id.clone()))?;
                Ok(EmbeddingRecord {
                    vector,
                    ..r.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            records,
            dimension: self.dimension,
            normalized: true,
            index: self.index.clone(),
        })
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line_no = n + 1;
            let line = line.map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if rec.vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("non-finite value in vector of {:?}", rec.id),
                });
            }
            records.push(rec);
        }
        Self::from_records(records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file))
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        for rec in &self.records {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }
}
