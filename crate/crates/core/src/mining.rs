//! Positive / negative set mining from a single-example performance matrix.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::PerformanceMatrix;

pub const DEFAULT_TOP: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinedSet {
    pub id: String,
    /// Best first.
    pub positives: Vec<String>,
    /// Worst first.
    pub negatives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastiveSets {
    sets: BTreeMap<String, MinedSet>,
    top: usize,
}

impl ContrastiveSets {
    pub fn new(sets: impl IntoIterator<Item = MinedSet>, top: usize) -> Self {
        Self {
            sets: sets.into_iter().map(|s| (s.id.clone(), s)).collect(),
            top,
        }
    }

    pub fn get(&self, id: &str) -> Option<&MinedSet> {
        self.sets.get(id)
    }

    pub fn top(&self) -> usize {
        self.top
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Sorted by id.
    pub fn iter(&self) -> impl Iterator<Item = &MinedSet> {
        self.sets.values()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        for s in self.iter() {
            serde_json::to_writer(&mut w, s).map_err(|e| io(e.into()))?;
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// `top` is recovered as the longest list in the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut sets = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let parse_err = |message: String| Error::Parse {
                line: n + 1,
                message,
            };
            let line = line.map_err(|e| parse_err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let s: MinedSet = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            sets.push(s);
        }
        let top = sets
            .iter()
            .map(|s| s.positives.len().max(s.negatives.len()))
            .max()
            .unwrap_or(0);
        let n = sets.len();
        let out = Self::new(sets, top);
        if out.len() != n {
            let mut seen = std::collections::HashSet::new();
            let dup = out.iter().find(|s| !seen.insert(&s.id)).map(|s| s.id.clone());
            return Err(Error::DuplicateId(dup.unwrap_or_default()));
        }
        Ok(out)
    }
}

/// Optional restriction of candidates to the row's own category.
#[derive(Debug, Clone, Default)]
pub struct MineOptions<'a> {
    pub categories: Option<&'a HashMap<String, String>>,
}

pub fn mine_sets(matrix: &PerformanceMatrix, top: usize) -> Result<ContrastiveSets> {
    mine_sets_with(matrix, top, &MineOptions::default())
}

/// Per row: candidates sorted best-first (ties by ascending id), self excluded.
/// Positives are the first `top`, negatives the last `top` (worst first). With
/// fewer than `2 * top` candidates the pool is split so that negatives take the
/// worst `floor(n / 2)` and positives the rest, each capped at `top`.
pub fn mine_sets_with(matrix: &PerformanceMatrix, top: usize, options: &MineOptions<'_>) -> Result<ContrastiveSets> {
    if top == 0 {
        return Err(Error::InvalidParams("top must be positive".into()));
    }
    let category_of = |id: &str| -> Result<Option<&String>> {
        match options.categories {
            None => Ok(None),
            Some(map) => map
                .get(id)
                .map(Some)
                .ok_or_else(|| Error::UnknownId(id.to_string())),
        }
    };
    let sign: f32 = if matrix.higher_is_better { 1.0 } else { -1.0 };
    let sets = matrix
        .query_ids
        .par_iter()
        .enumerate()
        .map(|(qi, qid)| {
            let row = matrix.row(qi);
            let qcat = category_of(qid)?;
            let mut cands: Vec<(f32, &str)> = Vec::with_capacity(row.len());
            for (si, sid) in matrix.source_ids.iter().enumerate() {
                if sid == qid {
                    continue;
                }
                if let Some(qc) = qcat {
                    if category_of(sid)? != Some(qc) {
                        continue;
                    }
                }
                cands.push((sign * row[si], sid.as_str()));
            }
            if cands.is_empty() {
                return Err(Error::EmptyRow(qid.clone()));
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
            let n = cands.len();
            let (n_pos, n_neg) = if n >= 2 * top {
                (top, top)
            } else {
                let neg = n / 2;
                ((n - neg).min(top), neg.min(top))
            };
            Ok(MinedSet {
                id: qid.clone(),
                positives: cands[..n_pos].iter().map(|c| c.1.to_string()).collect(),
                negatives: cands[n - n_neg..].iter().rev().map(|c| c.1.to_string()).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ContrastiveSets::new(sets, top))
}
