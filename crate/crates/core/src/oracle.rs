//! In-context performance oracles.
//!
//! An [`Oracle`] maps a prompt (ordered source examples) and a query to a scalar
//! performance. [`SyntheticOracle`] simulates it from latent factors;
//! [`MatrixOracle`] replays single-example results dumped by a real model.
//!
//! Synthetic model, per example `k` at position `pos_k` of a `K`-example prompt:
//!
//! ```text
//! q_k   = clamp(beta_sem * cos(sem_q, sem_k) + beta_style * cos(sty_q, sty_k) + eps_k, 0, 1)
//! eta_k = eta * (1 - order_delta * pos_k / K)
//! perf  = 1 - prod_k (1 - eta_k * q_k)
//! ```
//!
//! `eps_k ~ N(0, noise_sigma)` is keyed by `(seed, query_id, example_id)`, so results
//! do not depend on evaluation order.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding_store::{EmbeddingSet, Role};
use crate::error::{Error, Result};
use crate::synthetic_bench::{Latent, LatentStore};
use crate::vector;

pub const MATRIX_MAGIC: &[u8; 8] = b"ICLPERF1";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prompt {
    example_ids: Vec<String>,
    query_id: String,
}

impl Prompt {
    pub fn new(example_ids: Vec<String>, query_id: impl Into<String>) -> Result<Self> {
        let query_id = query_id.into();
        if example_ids.is_empty() {
            return Err(Error::InvalidPrompt("a prompt needs at least one example".into()));
        }
        let mut seen = HashSet::with_capacity(example_ids.len());
        for id in &example_ids {
            if *id == query_id {
                return Err(Error::InvalidPrompt(format!("query {id:?} used as its own example")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidPrompt(format!("duplicate example {id:?}")));
            }
        }
        Ok(Self {
            example_ids,
            query_id,
        })
    }

    pub fn example_ids(&self) -> &[String] {
        &self.example_ids
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn k(&self) -> usize {
        self.example_ids.len()
    }

    /// Same examples in a different order. `order` must be a permutation of `0..k`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        Self::new(
            order.iter().map(|&i| self.example_ids[i].clone()).collect(),
            self.query_id.clone(),
        )
    }
}

pub trait Oracle: Sync {
    fn performance(&self, prompt: &Prompt) -> Result<f64>;

    fn higher_is_better(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOracleParams {
    pub beta_sem: f64,
    pub beta_style: f64,
    pub eta: f64,
    pub order_delta: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticOracleParams {
    fn default() -> Self {
        Self {
            beta_sem: 0.5,
            beta_style: 0.5,
            eta: 0.8,
            order_delta: 0.02,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticOracleParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if !(self.beta_sem >= 0.0 && self.beta_style >= 0.0) {
            return bad("oracle weights must be >= 0");
        }
        if (self.beta_sem + self.beta_style - 1.0).abs() > 1e-12 {
            return bad("beta_sem + beta_style must equal 1");
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad("eta must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.order_delta) {
            return bad("order_delta must lie in [0, 1)");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be finite and >= 0");
        }
        Ok(())
    }
}

/// Upper bound on the population standard deviation of performance across
/// orderings of a fixed `k`-example prompt.
///
/// Moving an example changes its efficacy by at most `eta * order_delta * (k-1)/k`,
/// and a product of factors in `[0, 1]` moves by at most the sum of the factor
/// changes, so the range over orderings is at most `eta * order_delta * (k-1)`.
/// A population std never exceeds half the range.
pub fn permutation_std_bound(eta: f64, order_delta: f64, k: usize) -> f64 {
    eta * order_delta * k.saturating_sub(1) as f64 / 2.0
}

/// FNV-1a over the key parts, with a separator byte between them.
fn key_hash(seed: u64, a: &str, b: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0100_0000_01b3;
    let mut h = OFFSET;
    for byte in seed
        .to_le_bytes()
        .iter()
        .chain(a.as_bytes())
        .chain(&[0xff])
        .chain(b.as_bytes())
    {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Deterministic RNG keyed by `(seed, a, b)`.
pub(crate) fn keyed_rng(seed: u64, a: &str, b: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key_hash(seed, a, b))
}

pub struct SyntheticOracle<'a> {
    latents: &'a LatentStore,
    params: SyntheticOracleParams,
}

impl<'a> SyntheticOracle<'a> {
    pub fn new(latents: &'a LatentStore, params: SyntheticOracleParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { latents, params })
    }

    pub fn params(&self) -> &SyntheticOracleParams {
        &self.params
    }

    /// Single-example quality `q` in `[0, 1]`.
    pub fn quality(&self, query: &Latent, example: &Latent) -> f64 {
        let p = &self.params;
        let cos = |a: &[f64], b: &[f64]| vector::cosine(a, b).unwrap_or(0.0);
        let noise = if p.noise_sigma > 0.0 {
            let z: f64 = keyed_rng(p.seed, &query.id, &example.id).sample(StandardNormal);
            p.noise_sigma * z
        } else {
            0.0
        };
        let raw = p.beta_sem * cos(&query.sem, &example.sem)
            + p.beta_style * cos(&query.sty, &example.sty)
            + noise;
        raw.clamp(0.0, 1.0)
    }

    fn aggregate(&self, query: &Latent, examples: &[&Latent]) -> f64 {
        let k = examples.len() as f64;
        let mut factors: Vec<f64> = examples
            .iter()
            .enumerate()
            .map(|(pos, ex)| {
                let efficacy = self.params.eta * (1.0 - self.params.order_delta * pos as f64 / k);
                1.0 - efficacy * self.quality(query, ex)
            })
            .collect();
        // canonical multiplication order: permutations of equal factors give
        // bit-identical products
        factors.sort_by(f64::total_cmp);
        let miss: f64 = factors.iter().product();
        (1.0 - miss).clamp(0.0, 1.0)
    }
}

impl Oracle for SyntheticOracle<'_> {
    fn performance(&self, prompt: &Prompt) -> Result<f64> {
        let query = self.latents.require(prompt.query_id())?;
        let examples = prompt
            .example_ids()
            .iter()
            .map(|id| self.latents.require(id))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.aggregate(query, &examples))
    }
}

pub fn synthetic_perf(prompt: &Prompt, latents: &LatentStore, params: &SyntheticOracleParams) -> Result<f64> {
    SyntheticOracle::new(latents, params.clone())?.performance(prompt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceMatrix {
    pub query_ids: Vec<String>,
    pub source_ids: Vec<String>,
    /// Row-major, one row per query. Stored at the on-disk precision.
    pub values: Vec<f32>,
    pub metric_name: String,
    pub higher_is_better: bool,
    pub subsample_cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    queries: Vec<String>,
    sources: Vec<String>,
    metric: String,
    higher_is_better: bool,
    subsample_cap: Option<usize>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl PerformanceMatrix {
    pub fn n_queries(&self) -> usize {
        self.query_ids.len()
    }

    pub fn n_sources(&self) -> usize {
        self.source_ids.len()
    }

    pub fn row(&self, q: usize) -> &[f32] {
        let n = self.n_sources();
        &self.values[q * n..(q + 1) * n]
    }

    pub fn get(&self, q: usize, s: usize) -> f32 {
        self.values[q * self.n_sources() + s]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(16 + 4 * self.values.len());
        buf.extend_from_slice(MATRIX_MAGIC);
        buf.extend_from_slice(&(self.n_queries() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.n_sources() as u32).to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))?;
        let sidecar = Sidecar {
            queries: self.query_ids.clone(),
            sources: self.source_ids.clone(),
            metric: self.metric_name.clone(),
            higher_is_better: self.higher_is_better,
            subsample_cap: self.subsample_cap,
        };
        let side = sidecar_path(path);
        let text = serde_json::to_string(&sidecar).expect("sidecar serializes") + "\n";
        fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[..8] != MATRIX_MAGIC {
            return Err(Error::BadMagic);
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (nq, ns) = (u32_at(8), u32_at(12));
        let expected = nq
            .checked_mul(ns)
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| Error::ShapeMismatch("header dimensions overflow".into()))?;
        let payload = &bytes[16..];
        if payload.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "header says {nq}x{ns} ({expected} bytes), payload has {} bytes",
                payload.len()
            )));
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("payload holds non-finite values".into()));
        }
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        if sidecar.queries.len() != nq || sidecar.sources.len() != ns {
            return Err(Error::SidecarMismatch(format!(
                "sidecar lists {} queries x {} sources, header says {nq}x{ns}",
                sidecar.queries.len(),
                sidecar.sources.len()
            )));
        }
        Ok(Self {
            query_ids: sidecar.queries,
            source_ids: sidecar.sources,
            values,
            metric_name: sidecar.metric,
            higher_is_better: sidecar.higher_is_better,
            subsample_cap: sidecar.subsample_cap,
        })
    }
}

pub fn load_performance_matrix(path: impl AsRef<Path>) -> Result<PerformanceMatrix> {
    PerformanceMatrix::load(path)
}

pub fn save_performance_matrix(m: &PerformanceMatrix, path: impl AsRef<Path>) -> Result<()> {
    m.save(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixOptions {
    /// Which records become rows. Mining wants `Source` (training examples as queries).
    pub rows: Role,
    /// Evaluate only a seeded subset of this many source columns.
    pub subsample_cap: Option<usize>,
}

impl Default for MatrixOptions {
    fn default() -> Self {
        Self {
            rows: Role::Query,
            subsample_cap: None,
        }
    }
}

/// Caches single-example performance for every (row, source) pair. The
/// self-pair cell (row id equal to a column id) is filled but never mined.
pub fn build_performance_matrix(
    set: &EmbeddingSet,
    latents: &LatentStore,
    params: &SyntheticOracleParams,
    options: &MatrixOptions,
) -> Result<PerformanceMatrix> {
    let oracle = SyntheticOracle::new(latents, params.clone())?;
    let rows: Vec<&Latent> = set
        .records()
        .iter()
        .filter(|r| r.role == options.rows)
        .map(|r| latents.require(&r.id))
        .collect::<Result<_>>()?;
    let mut cols: Vec<&Latent> = set
        .sources()
        .map(|r| latents.require(&r.id))
        .collect::<Result<_>>()?;
    if let Some(cap) = options.subsample_cap {
        if cap == 0 {
            return Err(Error::InvalidParams("subsample cap must be positive".into()));
        }
        if cap < cols.len() {
            let mut rng = keyed_rng(params.seed, "subsample", "columns");
            let mut keep = index::sample(&mut rng, cols.len(), cap).into_vec();
            keep.sort_unstable();
            cols = keep.into_iter().map(|i| cols[i]).collect();
        }
    }
    let values: Vec<f32> = rows
        .par_iter()
        .flat_map_iter(|q| {
            let oracle = &oracle;
            cols.iter().map(move |s| oracle.aggregate(q, &[s]) as f32)
        })
        .collect();
    Ok(PerformanceMatrix {
        query_ids: rows.iter().map(|l| l.id.clone()).collect(),
        source_ids: cols.iter().map(|l| l.id.clone()).collect(),
        values,
        metric_name: "synthetic".into(),
        higher_is_better: true,
        subsample_cap: options.subsample_cap,
    })
}

/// Replays a performance matrix dumped offline by a real model. Only
/// single-example prompts can be answered.
pub struct MatrixOracle<'a> {
    matrix: &'a PerformanceMatrix,
    rows: std::collections::HashMap<&'a str, usize>,
    cols: std::collections::HashMap<&'a str, usize>,
}

impl<'a> MatrixOracle<'a> {
    pub fn new(matrix: &'a PerformanceMatrix) -> Self {
        let index = |ids: &'a [String]| ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        Self {
            matrix,
            rows: index(&matrix.query_ids),
            cols: index(&matrix.source_ids),
        }
    }
}

impl Oracle for MatrixOracle<'_> {
    fn performance(&self, prompt: &Prompt) -> Result<f64> {
        if prompt.k() != 1 {
            return Err(Error::InvalidPrompt(format!(
                "a performance matrix only answers single-example prompts, got k={}",
                prompt.k()
            )));
        }
        let q = *self
            .rows
            .get(prompt.query_id())
            .ok_or_else(|| Error::UnknownId(prompt.query_id().to_string()))?;
        let ex = &prompt.example_ids()[0];
        let s = *self
            .cols
            .get(ex.as_str())
            .ok_or_else(|| Error::UnknownId(ex.clone()))?;
        Ok(f64::from(self.matrix.get(q, s)))
    }

    fn higher_is_better(&self) -> bool {
        self.matrix.higher_is_better
    }
}
