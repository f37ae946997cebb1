//! Seeded latent-factor benchmark.
//!
//! Each example has a semantic latent (clustered by category) and a style latent
//! (independent per example). The observed embedding is
//! `normalize(concat(sem, alpha * sty))`, so with a small `alpha` off-the-shelf
//! features mostly see semantics while the synthetic oracle rewards both.
//!
//! The semantic perturbation is an isotropic gaussian with per-coordinate
//! standard deviation `cluster_spread / sqrt(d_sem)`, i.e. its expected norm is
//! about `cluster_spread`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding_store::{EmbeddingRecord, EmbeddingSet, Role};
use crate::error::{Error, Result};
use crate::vector;

pub const BASE_DOMAIN: &str = "base";
pub const TARGET_DOMAIN: &str = "target";

// Independent ChaCha streams so that style can be resampled without touching semantics.
const SEM_STREAM: u64 = 0;
const STY_STREAM: u64 = 1;
const TARGET_SEM_STREAM: u64 = 2;
const TARGET_STY_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchParams {
    pub n_categories: usize,
    pub n_source_per_cat: usize,
    pub n_query_per_cat: usize,
    pub d_sem: usize,
    pub d_sty: usize,
    pub alpha: f64,
    pub cluster_spread: f64,
    pub seed: u64,
    /// Seed for the style stream; defaults to `seed`.
    #[serde(default)]
    pub style_seed: Option<u64>,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            n_categories: 5,
            n_source_per_cat: 100,
            n_query_per_cat: 40,
            d_sem: 32,
            d_sty: 32,
            alpha: 0.3,
            cluster_spread: 0.4,
            seed: 0,
            style_seed: None,
        }
    }
}

impl BenchParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_categories", self.n_categories),
            ("n_source_per_cat", self.n_source_per_cat),
            ("n_query_per_cat", self.n_query_per_cat),
            ("d_sem", self.d_sem),
            ("d_sty", self.d_sty),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidParams(format!("{name} must be positive")));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParams("alpha must lie in [0, 1]".into()));
        }
        if !(self.cluster_spread.is_finite() && self.cluster_spread >= 0.0) {
            return Err(Error::InvalidParams("cluster_spread must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub id: String,
    pub sem: Vec<f64>,
    pub sty: Vec<f64>,
    pub category: String,
    pub domain: String,
}

#[derive(Debug, Clone, Default)]
pub struct LatentStore {
    latents: Vec<Latent>,
    index: HashMap<String, usize>,
    category_means: BTreeMap<String, Vec<f64>>,
}

impl LatentStore {
    fn from_parts(latents: Vec<Latent>, category_means: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let mut index = HashMap::with_capacity(latents.len());
        for (i, l) in latents.iter().enumerate() {
            if index.insert(l.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(l.id.clone()));
            }
        }
        Ok(Self {
            latents,
            index,
            category_means,
        })
    }

    pub fn get(&self, id: &str) -> Option<&Latent> {
        self.index.get(id).map(|&i| &self.latents[i])
    }

    pub fn require(&self, id: &str) -> Result<&Latent> {
        self.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn latents(&self) -> &[Latent] {
        &self.latents
    }

    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    /// Unit-norm semantic cluster centres keyed by category.
    pub fn category_means(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.category_means
    }

    /// Merges two stores (e.g. base and target) for an oracle that spans both.
    pub fn merged(&self, other: &LatentStore) -> Result<Self> {
        let latents = self.latents.iter().chain(&other.latents).cloned().collect();
        let mut means = self.category_means.clone();
        for (k, v) in &other.category_means {
            means.entry(k.clone()).or_insert_with(|| v.clone());
        }
        Self::from_parts(latents, means)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        for l in &self.latents {
            serde_json::to_writer(&mut w, l).map_err(|e| io(e.into()))?;
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Category means are not stored in the sidecar; they are recovered as
    /// normalized per-category centroids of `sem`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut latents = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let parse_err = |message: String| Error::Parse {
                line: n + 1,
                message,
            };
            let line = line.map_err(|e| parse_err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let l: Latent = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            latents.push(l);
        }
        let mut sums: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for l in &latents {
            let acc = sums
                .entry(l.category.clone())
                .or_insert_with(|| vec![0.0; l.sem.len()]);
            if acc.len() != l.sem.len() {
                return Err(Error::DimensionMismatch {
                    expected: acc.len(),
                    found: l.sem.len(),
                });
            }
            for (a, x) in acc.iter_mut().zip(&l.sem) {
                *a += x;
            }
        }
        let means = sums
            .into_iter()
            .filter_map(|(k, v)| vector::normalized(&v).map(|m| (k, m)))
            .collect();
        Self::from_parts(latents, means)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit_gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        if let Some(v) = vector::normalized(&gaussian(rng, dim)) {
            return v;
        }
    }
}

fn perturbed(rng: &mut impl Rng, mean: &[f64], spread: f64) -> Vec<f64> {
    let scale = spread / (mean.len() as f64).sqrt();
    loop {
        let v: Vec<f64> = mean
            .iter()
            .map(|m| m + scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        if let Some(v) = vector::normalized(&v) {
            return v;
        }
    }
}

fn observed(sem: &[f64], sty: &[f64], alpha: f64) -> Vec<f64> {
    let raw: Vec<f64> = sem
        .iter()
        .copied()
        .chain(sty.iter().map(|s| alpha * s))
        .collect();
    vector::normalized(&raw).expect("semantic part is unit-norm")
}

struct Layout<'a> {
    params: &'a BenchParams,
    id_prefix: &'a str,
    domain: &'a str,
}

fn build(
    layout: Layout<'_>,
    means: &BTreeMap<String, Vec<f64>>,
    sem_rng: &mut ChaCha8Rng,
    sty_rng: &mut ChaCha8Rng,
    style_offset: Option<&[f64]>,
) -> Result<(EmbeddingSet, LatentStore)> {
    let p = layout.params;
    let mut records = Vec::new();
    let mut latents = Vec::new();
    for (c, (category, mean)) in means.iter().enumerate() {
        let per_cat = p.n_source_per_cat + p.n_query_per_cat;
        for i in 0..per_cat {
            let (role, tag, j) = if i < p.n_source_per_cat {
                (Role::Source, 's', i)
            } else {
                (Role::Query, 'q', i - p.n_source_per_cat)
            };
            let id = format!("{}c{c}_{tag}{j:03}", layout.id_prefix);
            let sem = perturbed(sem_rng, mean, p.cluster_spread);
            let sty = match style_offset {
                None => unit_gaussian(sty_rng, p.d_sty),
                Some(off) => loop {
                    let u = unit_gaussian(sty_rng, p.d_sty);
                    let shifted: Vec<f64> = u.iter().zip(off).map(|(a, b)| a + b).collect();
                    if let Some(v) = vector::normalized(&shifted) {
                        break v;
                    }
                },
            };
            records.push(EmbeddingRecord {
                id: id.clone(),
                category: category.clone(),
                split: Some(0),
                role,
                domain: Some(layout.domain.to_string()),
                vector: observed(&sem, &sty, p.alpha),
            });
            latents.push(Latent {
                id,
                sem,
                sty,
                category: category.clone(),
                domain: layout.domain.to_string(),
            });
        }
    }
    let set = EmbeddingSet::from_records(records)?.l2_normalize()?;
    let store = LatentStore::from_parts(latents, means.clone())?;
    Ok((set, store))
}

/// Generates the in-domain benchmark. Deterministic given `params`.
pub fn generate(params: &BenchParams) -> Result<(EmbeddingSet, LatentStore)> {
    params.validate()?;
    let mut sem_rng = stream_rng(params.seed, SEM_STREAM);
    let mut sty_rng = stream_rng(params.style_seed.unwrap_or(params.seed), STY_STREAM);
    let width = params.n_categories.to_string().len();
    let means: BTreeMap<String, Vec<f64>> = (0..params.n_categories)
        .map(|c| {
            (
                format!("cat{c:0width$}"),
                unit_gaussian(&mut sem_rng, params.d_sem),
            )
        })
        .collect();
    build(
        Layout {
            params,
            id_prefix: "",
            domain: BASE_DOMAIN,
        },
        &means,
        &mut sem_rng,
        &mut sty_rng,
        None,
    )
}

/// Generates a target-domain benchmark over `base`'s categories and semantic
/// means, with style latents drawn around a random offset of norm `shift_scale`.
pub fn generate_shifted(
    params: &BenchParams,
    base: &LatentStore,
    shift_scale: f64,
) -> Result<(EmbeddingSet, LatentStore)> {
    params.validate()?;
    if !(shift_scale.is_finite() && shift_scale >= 0.0) {
        return Err(Error::InvalidParams("shift_scale must be finite and >= 0".into()));
    }
    let means = base.category_means();
    if means.is_empty() {
        return Err(Error::InvalidParams("base store has no categories".into()));
    }
    if let Some(m) = means.values().find(|m| m.len() != params.d_sem) {
        return Err(Error::DimensionMismatch {
            expected: params.d_sem,
            found: m.len(),
        });
    }
    let mut sem_rng = stream_rng(params.seed, TARGET_SEM_STREAM);
    let mut sty_rng = stream_rng(params.style_seed.unwrap_or(params.seed), TARGET_STY_STREAM);
    let offset: Vec<f64> = unit_gaussian(&mut sty_rng, params.d_sty)
        .into_iter()
        .map(|x| x * shift_scale)
        .collect();
    build(
        Layout {
            params,
            id_prefix: "t",
            domain: TARGET_DOMAIN,
        },
        means,
        &mut sem_rng,
        &mut sty_rng,
        Some(&offset),
    )
}
