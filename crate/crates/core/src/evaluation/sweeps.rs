//! Experiment protocols over the synthetic oracle: retrieval-set size, number
//! of examples, example order, distance metric and distribution shift.

use std::collections::{BTreeMap, HashSet};

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mean_std, run_labelled, sorted_queries, ExperimentReport, MethodKind, ReportRow, SelectionMethod, Selector};
use crate::embedding_store::{EmbeddingSet, Role};
use crate::error::{Error, Result};
use crate::mining::{mine_sets, DEFAULT_TOP};
use crate::oracle::{build_performance_matrix, keyed_rng, MatrixOptions, Oracle, SyntheticOracle, SyntheticOracleParams};
use crate::similarity::Metric;
use crate::synthetic_bench::LatentStore;
use crate::trainer::{train, ProjectionHead, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub oracle: SyntheticOracleParams,
    pub train: TrainConfig,
    pub mine_top: usize,
    pub metric: Metric,
    pub within_class: bool,
    pub k: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            oracle: SyntheticOracleParams::default(),
            train: TrainConfig::default(),
            mine_top: DEFAULT_TOP,
            metric: Metric::Cosine,
            within_class: true,
            k: 1,
            trials: 10,
            seed: 0,
        }
    }
}

/// Performance matrix over the training sources, mining, then head training.
pub fn train_sup_head(set: &EmbeddingSet, latents: &LatentStore, cfg: &PipelineConfig) -> Result<ProjectionHead> {
    let matrix = build_performance_matrix(
        set,
        latents,
        &cfg.oracle,
        &MatrixOptions {
            rows: Role::Source,
            subsample_cap: None,
        },
    )?;
    let sets = mine_sets(&matrix, cfg.mine_top)?;
    Ok(train(set, &sets, &cfg.train)?.0)
}

fn methods(kinds: &[MethodKind], head: Option<&ProjectionHead>, metric: Metric, within_class: bool) -> Vec<SelectionMethod> {
    kinds
        .iter()
        .map(|kind| match kind {
            MethodKind::Random => SelectionMethod::Random { within_class },
            MethodKind::Unsup => SelectionMethod::Unsup { metric },
            MethodKind::Sup => SelectionMethod::Sup {
                metric,
                head: head.expect("head trained when sup requested").clone(),
            },
        })
        .collect()
}

fn maybe_train(kinds: &[MethodKind], set: &EmbeddingSet, latents: &LatentStore, cfg: &PipelineConfig) -> Result<Option<ProjectionHead>> {
    if kinds.contains(&MethodKind::Sup) {
        train_sup_head(set, latents, cfg).map(Some)
    } else {
        Ok(None)
    }
}

/// Restricts the retrieval set to a seeded subset of `ceil(f * N)` sources per
/// fraction. The supervised head is re-mined and retrained on each subset.
pub fn sweep_size(
    fractions: &[f64],
    set: &EmbeddingSet,
    latents: &LatentStore,
    kinds: &[MethodKind],
    cfg: &PipelineConfig,
) -> Result<ExperimentReport> {
    let sources: Vec<&str> = set.sources().map(|r| r.id.as_str()).collect();
    let mut report = ExperimentReport::default();
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidParams(format!("fraction {f} outside (0, 1]")));
        }
        let label = f.to_string();
        // guard against 0.3 * 500 = 150.00000000000003
        let n = ((f * sources.len() as f64 - 1e-9).ceil() as usize).clamp(1, sources.len());
        let mut rng = keyed_rng(cfg.seed, "size", &label);
        let keep: HashSet<&str> = index::sample(&mut rng, sources.len(), n)
            .into_iter()
            .map(|i| sources[i])
            .collect();
        let subset = set.filter(|r| r.role == Role::Query || keep.contains(r.id.as_str()))?;
        let head = maybe_train(kinds, &subset, latents, cfg)?;
        let oracle = SyntheticOracle::new(latents, cfg.oracle.clone())?;
        let ms = methods(kinds, head.as_ref(), cfg.metric, cfg.within_class);
        report.extend(run_labelled(&ms, &subset, &oracle, cfg.k, cfg.trials, cfg.seed, "size", &label)?);
    }
    Ok(report)
}

/// Evaluates every method for each prompt length. Retrieval prompts are
/// top-K prefixes and random prompts prefixes of one seeded shuffle, so
/// prompts are nested in K.
pub fn sweep_k(
    k_values: &[usize],
    set: &EmbeddingSet,
    latents: &LatentStore,
    kinds: &[MethodKind],
    cfg: &PipelineConfig,
) -> Result<ExperimentReport> {
    let head = maybe_train(kinds, set, latents, cfg)?;
    let oracle = SyntheticOracle::new(latents, cfg.oracle.clone())?;
    let ms = methods(kinds, head.as_ref(), cfg.metric, cfg.within_class);
    let mut report = ExperimentReport::default();
    for &k in k_values {
        report.extend(run_labelled(&ms, set, &oracle, k, cfg.trials, cfg.seed, "k", &k.to_string())?);
    }
    Ok(report)
}

/// Evaluates UnsupPR (and any other requested family) under each metric.
/// The supervised head is trained once.
pub fn sweep_metric(
    metrics: &[Metric],
    set: &EmbeddingSet,
    latents: &LatentStore,
    kinds: &[MethodKind],
    cfg: &PipelineConfig,
) -> Result<ExperimentReport> {
    let head = maybe_train(kinds, set, latents, cfg)?;
    let oracle = SyntheticOracle::new(latents, cfg.oracle.clone())?;
    let mut report = ExperimentReport::default();
    for &metric in metrics {
        let ms = methods(kinds, head.as_ref(), metric, cfg.within_class);
        report.extend(run_labelled(&ms, set, &oracle, cfg.k, cfg.trials, cfg.seed, "metric", metric.as_str())?);
    }
    Ok(report)
}

/// All orderings of `0..n` in lexicographic order.
pub(crate) fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Per query (sorted by id): split, mean and population std of performance over
/// every ordering of the method's `k`-example prompt.
pub fn order_spreads(
    method: &SelectionMethod,
    set: &EmbeddingSet,
    oracle: &dyn Oracle,
    k: usize,
    seed: u64,
) -> Result<Vec<(Option<i64>, f64, f64)>> {
    let selector = Selector::new(method, set)?;
    let perms = permutations(k);
    sorted_queries(set)
        .par_iter()
        .map(|q| {
            let prompt = selector.select(&q.id, k, seed)?;
            if prompt.k() != k {
                return Err(Error::NoCandidates(format!("{} has fewer than {k} candidates", q.id)));
            }
            let perf = perms
                .iter()
                .map(|p| oracle.performance(&prompt.permuted(p)?))
                .collect::<Result<Vec<_>>>()?;
            let (mean, std) = mean_std(&perf);
            Ok((q.split, mean, std))
        })
        .collect()
}

/// Fixed `k`-example prompt per method and query, evaluated under all `k!`
/// orderings. `mean_perf` averages over queries and orderings; `std_perf` is the
/// mean over queries of the per-query std across orderings.
pub fn sweep_order(
    k: usize,
    set: &EmbeddingSet,
    latents: &LatentStore,
    kinds: &[MethodKind],
    cfg: &PipelineConfig,
) -> Result<ExperimentReport> {
    let head = maybe_train(kinds, set, latents, cfg)?;
    let oracle = SyntheticOracle::new(latents, cfg.oracle.clone())?;
    let mut report = ExperimentReport::default();
    let domain = {
        let mut d: Vec<&str> = set.queries().map(|r| r.domain.as_deref().unwrap_or("")).collect();
        d.sort_unstable();
        d.dedup();
        if d.len() == 1 { d[0].to_string() } else { "mixed".to_string() }
    };
    for method in methods(kinds, head.as_ref(), cfg.metric, cfg.within_class) {
        let spreads = order_spreads(&method, set, &oracle, k, cfg.seed)?;
        let mut by_split: BTreeMap<Option<i64>, Vec<(f64, f64)>> = BTreeMap::new();
        for (split, m, s) in spreads {
            by_split.entry(split).or_default().push((m, s));
        }
        for (split, vals) in by_split {
            let n = vals.len() as f64;
            report.rows.push(ReportRow {
                method: method.label().to_string(),
                sweep_axis: "order".into(),
                sweep_value: k.to_string(),
                domain: domain.clone(),
                split: split.map(|s| s.to_string()).unwrap_or_default(),
                mean_perf: vals.iter().map(|v| v.0).sum::<f64>() / n,
                std_perf: Some(vals.iter().map(|v| v.1).sum::<f64>() / n),
                n_queries: vals.len(),
                seed: cfg.seed,
            });
        }
    }
    Ok(report)
}

/// Trains on the source bench, evaluates target queries against target sources.
pub fn eval_shift(
    source: (&EmbeddingSet, &LatentStore),
    target: (&EmbeddingSet, &LatentStore),
    kinds: &[MethodKind],
    cfg: &PipelineConfig,
    label: &str,
) -> Result<ExperimentReport> {
    let head = maybe_train(kinds, source.0, source.1, cfg)?;
    let oracle = SyntheticOracle::new(target.1, cfg.oracle.clone())?;
    let ms = methods(kinds, head.as_ref(), cfg.metric, cfg.within_class);
    run_labelled(&ms, target.0, &oracle, cfg.k, cfg.trials, cfg.seed, "shift", label)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutations_of_three() {
        let p = permutations(3);
        assert_eq!(p.len(), 6);
        assert_eq!(p[0], [0, 1, 2]);
        assert_eq!(p[5], [2, 1, 0]);
        let uniq: HashSet<_> = p.iter().collect();
        assert_eq!(uniq.len(), 6);
    }
}
