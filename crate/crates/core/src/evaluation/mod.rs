//! Prompt selection methods, experiment runs and CSV reports.

mod metrics;
mod report;
mod sweeps;

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{miou, mse, Grid};
pub use report::{ExperimentReport, ReportRow, REPORT_HEADER};
pub use sweeps::{
    eval_shift, order_spreads, sweep_k, sweep_metric, sweep_order, sweep_size, train_sup_head, PipelineConfig,
};

use crate::embedding_store::EmbeddingSet;
use crate::error::{Error, Result};
use crate::oracle::{keyed_rng, Oracle, Prompt};
use crate::similarity::{Metric, RetrievalIndex};
use crate::trainer::ProjectionHead;

#[derive(Debug, Clone, PartialEq)]
pub enum SelectionMethod {
    Random { within_class: bool },
    Unsup { metric: Metric },
    Sup { metric: Metric, head: ProjectionHead },
}

impl SelectionMethod {
    pub fn label(&self) -> &'static str {
        match self {
            SelectionMethod::Random { within_class: true } => "random",
            SelectionMethod::Random { within_class: false } => "random-any",
            SelectionMethod::Unsup { .. } => "unsup",
            SelectionMethod::Sup { .. } => "sup",
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, SelectionMethod::Random { .. })
    }
}

/// Method families, for pipelines that build the concrete method themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Random,
    Unsup,
    Sup,
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MethodKind::Random => "random",
            MethodKind::Unsup => "unsup",
            MethodKind::Sup => "sup",
        })
    }
}

/// Per-trial seed for repeated random draws.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_add((trial as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Prompt selector with retrieval indices built once.
pub struct Selector<'a> {
    set: &'a EmbeddingSet,
    method: &'a SelectionMethod,
    index: Option<RetrievalIndex<'a>>,
}

impl<'a> Selector<'a> {
    pub fn new(method: &'a SelectionMethod, set: &'a EmbeddingSet) -> Result<Self> {
        let index = match method {
            SelectionMethod::Random { .. } => None,
            SelectionMethod::Unsup { metric } => Some(RetrievalIndex::build(set, *metric, None)?),
            SelectionMethod::Sup { metric, head } => Some(RetrievalIndex::build(set, *metric, Some(head))?),
        };
        Ok(Self { set, method, index })
    }

    /// Random draws are a seeded shuffle truncated to `k`, so prompts for
    /// increasing `k` are nested.
    pub fn select(&self, query_id: &str, k: usize, seed: u64) -> Result<Prompt> {
        if k == 0 {
            return Err(Error::InvalidParams("k must be positive".into()));
        }
        let ids: Vec<String> = match (&self.index, self.method) {
            (Some(index), _) => index.retrieve(query_id, k)?.entries.into_iter().map(|e| e.id).collect(),
            (None, SelectionMethod::Random { within_class }) => {
                let query = self
                    .set
                    .get(query_id)
                    .ok_or_else(|| Error::UnknownQuery(query_id.to_string()))?;
                let mut pool: Vec<&str> = self
                    .set
                    .sources()
                    .filter(|r| r.id != query.id && (!within_class || r.category == query.category))
                    .map(|r| r.id.as_str())
                    .collect();
                if pool.is_empty() {
                    return Err(Error::NoCandidates(query_id.to_string()));
                }
                pool.shuffle(&mut keyed_rng(seed, query_id, "random"));
                pool.truncate(k);
                pool.into_iter().map(str::to_string).collect()
            }
            (None, _) => unreachable!("retrieval methods always carry an index"),
        };
        Prompt::new(ids, query_id)
    }
}

pub fn select_prompt(method: &SelectionMethod, set: &EmbeddingSet, query_id: &str, k: usize, seed: u64) -> Result<Prompt> {
    Selector::new(method, set)?.select(query_id, k, seed)
}

/// Per-query outcome of one method: one performance per trial.
pub(crate) struct QueryResult<'s> {
    pub split: Option<i64>,
    pub domain: Option<&'s str>,
    pub perf: Vec<f64>,
}

/// Query-role records of `set` sorted by id.
pub(crate) fn sorted_queries(set: &EmbeddingSet) -> Vec<&crate::embedding_store::EmbeddingRecord> {
    let mut qs: Vec<_> = set.queries().collect();
    qs.sort_by(|a, b| a.id.cmp(&b.id));
    qs
}

pub(crate) fn evaluate_method<'s>(
    method: &SelectionMethod,
    set: &'s EmbeddingSet,
    oracle: &dyn Oracle,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<QueryResult<'s>>> {
    let selector = Selector::new(method, set)?;
    let trials = if method.is_random() { trials.max(1) } else { 1 };
    sorted_queries(set)
        .par_iter()
        .map(|q| {
            let perf = (0..trials)
                .map(|t| oracle.performance(&selector.select(&q.id, k, trial_seed(seed, t))?))
                .collect::<Result<Vec<_>>>()?;
            Ok(QueryResult {
                split: q.split,
                domain: q.domain.as_deref(),
                perf,
            })
        })
        .collect()
}

/// Population mean and standard deviation (Welford). Identical inputs give exactly zero.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in values.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    (mean, (m2 / values.len() as f64).max(0.0).sqrt())
}

pub(crate) struct RowContext<'a> {
    pub method: &'a str,
    pub axis: &'a str,
    pub value: &'a str,
    pub seed: u64,
}

/// One row per split (sorted), plus an `avg` row over split means when there
/// is more than one split. `std_perf` is the spread of per-trial means and is
/// only reported when several trials were run.
pub(crate) fn aggregate(results: &[QueryResult<'_>], ctx: &RowContext<'_>) -> Vec<ReportRow> {
    let mut by_split: BTreeMap<Option<i64>, Vec<&QueryResult<'_>>> = BTreeMap::new();
    for r in results {
        by_split.entry(r.split).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (split, rs) in &by_split {
        let trials = rs[0].perf.len();
        let trial_means: Vec<f64> = (0..trials)
            .map(|t| rs.iter().map(|r| r.perf[t]).sum::<f64>() / rs.len() as f64)
            .collect();
        let (mean, std) = mean_std(&trial_means);
        let mut domains: Vec<&str> = rs.iter().map(|r| r.domain.unwrap_or("")).collect();
        domains.dedup();
        let domain = if domains.iter().all(|d| *d == domains[0]) { domains[0] } else { "mixed" };
        rows.push(ReportRow {
            method: ctx.method.to_string(),
            sweep_axis: ctx.axis.to_string(),
            sweep_value: ctx.value.to_string(),
            domain: domain.to_string(),
            split: split.map(|s| s.to_string()).unwrap_or_default(),
            mean_perf: mean,
            std_perf: (trials > 1).then_some(std),
            n_queries: rs.len(),
            seed: ctx.seed,
        });
    }
    if rows.len() > 1 {
        let n = rows.len() as f64;
        let mean = rows.iter().map(|r| r.mean_perf).sum::<f64>() / n;
        let std = rows
            .iter()
            .map(|r| r.std_perf)
            .collect::<Option<Vec<_>>>()
            .map(|s| s.iter().sum::<f64>() / n);
        let domain = if rows.iter().all(|r| r.domain == rows[0].domain) { rows[0].domain.clone() } else { "mixed".into() };
        rows.push(ReportRow {
            method: ctx.method.to_string(),
            sweep_axis: ctx.axis.to_string(),
            sweep_value: ctx.value.to_string(),
            domain,
            split: "avg".into(),
            mean_perf: mean,
            std_perf: std,
            n_queries: results.len(),
            seed: ctx.seed,
        });
    }
    rows
}

/// Evaluates each method on every query of `set` against `set`'s sources.
pub fn run_experiment(
    methods: &[SelectionMethod],
    set: &EmbeddingSet,
    oracle: &dyn Oracle,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    run_labelled(methods, set, oracle, k, trials, seed, "none", "")
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn run_labelled(
    methods: &[SelectionMethod],
    set: &EmbeddingSet,
    oracle: &dyn Oracle,
    k: usize,
    trials: usize,
    seed: u64,
    axis: &str,
    value: &str,
) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::default();
    for method in methods {
        let results = evaluate_method(method, set, oracle, k, trials, seed)?;
        report.rows.extend(aggregate(
            &results,
            &RowContext {
                method: method.label(),
                axis,
                value,
                seed,
            },
        ));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding_store::{EmbeddingRecord, Role};
    use crate::oracle::{SyntheticOracle, SyntheticOracleParams};
    use crate::synthetic_bench::{generate, BenchParams};

    fn rec(id: &str, cat: &str, role: Role, v: &[f64]) -> EmbeddingRecord {
        EmbeddingRecord {
            id: id.into(),
            category: cat.into(),
            split: Some(0),
            role,
            domain: None,
            vector: v.to_vec(),
        }
    }

    fn toy() -> EmbeddingSet {
        EmbeddingSet::from_records(vec![
            rec("q", "cat", Role::Query, &[1.0, 0.0]),
            rec("same", "cat", Role::Source, &[1.0, 0.0]),
            rec("near", "dog", Role::Source, &[1.0, 0.5]),
            rec("far", "cat", Role::Source, &[0.0, 1.0]),
            rec("far2", "dog", Role::Source, &[-1.0, 0.2]),
        ])
        .unwrap()
    }

    #[test]
    fn unsup_picks_identical_candidate() {
        let p = select_prompt(&SelectionMethod::Unsup { metric: Metric::Cosine }, &toy(), "q", 1, 0).unwrap();
        assert_eq!(p.example_ids(), ["same"]);
    }

    #[test]
    fn random_is_seeded() {
        let m = SelectionMethod::Random { within_class: false };
        let a = select_prompt(&m, &toy(), "q", 2, 7).unwrap();
        let b = select_prompt(&m, &toy(), "q", 2, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn within_class_random_stays_in_class() {
        let set = toy();
        let m = SelectionMethod::Random { within_class: true };
        for seed in 0..20 {
            let p = select_prompt(&m, &set, "q", 5, seed).unwrap();
            assert_eq!(p.k(), 2);
            assert!(p.example_ids().iter().all(|id| set.get(id).unwrap().category == "cat"));
        }
    }

    #[test]
    fn within_class_random_without_class_members() {
        let set = EmbeddingSet::from_records(vec![
            rec("q", "cat", Role::Query, &[1.0, 0.0]),
            rec("d", "dog", Role::Source, &[1.0, 0.0]),
        ])
        .unwrap();
        let m = SelectionMethod::Random { within_class: true };
        assert!(matches!(select_prompt(&m, &set, "q", 1, 0), Err(Error::NoCandidates(_))));
    }

    #[test]
    fn random_prompts_are_nested_in_k() {
        let set = toy();
        let m = SelectionMethod::Random { within_class: false };
        let p2 = select_prompt(&m, &set, "q", 2, 3).unwrap();
        let p4 = select_prompt(&m, &set, "q", 4, 3).unwrap();
        assert_eq!(p2.example_ids(), &p4.example_ids()[..2]);
    }

    #[test]
    fn sup_with_identity_head_equals_unsup() {
        let (set, _) = generate(&BenchParams {
            n_source_per_cat: 10,
            n_query_per_cat: 3,
            ..Default::default()
        })
        .unwrap();
        let unsup = SelectionMethod::Unsup { metric: Metric::Cosine };
        let sup = SelectionMethod::Sup {
            metric: Metric::Cosine,
            head: ProjectionHead::identity(set.dimension(), false),
        };
        for q in set.queries() {
            assert_eq!(
                select_prompt(&unsup, &set, &q.id, 4, 0).unwrap(),
                select_prompt(&sup, &set, &q.id, 4, 0).unwrap()
            );
        }
    }

    #[test]
    fn mean_std_exact_zero_for_constant_input() {
        let x = 0.1 + 0.2;
        assert_eq!(mean_std(&[x; 6]), (x, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }

    fn bench() -> (EmbeddingSet, crate::synthetic_bench::LatentStore) {
        generate(&BenchParams {
            n_source_per_cat: 10,
            n_query_per_cat: 4,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn empty_method_list_gives_header_only() {
        let (set, latents) = bench();
        let oracle = SyntheticOracle::new(&latents, SyntheticOracleParams::default()).unwrap();
        let r = run_experiment(&[], &set, &oracle, 1, 1, 0).unwrap();
        assert_eq!(r.to_csv(), format!("{REPORT_HEADER}\n"));
    }

    #[test]
    fn report_rows_and_determinism() {
        let (set, latents) = bench();
        let oracle = SyntheticOracle::new(&latents, SyntheticOracleParams::default()).unwrap();
        let methods = [
            SelectionMethod::Random { within_class: true },
            SelectionMethod::Unsup { metric: Metric::Cosine },
        ];
        let a = run_experiment(&methods, &set, &oracle, 1, 3, 0).unwrap();
        let b = run_experiment(&methods, &set, &oracle, 1, 3, 0).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.rows.len(), 2);
        assert!(a.rows.iter().all(|r| r.n_queries == 20));
        assert!(a.rows[0].std_perf.is_some());
        assert!(a.rows[1].std_perf.is_none());
        let single = run_experiment(&methods[..1], &set, &oracle, 1, 1, 0).unwrap();
        assert!(single.rows[0].std_perf.is_none());
    }

    #[test]
    fn multiple_splits_get_avg_row() {
        let recs = vec![
            rec("a", "c", Role::Source, &[1.0, 0.0]),
            rec("b", "c", Role::Source, &[0.0, 1.0]),
            EmbeddingRecord { split: Some(1), ..rec("q1", "c", Role::Query, &[1.0, 0.1]) },
            rec("q0", "c", Role::Query, &[0.1, 1.0]),
        ];
        let set = EmbeddingSet::from_records(recs).unwrap();
        struct Const;
        impl Oracle for Const {
            fn performance(&self, p: &Prompt) -> Result<f64> {
                Ok(if p.query_id() == "q0" { 0.2 } else { 0.6 })
            }
        }
        let r = run_experiment(&[SelectionMethod::Unsup { metric: Metric::Cosine }], &set, &Const, 1, 1, 0).unwrap();
        let splits: Vec<_> = r.rows.iter().map(|r| r.split.as_str()).collect();
        assert_eq!(splits, ["0", "1", "avg"]);
        assert!((r.rows[2].mean_perf - 0.4).abs() < 1e-15);
        assert_eq!(r.rows[2].n_queries, 2);
    }
}
