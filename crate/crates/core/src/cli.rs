//! Command-line entry point.
//!
//! Every subcommand takes `--seed` (default 0, never the wall clock) and
//! `--threads`. The seed feeds the bench generator, oracle noise, training and
//! random baselines alike. Each file output `X` gets a run manifest `X.manifest.json`
//! (gen-synthetic writes `manifest.json` in its output directory) recording the
//! resolved configuration, input digests, seed and tool version.
//!
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 on runtime
//! failures (I/O, diverging training).

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::embedding_store::{EmbeddingSet, Role};
use crate::error::Error;
use crate::evaluation::{
    self, miou, mse, run_experiment, sweep_k, sweep_metric, sweep_order, sweep_size, ExperimentReport, Grid,
    MethodKind, PipelineConfig, SelectionMethod,
};
use crate::mining::{mine_sets_with, ContrastiveSets, MineOptions, DEFAULT_TOP};
use crate::oracle::{build_performance_matrix, MatrixOptions, MatrixOracle, Oracle, PerformanceMatrix, SyntheticOracle, SyntheticOracleParams};
use crate::similarity::{Metric, RetrievalIndex};
use crate::synthetic_bench::{generate, generate_shifted, BenchParams, LatentStore};
use crate::trainer::{train, InBatchNegatives, ProjectionHead, TrainConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "prompt-retrieval", version, about = "Prompt retrieval for visual in-context learning")]
pub struct Cli {
    /// Seed for every random choice (bench, oracle noise, training, random baselines).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for parallel stages. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic bench (embeddings + latent sidecar).
    GenSynthetic(GenArgs),
    /// Validate an embedding file, optionally writing an L2-normalized copy.
    Ingest(IngestArgs),
    /// Build a single-example performance matrix from the synthetic oracle.
    PerfMatrix(PerfMatrixArgs),
    /// Mine positive/negative sets from a performance matrix.
    Mine(MineArgs),
    /// Train a projection head on mined sets.
    Train(TrainArgs),
    /// Retrieve the top-K sources for queries.
    Retrieve(RetrieveArgs),
    /// Evaluate selection methods and write a report.
    Eval(EvalArgs),
    /// Run one experiment sweep and write a report.
    Sweep(SweepArgs),
    /// Compute mIoU or MSE between two grid files.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 5)]
    pub n_categories: usize,
    #[arg(long, default_value_t = 100)]
    pub n_source_per_cat: usize,
    #[arg(long, default_value_t = 40)]
    pub n_query_per_cat: usize,
    #[arg(long, default_value_t = 32)]
    pub d_sem: usize,
    #[arg(long, default_value_t = 32)]
    pub d_sty: usize,
    #[arg(long, default_value_t = 0.3)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.4)]
    pub cluster_spread: f64,
    /// Separate seed for style latents (defaults to --seed).
    #[arg(long)]
    pub style_seed: Option<u64>,
}

impl BenchArgs {
    fn params(&self, seed: u64) -> BenchParams {
        BenchParams {
            n_categories: self.n_categories,
            n_source_per_cat: self.n_source_per_cat,
            n_query_per_cat: self.n_query_per_cat,
            d_sem: self.d_sem,
            d_sty: self.d_sty,
            alpha: self.alpha,
            cluster_spread: self.cluster_spread,
            seed,
            style_seed: self.style_seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub bench: BenchArgs,
    /// Also write a shifted target domain (target_embeddings.jsonl, target_latents.jsonl).
    #[arg(long)]
    pub shift_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Write an L2-normalized copy here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 0.5)]
    pub beta_sem: f64,
    #[arg(long, default_value_t = 0.5)]
    pub beta_style: f64,
    #[arg(long, default_value_t = 0.8)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.02)]
    pub order_delta: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise_sigma: f64,
}

impl OracleArgs {
    fn params(&self, seed: u64) -> SyntheticOracleParams {
        SyntheticOracleParams {
            beta_sem: self.beta_sem,
            beta_style: self.beta_style,
            eta: self.eta,
            order_delta: self.order_delta,
            noise_sigma: self.noise_sigma,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RowRole {
    Source,
    Query,
}

#[derive(Debug, Args)]
pub struct PerfMatrixArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub latents: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Records that become rows; mining wants sources.
    #[arg(long, value_enum, default_value = "source")]
    pub rows: RowRole,
    #[arg(long)]
    pub subsample_cap: Option<usize>,
    #[command(flatten)]
    pub oracle: OracleArgs,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP)]
    pub top: usize,
    /// Restrict candidates to the row's category (needs --embeddings).
    #[arg(long, requires = "embeddings")]
    pub within_category: bool,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.005)]
    pub lr0: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lr_min: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.05)]
    pub temperature: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub init_noise: f64,
    #[arg(long)]
    pub with_bias: bool,
    #[arg(long, value_enum, default_value = "anchors")]
    pub in_batch_negatives: InBatchNegatives,
}

impl TrainFlags {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr0: self.lr0,
            lr_min: self.lr_min,
            batch_size: self.batch_size,
            momentum: self.momentum,
            seed,
            temperature: self.temperature,
            init_noise: self.init_noise,
            with_bias: self.with_bias,
            in_batch_negatives: self.in_batch_negatives,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub sets: PathBuf,
    /// Output head JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss/lr CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Query ids; all queries when omitted.
    #[arg(long = "query")]
    pub queries: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = Metric::Cosine)]
    pub metric: Metric,
    #[arg(long)]
    pub head: Option<PathBuf>,
    /// CSV output; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Latent sidecar for the synthetic oracle.
    #[arg(long, conflicts_with = "matrix")]
    pub latents: Option<PathBuf>,
    /// Performance matrix to replay instead of the synthetic oracle (K=1 only).
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "random,unsup")]
    pub methods: Vec<MethodKind>,
    /// Trained head, required for `sup`.
    #[arg(long)]
    pub head: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, default_value_t = Metric::Cosine)]
    pub metric: Metric,
    /// Random baseline draws from all sources instead of the query's class.
    #[arg(long)]
    pub random_any: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub oracle: OracleArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Size,
    K,
    Order,
    Shift,
    Metric,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub axis: Axis,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub latents: PathBuf,
    /// Sweep points: fractions (size), K values (k, order) or metric names.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<String>,
    /// Target domain for the shift axis.
    #[arg(long, required_if_eq("axis", "shift"))]
    pub target_embeddings: Option<PathBuf>,
    #[arg(long, required_if_eq("axis", "shift"))]
    pub target_latents: Option<PathBuf>,
    /// sweep_value written for the shift axis.
    #[arg(long, default_value = "target")]
    pub label: String,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "random,unsup,sup")]
    pub methods: Vec<MethodKind>,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, default_value_t = Metric::Cosine)]
    pub metric: Metric,
    #[arg(long)]
    pub random_any: bool,
    #[arg(long, default_value_t = DEFAULT_TOP)]
    pub top: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub oracle: OracleArgs,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricKind {
    Miou,
    Mse,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long, value_enum)]
    pub kind: MetricKind,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
}

/// Written next to every output; identical manifests reproduce identical outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    /// Input path (as given) to its SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub seed: u64,
    pub tool_version: String,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn digest(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

struct Run {
    subcommand: &'static str,
    seed: u64,
    inputs: BTreeMap<String, String>,
}

impl Run {
    fn new(subcommand: &'static str, seed: u64) -> Self {
        Self {
            subcommand,
            seed,
            inputs: BTreeMap::new(),
        }
    }

    fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.insert(path.display().to_string(), digest(path)?);
        Ok(())
    }

    fn write_manifest(&self, path: &Path, config: impl Serialize) -> CliResult<()> {
        let manifest = RunManifest {
            subcommand: self.subcommand.to_string(),
            config: serde_json::to_value(config).expect("configs serialize"),
            inputs: self.inputs.clone(),
            seed: self.seed,
            tool_version: TOOL_VERSION.to_string(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn methods_for(
    kinds: &[MethodKind],
    head: Option<&ProjectionHead>,
    metric: Metric,
    within_class: bool,
) -> CliResult<Vec<SelectionMethod>> {
    kinds
        .iter()
        .map(|k| match k {
            MethodKind::Random => Ok(SelectionMethod::Random { within_class }),
            MethodKind::Unsup => Ok(SelectionMethod::Unsup { metric }),
            MethodKind::Sup => head
                .map(|h| SelectionMethod::Sup { metric, head: h.clone() })
                .ok_or_else(|| usage("method `sup` requires --head")),
        })
        .collect()
}

fn gen_synthetic(a: &GenArgs, seed: u64) -> CliResult<()> {
    let params = a.bench.params(seed);
    let (set, latents) = generate(&params)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    set.save(a.out.join("embeddings.jsonl"))?;
    latents.save(a.out.join("latents.jsonl"))?;
    if let Some(scale) = a.shift_scale {
        let (tset, tlat) = generate_shifted(&params, &latents, scale)?;
        tset.save(a.out.join("target_embeddings.jsonl"))?;
        tlat.save(a.out.join("target_latents.jsonl"))?;
    }
    #[derive(Serialize)]
    struct Config<'a> {
        bench: &'a BenchParams,
        shift_scale: Option<f64>,
    }
    Run::new("gen-synthetic", seed).write_manifest(
        &a.out.join("manifest.json"),
        Config {
            bench: &params,
            shift_scale: a.shift_scale,
        },
    )
}

fn ingest(a: &IngestArgs, seed: u64) -> CliResult<()> {
    let set = EmbeddingSet::load(&a.embeddings)?;
    let sources = set.sources().count();
    let unit_norm = set
        .records()
        .iter()
        .all(|r| (r.vector.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() <= 1e-9);
    println!(
        "{{\"records\": {}, \"dimension\": {}, \"sources\": {}, \"queries\": {}, \"unit_norm\": {}}}",
        set.len(),
        set.dimension(),
        sources,
        set.len() - sources,
        unit_norm
    );
    if let Some(out) = &a.out {
        set.l2_normalize()?.save(out)?;
        let mut run = Run::new("ingest", seed);
        run.input(&a.embeddings)?;
        run.write_manifest(&manifest_path(out), serde_json::json!({ "normalize": true }))?;
    }
    Ok(())
}

fn perf_matrix(a: &PerfMatrixArgs, seed: u64) -> CliResult<()> {
    let mut run = Run::new("perf-matrix", seed);
    run.input(&a.embeddings)?;
    run.input(&a.latents)?;
    let set = EmbeddingSet::load(&a.embeddings)?;
    let latents = LatentStore::load(&a.latents)?;
    let params = a.oracle.params(seed);
    let options = MatrixOptions {
        rows: match a.rows {
            RowRole::Source => Role::Source,
            RowRole::Query => Role::Query,
        },
        subsample_cap: a.subsample_cap,
    };
    build_performance_matrix(&set, &latents, &params, &options)?.save(&a.out)?;
    run.write_manifest(
        &manifest_path(&a.out),
        serde_json::json!({ "oracle": params, "matrix": options }),
    )
}

fn mine(a: &MineArgs, seed: u64) -> CliResult<()> {
    let mut run = Run::new("mine", seed);
    run.input(&a.matrix)?;
    let matrix = PerformanceMatrix::load(&a.matrix)?;
    let categories: Option<HashMap<String, String>> = match (&a.embeddings, a.within_category) {
        (Some(path), true) => {
            run.input(path)?;
            let set = EmbeddingSet::load(path)?;
            Some(set.records().iter().map(|r| (r.id.clone(), r.category.clone())).collect())
        }
        _ => None,
    };
    let sets = mine_sets_with(
        &matrix,
        a.top,
        &MineOptions {
            categories: categories.as_ref(),
        },
    )?;
    sets.save(&a.out)?;
    run.write_manifest(
        &manifest_path(&a.out),
        serde_json::json!({ "top": a.top, "within_category": a.within_category }),
    )
}

fn train_cmd(a: &TrainArgs, seed: u64) -> CliResult<()> {
    let mut run = Run::new("train", seed);
    run.input(&a.embeddings)?;
    run.input(&a.sets)?;
    let set = EmbeddingSet::load(&a.embeddings)?;
    let sets = ContrastiveSets::load(&a.sets)?;
    let config = a.train.config(seed);
    let (head, log) = train(&set, &sets, &config)?;
    head.save(&a.out)?;
    if let Some(path) = &a.log {
        log.save(path)?;
    }
    run.write_manifest(&manifest_path(&a.out), &config)
}

fn retrieve(a: &RetrieveArgs, seed: u64) -> CliResult<()> {
    let mut run = Run::new("retrieve", seed);
    run.input(&a.embeddings)?;
    let set = EmbeddingSet::load(&a.embeddings)?;
    let head = match &a.head {
        Some(p) => {
            run.input(p)?;
            Some(ProjectionHead::load(p)?)
        }
        None => None,
    };
    let index = RetrievalIndex::build(&set, a.metric, head.as_ref())?;
    let queries: Vec<String> = if a.queries.is_empty() {
        let mut q: Vec<String> = set.queries().map(|r| r.id.clone()).collect();
        q.sort();
        q
    } else {
        a.queries.clone()
    };
    let mut out = String::from("query_id,rank,source_id,score\n");
    for q in &queries {
        let ranking = index.retrieve(q, a.k)?;
        if ranking.truncated {
            eprintln!("warning: {q} has only {} candidates", ranking.entries.len());
        }
        for (rank, e) in ranking.entries.iter().enumerate() {
            out.push_str(&format!("{q},{},{},{}\n", rank + 1, e.id, e.score));
        }
    }
    match &a.out {
        Some(path) => {
            write_text(path, &out)?;
            run.write_manifest(
                &manifest_path(path),
                serde_json::json!({ "k": a.k, "metric": a.metric, "queries": a.queries }),
            )
        }
        None => {
            std::io::stdout()
                .write_all(out.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))?;
            Ok(())
        }
    }
}

fn eval(a: &EvalArgs, seed: u64) -> CliResult<()> {
    let mut run = Run::new("eval", seed);
    run.input(&a.embeddings)?;
    if a.methods.contains(&MethodKind::Sup) && a.head.is_none() {
        return Err(usage("method `sup` requires --head"));
    }
    let set = EmbeddingSet::load(&a.embeddings)?;
    let head = match &a.head {
        Some(p) => {
            run.input(p)?;
            Some(ProjectionHead::load(p)?)
        }
        None => None,
    };
    let methods = methods_for(&a.methods, head.as_ref(), a.metric, !a.random_any)?;
    let params = a.oracle.params(seed);
    let report = match (&a.latents, &a.matrix) {
        (Some(path), None) => {
            run.input(path)?;
            let latents = LatentStore::load(path)?;
            let oracle = SyntheticOracle::new(&latents, params.clone())?;
            run_experiment(&methods, &set, &oracle, a.k, a.trials, seed)?
        }
        (None, Some(path)) => {
            run.input(path)?;
            let matrix = PerformanceMatrix::load(path)?;
            let oracle = MatrixOracle::new(&matrix);
            if !oracle.higher_is_better() {
                eprintln!("note: {} holds a lower-is-better metric", path.display());
            }
            // Only pairs the matrix can answer: its rows as queries, its columns as sources.
            let rows: std::collections::HashSet<&str> = matrix.query_ids.iter().map(String::as_str).collect();
            let cols: std::collections::HashSet<&str> = matrix.source_ids.iter().map(String::as_str).collect();
            let restricted = set.filter(|r| match r.role {
                Role::Query => rows.contains(r.id.as_str()),
                Role::Source => cols.contains(r.id.as_str()),
            })?;
            if restricted.len() < set.len() {
                eprintln!(
                    "note: evaluating {} of {} records covered by the matrix",
                    restricted.len(),
                    set.len()
                );
            }
            run_experiment(&methods, &restricted, &oracle, a.k, a.trials, seed)?
        }
        _ => return Err(usage("eval needs exactly one of --latents or --matrix")),
    };
    report.save(&a.out)?;
    let oracle_config = a.latents.as_ref().map(|_| &params);
    run.write_manifest(
        &manifest_path(&a.out),
        serde_json::json!({
            "methods": a.methods,
            "k": a.k,
            "trials": a.trials,
            "metric": a.metric,
            "within_class": !a.random_any,
            "oracle": oracle_config,
        }),
    )
}

fn parse_values<T: std::str::FromStr>(values: &[String], default: &[&str], what: &str) -> CliResult<Vec<T>> {
    let raw: Vec<&str> = if values.is_empty() {
        default.to_vec()
    } else {
        values.iter().map(String::as_str).collect()
    };
    raw.iter()
        .map(|v| v.trim().parse::<T>().map_err(|_| usage(format!("invalid {what} {v:?}"))))
        .collect()
}

fn sweep(a: &SweepArgs, seed: u64) -> CliResult<()> {
    let mut run = Run::new("sweep", seed);
    run.input(&a.embeddings)?;
    run.input(&a.latents)?;
    let set = EmbeddingSet::load(&a.embeddings)?;
    let latents = LatentStore::load(&a.latents)?;
    let cfg = PipelineConfig {
        oracle: a.oracle.params(seed),
        train: a.train.config(seed),
        mine_top: a.top,
        metric: a.metric,
        within_class: !a.random_any,
        k: a.k,
        trials: a.trials,
        seed,
    };
    let report: ExperimentReport = match a.axis {
        Axis::Size => {
            let fractions: Vec<f64> = parse_values(
                &a.values,
                &["0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9", "1.0"],
                "fraction",
            )?;
            sweep_size(&fractions, &set, &latents, &a.methods, &cfg)?
        }
        Axis::K => {
            let ks: Vec<usize> = parse_values(&a.values, &["1", "2", "3", "4", "5", "6", "7"], "k")?;
            sweep_k(&ks, &set, &latents, &a.methods, &cfg)?
        }
        Axis::Order => {
            let ks: Vec<usize> = parse_values(&a.values, &["3"], "k")?;
            let mut report = ExperimentReport::default();
            for k in ks {
                report.extend(sweep_order(k, &set, &latents, &a.methods, &cfg)?);
            }
            report
        }
        Axis::Metric => {
            let metrics: Vec<Metric> = parse_values(&a.values, &["cosine", "euclidean", "manhattan"], "metric")?;
            sweep_metric(&metrics, &set, &latents, &a.methods, &cfg)?
        }
        Axis::Shift => {
            let (te, tl) = match (&a.target_embeddings, &a.target_latents) {
                (Some(e), Some(l)) => (e, l),
                _ => return Err(usage("--axis shift requires --target-embeddings and --target-latents")),
            };
            run.input(te)?;
            run.input(tl)?;
            let tset = EmbeddingSet::load(te)?;
            let tlat = LatentStore::load(tl)?;
            evaluation::eval_shift((&set, &latents), (&tset, &tlat), &a.methods, &cfg, &a.label)?
        }
    };
    report.save(&a.out)?;
    #[derive(Serialize)]
    struct Config<'a> {
        axis: &'a str,
        values: &'a [String],
        methods: &'a [MethodKind],
        label: &'a str,
        pipeline: &'a PipelineConfig,
    }
    let axis = match a.axis {
        Axis::Size => "size",
        Axis::K => "k",
        Axis::Order => "order",
        Axis::Shift => "shift",
        Axis::Metric => "metric",
    };
    run.write_manifest(
        &manifest_path(&a.out),
        Config {
            axis,
            values: &a.values,
            methods: &a.methods,
            label: &a.label,
            pipeline: &cfg,
        },
    )
}

fn metrics_cmd(a: &MetricsArgs) -> CliResult<()> {
    let pred = Grid::load(&a.pred)?;
    let gt = Grid::load(&a.gt)?;
    let v = match a.kind {
        MetricKind::Miou => miou(&pred, &gt)?,
        MetricKind::Mse => mse(&pred, &gt)?,
    };
    println!("{v}");
    Ok(())
}

fn execute(cli: &Cli) -> CliResult<()> {
    let seed = cli.seed;
    match &cli.command {
        Command::GenSynthetic(a) => gen_synthetic(a, seed),
        Command::Ingest(a) => ingest(a, seed),
        Command::PerfMatrix(a) => perf_matrix(a, seed),
        Command::Mine(a) => mine(a, seed),
        Command::Train(a) => train_cmd(a, seed),
        Command::Retrieve(a) => retrieve(a, seed),
        Command::Eval(a) => eval(a, seed),
        Command::Sweep(a) => sweep(a, seed),
        Command::Metrics(a) => metrics_cmd(a),
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.threads {
        Some(0) => Err(usage("--threads must be positive")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => {
                eprintln!("error: cannot start thread pool: {e}");
                return 2;
            }
        },
        None => execute(&cli),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Lib(e)) => {
            eprintln!("error: {e}");
            if e.is_runtime() {
                2
            } else {
                1
            }
        }
    }
}
