use prompt_retrieval::mining::mine_sets;
use prompt_retrieval::oracle::{build_performance_matrix, MatrixOptions};
use prompt_retrieval::similarity::retrieve_topk;
use prompt_retrieval::synthetic_bench::generate;
use prompt_retrieval::trainer::{initial_head, train, TrainConfig};
use prompt_retrieval::{BenchParams, Metric, Role, SyntheticOracleParams};

#[test]
fn loss_falls_over_default_run() {
    let (set, latents) = generate(&BenchParams::default()).unwrap();
    let options = MatrixOptions { rows: Role::Source, subsample_cap: None };
    let matrix = build_performance_matrix(&set, &latents, &SyntheticOracleParams::default(), &options).unwrap();
    let sets = mine_sets(&matrix, 5).unwrap();
    let (_, log) = train(&set, &sets, &TrainConfig::default()).unwrap();
    assert_eq!(log.epochs.len(), 200);
    assert!(log.epochs[199].loss < log.epochs[0].loss);
}

#[test]
fn noiseless_initial_head_ranks_like_raw_embedding() {
    let (set, _) = generate(&BenchParams::default()).unwrap();
    let cfg = TrainConfig { init_noise: 0.0, ..TrainConfig::default() };
    let head = initial_head(set.dimension(), &cfg);
    let n = set.sources().count();
    for q in set.queries() {
        for metric in Metric::ALL {
            let raw = retrieve_topk(&set, &q.id, n, metric, None).unwrap();
            let projected = retrieve_topk(&set, &q.id, n, metric, Some(&head)).unwrap();
            assert!(raw.ids().eq(projected.ids()));
        }
    }
}
