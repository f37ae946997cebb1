//! Files as an external exporter would write them: hand-built JSONL and
//! hand-packed matrix binaries, checked against the primary loaders.

use std::fs;
use std::path::Path;
use std::process::Command;

use prompt_retrieval::evaluation::{miou, mse, Grid};
use prompt_retrieval::mining::mine_sets;
use prompt_retrieval::oracle::PerformanceMatrix;
use prompt_retrieval::{EmbeddingSet, Error, Role};

const BIN: &str = env!("CARGO_BIN_EXE_prompt-retrieval");

/// Independent writer for the matrix layout: magic, two u32 LE dims, f32 LE row-major.
fn pack_matrix(path: &Path, rows: &[&str], cols: &[&str], values: &[f32], metric: &str, higher_is_better: bool) {
    let mut bytes = b"ICLPERF1".to_vec();
    bytes.extend((rows.len() as u32).to_le_bytes());
    bytes.extend((cols.len() as u32).to_le_bytes());
    for v in values {
        bytes.extend(v.to_le_bytes());
    }
    fs::write(path, bytes).unwrap();
    let sidecar = serde_json::json!({
        "queries": rows,
        "sources": cols,
        "metric": metric,
        "higher_is_better": higher_is_better,
    });
    fs::write(format!("{}.json", path.display()), sidecar.to_string()).unwrap();
}

fn loop_mse(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).powi(2);
    }
    s / a.len() as f64
}

fn loop_iou(a: &[f64], b: &[f64]) -> f64 {
    let (mut i, mut u) = (0.0, 0.0);
    for k in 0..a.len() {
        let (x, y) = (a[k] >= 0.5, b[k] >= 0.5);
        if x && y {
            i += 1.0;
        }
        if x || y {
            u += 1.0;
        }
    }
    if u == 0.0 {
        1.0
    } else {
        i / u
    }
}

#[test]
fn exported_embeddings_pass_ingest() {
    let tmp = tempfile::tempdir().unwrap();
    let lines = [
        r#"{"id": "cat/a.png", "category": "cat", "split": null, "role": "source", "domain": null, "vector": [0.1, 0.2, 0.3]}"#,
        r#"{"id": "cat/b.png", "category": "cat", "split": null, "role": "query", "domain": null, "vector": [0.3, 0.1, -0.2]}"#,
        r#"{"id": "dog/a.png", "category": "dog", "split": null, "role": "source", "domain": null, "vector": [1e-3, 2.5, 0]}"#,
        r#"{"id": "dog/b.png", "category": "dog", "split": null, "role": "query", "domain": null, "vector": [-1, 0.5, 0.25]}"#,
    ];
    let path = tmp.path().join("emb.jsonl");
    fs::write(&path, lines.join("\n") + "\n").unwrap();

    let set = EmbeddingSet::load(&path).unwrap();
    assert_eq!(set.len(), 4);
    assert_eq!(set.dimension(), 3);
    assert_eq!(set.sources().count(), 2);
    assert!(set.records().iter().all(|r| r.split.is_none() && r.domain.is_none()));
    assert_eq!(set.get("dog/b.png").unwrap().role, Role::Query);

    let out = Command::new(BIN).arg("ingest").arg("--embeddings").arg(&path).output().unwrap();
    assert!(out.status.success());
    assert!(out.stderr.is_empty(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn inconsistent_export_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("emb.jsonl");
    fs::write(
        &path,
        concat!(
            r#"{"id": "a", "category": "c", "split": 0, "role": "source", "domain": null, "vector": [1, 0]}"#,
            "\n",
            r#"{"id": "b", "category": "c", "split": 0, "role": "query", "domain": null, "vector": [1, 0, 0]}"#,
            "\n"
        ),
    )
    .unwrap();
    assert!(matches!(
        EmbeddingSet::load(&path),
        Err(Error::DimensionMismatch { expected: 2, found: 3 })
    ));
}

fn grids() -> (Vec<Grid>, Vec<Grid>) {
    let g = |d: &[f64]| Grid::new([2, 2], d.to_vec()).unwrap();
    // preds[q * 2 + s]: query q prompted with source s
    let preds = vec![
        g(&[1.0, 0.0, 1.0, 1.0]),
        g(&[0.2, 0.9, 0.6, 0.1]),
        g(&[0.0, 0.0, 0.0, 0.0]),
        g(&[0.7, 0.7, 0.3, 0.0]),
    ];
    let gts = vec![g(&[1.0, 0.0, 0.0, 1.0]), g(&[0.0, 1.0, 1.0, 0.0])];
    (preds, gts)
}

#[test]
fn two_by_two_dump_matches_metric_recomputation() {
    let tmp = tempfile::tempdir().unwrap();
    let (preds, gts) = grids();
    let (rows, cols) = (["q0", "q1"], ["s0", "s1"]);
    for (metric, hib) in [("miou", true), ("mse", false)] {
        let oracle = |p: &Grid, g: &Grid| if hib { loop_iou(&p.data, &g.data) } else { loop_mse(&p.data, &g.data) };
        let values: Vec<f32> = (0..4).map(|i| oracle(&preds[i], &gts[i / 2]) as f32).collect();
        let path = tmp.path().join(format!("{metric}.bin"));
        pack_matrix(&path, &rows, &cols, &values, metric, hib);

        let m = PerformanceMatrix::load(&path).unwrap();
        assert_eq!(m.higher_is_better, hib);
        assert_eq!(m.metric_name, metric);
        assert_eq!((m.n_queries(), m.n_sources()), (2, 2));
        for q in 0..2 {
            for s in 0..2 {
                let (p, g) = (&preds[q * 2 + s], &gts[q]);
                let primary = if hib { miou(p, g).unwrap() } else { mse(p, g).unwrap() };
                assert_eq!(m.get(q, s), primary as f32, "{metric} cell ({q}, {s})");
            }
        }
    }
}

#[test]
fn mse_dump_mines_lowest_error_as_positive() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.bin");
    let ids = ["a", "b", "c"];
    #[rustfmt::skip]
    let values = [
        0.0, 0.1, 0.9,
        0.3, 0.0, 0.2,
        0.5, 0.4, 0.0,
    ];
    pack_matrix(&path, &ids, &ids, &values, "mse", false);
    let sets = mine_sets(&PerformanceMatrix::load(&path).unwrap(), 1).unwrap();
    assert_eq!(sets.get("a").unwrap().positives, ["b"]);
    assert_eq!(sets.get("a").unwrap().negatives, ["c"]);
    assert_eq!(sets.get("b").unwrap().positives, ["c"]);
    assert_eq!(sets.get("c").unwrap().positives, ["b"]);
}

#[test]
fn truncated_dump_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.bin");
    pack_matrix(&path, &["q0", "q1"], &["s0", "s1"], &[0.5, 0.5, 0.5], "miou", true);
    assert!(matches!(PerformanceMatrix::load(&path), Err(Error::ShapeMismatch(_))));

    pack_matrix(&path, &["q0"], &["s0", "s1"], &[0.5, 0.5, 0.5, 0.5], "miou", true);
    let mut bytes = fs::read(&path).unwrap();
    bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
    fs::write(&path, bytes).unwrap();
    assert!(matches!(PerformanceMatrix::load(&path), Err(Error::SidecarMismatch(_))));

    fs::write(&path, b"NOTMAGIC\0\0\0\0\0\0\0\0").unwrap();
    assert!(matches!(PerformanceMatrix::load(&path), Err(Error::BadMagic)));
}
