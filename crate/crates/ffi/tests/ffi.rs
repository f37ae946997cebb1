use std::ffi::{CStr, CString};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use prompt_retrieval_ffi::*;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = pr_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

const EMBEDDINGS: &str = concat!(
    r#"{"id": "a", "category": "x", "split": 0, "role": "query", "domain": null, "vector": [1, 0]}"#,
    "\n",
    r#"{"id": "b", "category": "x", "split": 0, "role": "source", "domain": null, "vector": [0.8, 0.6]}"#,
    "\n",
    r#"{"id": "c", "category": "x", "split": 0, "role": "source", "domain": null, "vector": [0, 1]}"#,
    "\n",
    r#"{"id": "d", "category": "x", "split": 0, "role": "source", "domain": null, "vector": [-1, 0]}"#,
    "\n",
);

fn write_set(dir: &Path) -> PathBuf {
    let p = dir.join("emb.jsonl");
    fs::write(&p, EMBEDDINGS).unwrap();
    p
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(pr_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn load_and_retrieve() {
    let tmp = tempfile::tempdir().unwrap();
    let path = cstr(&write_set(tmp.path()));
    unsafe {
        let mut set = ptr::null_mut();
        assert_eq!(pr_embedding_set_load(path.as_ptr(), &mut set), PrStatus::Ok);
        let (mut len, mut dim) = (0usize, 0usize);
        assert_eq!(pr_embedding_set_len(set, &mut len), PrStatus::Ok);
        assert_eq!(pr_embedding_set_dimension(set, &mut dim), PrStatus::Ok);
        assert_eq!((len, dim), (4, 2));

        let q = CString::new("a").unwrap();
        let mut ranking = ptr::null_mut();
        let status = pr_retrieve_topk(set, q.as_ptr(), 5, PrMetric::Cosine, ptr::null(), &mut ranking);
        assert_eq!(status, PrStatus::Ok);
        assert_eq!(pr_ranking_len(ranking), 3);
        assert!(pr_ranking_truncated(ranking));
        let ids: Vec<String> = (0..3)
            .map(|i| CStr::from_ptr(pr_ranking_id(ranking, i)).to_string_lossy().into_owned())
            .collect();
        assert_eq!(ids, ["b", "c", "d"]);
        let mut s = 0.0;
        assert_eq!(pr_ranking_score(ranking, 0, &mut s), PrStatus::Ok);
        assert!((s - 0.8).abs() < 1e-12);
        assert!(pr_ranking_id(ranking, 3).is_null());
        assert_eq!(pr_ranking_score(ranking, 3, &mut s), PrStatus::InvalidArgument);
        pr_ranking_free(ranking);

        let missing = CString::new("zzz").unwrap();
        let status = pr_retrieve_topk(set, missing.as_ptr(), 1, PrMetric::Cosine, ptr::null(), &mut ranking);
        assert_eq!(status, PrStatus::NotFound);
        assert!(last_error().contains("zzz"));
        pr_embedding_set_free(set);
    }
}

#[test]
fn head_changes_ranking() {
    let tmp = tempfile::tempdir().unwrap();
    let path = cstr(&write_set(tmp.path()));
    // Keeps only the second coordinate: the query maps to the origin and d,
    // last without the head, maps onto it.
    let head_path = tmp.path().join("head.json");
    fs::write(&head_path, r#"{"d_in": 2, "d_out": 2, "weights": [0, 0, 0, 1], "bias": null}"#).unwrap();
    let head_path = cstr(&head_path);
    unsafe {
        let (mut set, mut head, mut ranking) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(pr_embedding_set_load(path.as_ptr(), &mut set), PrStatus::Ok);
        assert_eq!(pr_head_load(head_path.as_ptr(), &mut head), PrStatus::Ok, "{}", last_error());
        let q = CString::new("a").unwrap();
        assert_eq!(pr_retrieve_topk(set, q.as_ptr(), 1, PrMetric::Euclidean, head, &mut ranking), PrStatus::Ok);
        assert_eq!(CStr::from_ptr(pr_ranking_id(ranking, 0)).to_str().unwrap(), "d");
        pr_ranking_free(ranking);
        pr_head_free(head);
        pr_embedding_set_free(set);
    }
}

#[test]
fn score_and_metrics() {
    let (a, b) = ([0.0, 0.0], [3.0, 4.0]);
    let mut out = 0.0;
    unsafe {
        assert_eq!(pr_score(a.as_ptr(), b.as_ptr(), 2, PrMetric::Euclidean, &mut out), PrStatus::Ok);
        assert_eq!(out, -5.0);
        assert_eq!(pr_score(a.as_ptr(), b.as_ptr(), 2, PrMetric::Manhattan, &mut out), PrStatus::Ok);
        assert_eq!(out, -7.0);
        assert_eq!(pr_score(a.as_ptr(), b.as_ptr(), 2, PrMetric::Cosine, &mut out), PrStatus::InvalidArgument);

        let (p, g) = ([1.0, 1.0, 0.0], [0.0, 1.0, 1.0]);
        assert_eq!(pr_miou(p.as_ptr(), g.as_ptr(), 1, 3, &mut out), PrStatus::Ok);
        assert_eq!(out, 1.0 / 3.0);
        let (p, g) = ([0.5; 3], [0.0; 3]);
        assert_eq!(pr_mse(p.as_ptr(), g.as_ptr(), 3, 1, &mut out), PrStatus::Ok);
        assert_eq!(out, 0.25);
    }
}

#[test]
fn null_arguments_are_reported() {
    let mut out = 0.0;
    let a = [1.0];
    unsafe {
        assert_eq!(pr_score(ptr::null(), a.as_ptr(), 1, PrMetric::Cosine, &mut out), PrStatus::NullPointer);
        assert!(last_error().contains('a'));
        assert_eq!(pr_score(a.as_ptr(), a.as_ptr(), 1, PrMetric::Cosine, ptr::null_mut()), PrStatus::NullPointer);
        let mut set = ptr::null_mut();
        assert_eq!(pr_embedding_set_load(ptr::null(), &mut set), PrStatus::NullPointer);
        assert!(set.is_null());
        let mut n = 0usize;
        assert_eq!(pr_embedding_set_len(ptr::null(), &mut n), PrStatus::NullPointer);
        pr_embedding_set_free(ptr::null_mut());
        pr_ranking_free(ptr::null_mut());
        assert_eq!(pr_ranking_len(ptr::null()), 0);
    }
}

#[test]
fn load_errors_map_to_status() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = cstr(&tmp.path().join("missing.jsonl"));
    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, "not json\n").unwrap();
    let bad = cstr(&bad);
    unsafe {
        let mut set = ptr::null_mut();
        assert_eq!(pr_embedding_set_load(missing.as_ptr(), &mut set), PrStatus::Io);
        assert_eq!(pr_embedding_set_load(bad.as_ptr(), &mut set), PrStatus::Parse);
        assert!(last_error().contains("line 1"));
        let mut m = ptr::null_mut();
        assert_eq!(pr_perf_matrix_load(bad.as_ptr(), &mut m), PrStatus::Parse);
    }
}

#[test]
fn perf_matrix_access() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.bin");
    let mut bytes = b"ICLPERF1".to_vec();
    bytes.extend(2u32.to_le_bytes());
    bytes.extend(3u32.to_le_bytes());
    for v in [0.1f32, 0.2, 0.3, 0.4, 0.5, 0.6] {
        bytes.extend(v.to_le_bytes());
    }
    fs::write(&path, bytes).unwrap();
    fs::write(
        tmp.path().join("m.bin.json"),
        r#"{"queries": ["q0", "q1"], "sources": ["s0", "s1", "s2"], "metric": "mse", "higher_is_better": false}"#,
    )
    .unwrap();
    let path = cstr(&path);
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(pr_perf_matrix_load(path.as_ptr(), &mut m), PrStatus::Ok, "{}", last_error());
        let (mut nq, mut ns) = (0, 0);
        assert_eq!(pr_perf_matrix_shape(m, &mut nq, &mut ns), PrStatus::Ok);
        assert_eq!((nq, ns), (2, 3));
        let mut v = 0.0f32;
        assert_eq!(pr_perf_matrix_get(m, 1, 2, &mut v), PrStatus::Ok);
        assert_eq!(v, 0.6);
        assert_eq!(pr_perf_matrix_get(m, 2, 0, &mut v), PrStatus::InvalidArgument);
        let mut hib = true;
        assert_eq!(pr_perf_matrix_higher_is_better(m, &mut hib), PrStatus::Ok);
        assert!(!hib);
        pr_perf_matrix_free(m);
    }
}

/// Directory holding the built `libprompt_retrieval_ffi.a`, if any.
fn static_lib_dir() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let profile_dir = exe.parent()?.parent()?.to_path_buf();
    [profile_dir.clone(), profile_dir.join("deps")]
        .into_iter()
        .find(|d| d.join("libprompt_retrieval_ffi.a").exists())
}

#[test]
fn c_program_links_against_header() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }
    let Some(lib_dir) = static_lib_dir() else {
        eprintln!("skipping: static library not built");
        return;
    };
    let tmp = tempfile::tempdir().unwrap();
    let emb = write_set(tmp.path());
    let src = tmp.path().join("smoke.c");
    fs::write(
        &src,
        r#"
#include <stdio.h>
#include <string.h>
#include "prompt_retrieval.h"

int main(int argc, char **argv) {
    PrEmbeddingSet *set = NULL;
    PrRanking *ranking = NULL;
    double iou = 0.0, p[3] = {1, 1, 0}, g[3] = {0, 1, 1};
    if (pr_embedding_set_load(argv[1], &set) != PR_STATUS_OK) return 10;
    if (pr_retrieve_topk(set, "a", 2, PR_METRIC_COSINE, NULL, &ranking) != PR_STATUS_OK) return 11;
    if (pr_ranking_len(ranking) != 2 || strcmp(pr_ranking_id(ranking, 0), "b") != 0) return 12;
    if (pr_miou(p, g, 1, 3, &iou) != PR_STATUS_OK) return 13;
    if (pr_retrieve_topk(set, "nope", 1, PR_METRIC_COSINE, NULL, &ranking) != PR_STATUS_NOT_FOUND) return 14;
    printf("%s %.6f %s\n", pr_version(), iou, pr_last_error_message());
    pr_embedding_set_free(set);
    (void)argc;
    return 0;
}
"#,
    )
    .unwrap();
    let bin = tmp.path().join("smoke");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(lib_dir.join("libprompt_retrieval_ffi.a"))
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).arg(&emb).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with(&format!("{} 0.333333 ", env!("CARGO_PKG_VERSION"))), "{stdout}");
    assert!(stdout.contains("nope"));
}
