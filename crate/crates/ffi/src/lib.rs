//! C ABI over the prompt-retrieval engine.
//!
//! Objects cross the boundary as opaque pointers created by `*_load` /
//! `pr_retrieve_topk` and released by the matching `*_free`. Every fallible
//! call returns a [`PrStatus`]; on failure a message is available from
//! [`pr_last_error_message`] on the same thread until the next failing call.
//! Panics never unwind into the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use prompt_retrieval::evaluation::{miou, mse, Grid};
use prompt_retrieval::oracle::PerformanceMatrix;
use prompt_retrieval::similarity::{retrieve_topk, score};
use prompt_retrieval::{EmbeddingSet, Error, Metric, ProjectionHead};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    NotFound = 5,
    ShapeMismatch = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrMetric {
    Cosine = 0,
    Euclidean = 1,
    Manhattan = 2,
}

impl From<PrMetric> for Metric {
    fn from(m: PrMetric) -> Self {
        match m {
            PrMetric::Cosine => Metric::Cosine,
            PrMetric::Euclidean => Metric::Euclidean,
            PrMetric::Manhattan => Metric::Manhattan,
        }
    }
}

/// Loaded embedding set.
pub struct PrEmbeddingSet(EmbeddingSet);

/// Projection head.
pub struct PrHead(ProjectionHead);

/// Result of a top-K query.
pub struct PrRanking {
    ids: Vec<CString>,
    scores: Vec<f64>,
    truncated: bool,
}

/// Performance matrix with its sidecar metadata.
pub struct PrPerfMatrix(PerformanceMatrix);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> PrStatus {
    match e {
        Error::Io { .. } => PrStatus::Io,
        Error::Parse { .. } | Error::BadMagic => PrStatus::Parse,
        Error::UnknownQuery(_) | Error::UnknownId(_) | Error::NoCandidates(_) => PrStatus::NotFound,
        Error::DimensionMismatch { .. } | Error::ShapeMismatch(_) | Error::SidecarMismatch(_) => PrStatus::ShapeMismatch,
        _ => PrStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (PrStatus, String)>) -> PrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PrStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PrStatus::Panic
        }
    }
}

fn lib<T>(r: prompt_retrieval::Result<T>) -> Result<T, (PrStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (PrStatus, String) {
    (PrStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (PrStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (PrStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (PrStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (PrStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (PrStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Owned by the library.
#[no_mangle]
pub extern "C" fn pr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |m| m.as_ptr()))
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pr_embedding_set_load(path: *const c_char, out: *mut *mut PrEmbeddingSet) -> PrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let set = lib(EmbeddingSet::load(path))?;
        *out = Box::into_raw(Box::new(PrEmbeddingSet(set)));
        Ok(())
    })
}

/// # Safety
/// `set` must come from `pr_embedding_set_load` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pr_embedding_set_free(set: *mut PrEmbeddingSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Number of records.
///
/// # Safety
/// `set` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pr_embedding_set_len(set: *const PrEmbeddingSet, out: *mut usize) -> PrStatus {
    guard(|| {
        *out_arg(out, "out")? = handle(set, "set")?.0.len();
        Ok(())
    })
}

/// # Safety
/// `set` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pr_embedding_set_dimension(set: *const PrEmbeddingSet, out: *mut usize) -> PrStatus {
    guard(|| {
        *out_arg(out, "out")? = handle(set, "set")?.0.dimension();
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pr_head_load(path: *const c_char, out: *mut *mut PrHead) -> PrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let head = lib(ProjectionHead::load(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(PrHead(head)));
        Ok(())
    })
}

/// # Safety
/// `head` must come from `pr_head_load` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pr_head_free(head: *mut PrHead) {
    if !head.is_null() {
        drop(Box::from_raw(head));
    }
}

/// Top-`k` sources for `query_id`, best first. `head` may be null.
///
/// # Safety
/// `set` (and `head` unless null) must be live handles, `query_id` a
/// NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pr_retrieve_topk(
    set: *const PrEmbeddingSet,
    query_id: *const c_char,
    k: usize,
    metric: PrMetric,
    head: *const PrHead,
    out: *mut *mut PrRanking,
) -> PrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let set = handle(set, "set")?;
        let query = str_arg(query_id, "query_id")?;
        let head = head.as_ref().map(|h| &h.0);
        let ranking = lib(retrieve_topk(&set.0, query, k, metric.into(), head))?;
        let ids = ranking
            .entries
            .iter()
            .map(|e| CString::new(e.id.as_str()).map_err(|_| (PrStatus::InvalidArgument, format!("id {:?} holds NUL", e.id))))
            .collect::<Result<Vec<_>, _>>()?;
        *out = Box::into_raw(Box::new(PrRanking {
            ids,
            scores: ranking.entries.iter().map(|e| e.score).collect(),
            truncated: ranking.truncated,
        }));
        Ok(())
    })
}

/// # Safety
/// `ranking` must come from `pr_retrieve_topk` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pr_ranking_free(ranking: *mut PrRanking) {
    if !ranking.is_null() {
        drop(Box::from_raw(ranking));
    }
}

/// Number of entries; 0 for null.
///
/// # Safety
/// `ranking` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pr_ranking_len(ranking: *const PrRanking) -> usize {
    ranking.as_ref().map_or(0, |r| r.ids.len())
}

/// Whether fewer than `k` candidates existed; false for null.
///
/// # Safety
/// `ranking` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pr_ranking_truncated(ranking: *const PrRanking) -> bool {
    ranking.as_ref().is_some_and(|r| r.truncated)
}

/// Id at rank `i` (0-based), borrowed from the ranking; null when out of range.
///
/// # Safety
/// `ranking` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pr_ranking_id(ranking: *const PrRanking, i: usize) -> *const c_char {
    ranking
        .as_ref()
        .and_then(|r| r.ids.get(i))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// # Safety
/// `ranking` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pr_ranking_score(ranking: *const PrRanking, i: usize, out: *mut f64) -> PrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let r = handle(ranking, "ranking")?;
        *out = *r
            .scores
            .get(i)
            .ok_or_else(|| (PrStatus::InvalidArgument, format!("rank {i} out of range")))?;
        Ok(())
    })
}

/// Similarity of two vectors of length `len`; distances come back negated.
///
/// # Safety
/// `a` and `b` must point to `len` doubles and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pr_score(a: *const f64, b: *const f64, len: usize, metric: PrMetric, out: *mut f64) -> PrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let (a, b) = (slice_arg(a, len, "a")?, slice_arg(b, len, "b")?);
        *out = lib(score(a, b, metric.into()))?;
        Ok(())
    })
}

unsafe fn grids(pred: *const f64, gt: *const f64, rows: usize, cols: usize) -> Result<(Grid, Grid), (PrStatus, String)> {
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| (PrStatus::InvalidArgument, "grid size overflows".to_string()))?;
    let p = lib(Grid::new([rows, cols], slice_arg(pred, n, "pred")?.to_vec()))?;
    let g = lib(Grid::new([rows, cols], slice_arg(gt, n, "gt")?.to_vec()))?;
    Ok((p, g))
}

/// Foreground IoU of two row-major `rows x cols` grids (cells >= 0.5 are foreground).
///
/// # Safety
/// `pred` and `gt` must point to `rows * cols` doubles and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pr_miou(pred: *const f64, gt: *const f64, rows: usize, cols: usize, out: *mut f64) -> PrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let (p, g) = grids(pred, gt, rows, cols)?;
        *out = lib(miou(&p, &g))?;
        Ok(())
    })
}

/// Mean squared error of two row-major `rows x cols` grids.
///
/// # Safety
/// `pred` and `gt` must point to `rows * cols` doubles and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pr_mse(pred: *const f64, gt: *const f64, rows: usize, cols: usize, out: *mut f64) -> PrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let (p, g) = grids(pred, gt, rows, cols)?;
        *out = lib(mse(&p, &g))?;
        Ok(())
    })
}

/// Loads a matrix binary and its `<path>.json` sidecar.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pr_perf_matrix_load(path: *const c_char, out: *mut *mut PrPerfMatrix) -> PrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let m = lib(PerformanceMatrix::load(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(PrPerfMatrix(m)));
        Ok(())
    })
}

/// # Safety
/// `matrix` must come from `pr_perf_matrix_load` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pr_perf_matrix_free(matrix: *mut PrPerfMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

/// # Safety
/// `matrix` must be a live handle; `n_queries` and `n_sources` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pr_perf_matrix_shape(
    matrix: *const PrPerfMatrix,
    n_queries: *mut usize,
    n_sources: *mut usize,
) -> PrStatus {
    guard(|| {
        let m = &handle(matrix, "matrix")?.0;
        *out_arg(n_queries, "n_queries")? = m.n_queries();
        *out_arg(n_sources, "n_sources")? = m.n_sources();
        Ok(())
    })
}

/// # Safety
/// `matrix` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pr_perf_matrix_get(matrix: *const PrPerfMatrix, q: usize, s: usize, out: *mut f32) -> PrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let m = &handle(matrix, "matrix")?.0;
        if q >= m.n_queries() || s >= m.n_sources() {
            return Err((
                PrStatus::InvalidArgument,
                format!("cell ({q}, {s}) outside {}x{}", m.n_queries(), m.n_sources()),
            ));
        }
        *out = m.get(q, s);
        Ok(())
    })
}

/// # Safety
/// `matrix` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pr_perf_matrix_higher_is_better(matrix: *const PrPerfMatrix, out: *mut bool) -> PrStatus {
    guard(|| {
        *out_arg(out, "out")? = handle(matrix, "matrix")?.0.higher_is_better;
        Ok(())
    })
}
