//! C interface to the distance, spectral and τ stages.
//!
//! Every function returns a [`SprayStatus`]. On failure the message of the
//! most recent error on the calling thread is available from
//! [`spray_last_error_message`]. Handles are opaque and must be released with
//! their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use spray_core::attribution::AttributionMap;
use spray_core::cluster::{tau_score, TauParams};
use spray_core::distance::{pairwise_distance_matrix, DistanceMatrix, DistanceParams, Metric};
use spray_core::spectral::{eigengap_estimate, knn_affinity, lanczos_eigs, laplacians, LanczosParams, SpectralEmbedding};
use spray_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SprayStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    DegenerateInput = 4,
    NotConverged = 5,
    Io = 6,
    Internal = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SprayMetric {
    Euclidean = 0,
    Wasserstein = 1,
    GromovWasserstein = 2,
}

impl From<SprayMetric> for Metric {
    fn from(m: SprayMetric) -> Self {
        match m {
            SprayMetric::Euclidean => Metric::Euclidean,
            SprayMetric::Wasserstein => Metric::Wasserstein,
            SprayMetric::GromovWasserstein => Metric::GromovWasserstein,
        }
    }
}

/// Pairwise distances between attribution maps.
pub struct SprayDistanceMatrix(DistanceMatrix);

/// Smallest Laplacian eigenpairs of a KNN graph.
pub struct SprayEmbedding(SpectralEmbedding);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SprayStatus {
    match e {
        Error::InvalidParameter { .. } | Error::LabelOutOfRange { .. } => SprayStatus::InvalidArgument,
        Error::Shape(_) => SprayStatus::ShapeMismatch,
        Error::DegenerateMeasure(_) | Error::IsolatedVertex(_) | Error::EmptyDataset | Error::NonFinite(_) => {
            SprayStatus::DegenerateInput
        }
        Error::NotConverged { .. } => SprayStatus::NotConverged,
        Error::Io(_) | Error::Csv(_) | Error::Format(_) => SprayStatus::Io,
        _ => SprayStatus::Internal,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (SprayStatus, String)>) -> SprayStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SprayStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside spray".into());
            SprayStatus::Internal
        }
    }
}

fn core<T>(r: spray_core::Result<T>) -> Result<T, (SprayStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(name: &str) -> (SprayStatus, String) {
    (SprayStatus::NullPointer, format!("`{name}` is null"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn spray_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn spray_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Computes distances between `n` row-major `h × w` maps stored back to back
/// in `maps`. Solver settings are the library defaults.
///
/// # Safety
/// `maps` must point to `n * h * w` readable doubles and `out` to writable
/// storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn spray_distance_matrix_compute(
    maps: *const f64,
    n: usize,
    h: usize,
    w: usize,
    metric: SprayMetric,
    out: *mut *mut SprayDistanceMatrix,
) -> SprayStatus {
    guard(|| {
        if maps.is_null() {
            return Err(null("maps"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n.checked_mul(h).and_then(|v| v.checked_mul(w)).ok_or((
            SprayStatus::InvalidArgument,
            "n * h * w overflows".to_string(),
        ))?;
        // SAFETY: the caller guarantees `len` readable values.
        let data = unsafe { std::slice::from_raw_parts(maps, len) };
        let list = core(
            (0..n)
                .map(|i| Ok(AttributionMap::new(h, w, data[i * h * w..(i + 1) * h * w].to_vec())?.with_sample_id(i as u64)))
                .collect::<spray_core::Result<Vec<_>>>(),
        )?;
        let d = core(pairwise_distance_matrix(&list, metric.into(), &DistanceParams::default()))?;
        // SAFETY: `out` checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(SprayDistanceMatrix(d))) };
        Ok(())
    })
}

/// # Safety
/// `dm` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn spray_distance_matrix_n(dm: *const SprayDistanceMatrix) -> usize {
    // SAFETY: the caller passes null or a live handle.
    unsafe { dm.as_ref() }.map_or(0, |d| d.0.n())
}

/// # Safety
/// `dm` must be a handle from this library and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn spray_distance_matrix_get(
    dm: *const SprayDistanceMatrix,
    i: usize,
    j: usize,
    value: *mut f64,
) -> SprayStatus {
    guard(|| {
        // SAFETY: the caller passes null or a live handle.
        let d = unsafe { dm.as_ref() }.ok_or_else(|| null("dm"))?;
        if value.is_null() {
            return Err(null("value"));
        }
        let n = d.0.n();
        if i >= n || j >= n {
            return Err((SprayStatus::InvalidArgument, format!("index ({i}, {j}) outside {n} x {n}")));
        }
        // SAFETY: checked non-null above.
        unsafe { *value = d.0.get(i, j) };
        Ok(())
    })
}

/// # Safety
/// `dm` must be null or a handle from this library that is not used again.
#[no_mangle]
pub unsafe extern "C" fn spray_distance_matrix_free(dm: *mut SprayDistanceMatrix) {
    if !dm.is_null() {
        // SAFETY: the handle came from `Box::into_raw`.
        drop(unsafe { Box::from_raw(dm) });
    }
}

/// KNN graph with `knn_k` neighbors, normalized Laplacian and its `q`
/// smallest eigenpairs.
///
/// # Safety
/// `dm` must be a handle from this library and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spray_embedding_compute(
    dm: *const SprayDistanceMatrix,
    knn_k: usize,
    q: usize,
    seed: u64,
    out: *mut *mut SprayEmbedding,
) -> SprayStatus {
    guard(|| {
        // SAFETY: the caller passes null or a live handle.
        let d = unsafe { dm.as_ref() }.ok_or_else(|| null("dm"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let g = core(knn_affinity(&d.0, knn_k))?;
        let l = core(laplacians(&g))?;
        let e = core(lanczos_eigs(&l.l_sym, q, &LanczosParams { seed, ..LanczosParams::default() }))?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(SprayEmbedding(e))) };
        Ok(())
    })
}

/// Number of samples (rows) in the embedding, 0 for null.
///
/// # Safety
/// `emb` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn spray_embedding_n(emb: *const SprayEmbedding) -> usize {
    // SAFETY: the caller passes null or a live handle.
    unsafe { emb.as_ref() }.map_or(0, |e| e.0.n)
}

/// Number of eigenpairs, 0 for null.
///
/// # Safety
/// `emb` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn spray_embedding_q(emb: *const SprayEmbedding) -> usize {
    // SAFETY: the caller passes null or a live handle.
    unsafe { emb.as_ref() }.map_or(0, |e| e.0.q)
}

/// Copies the ascending eigenvalues into `buf`, which must hold `len >= q`.
///
/// # Safety
/// `emb` must be a handle from this library and `buf` writable for `len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn spray_embedding_eigenvalues(emb: *const SprayEmbedding, buf: *mut f64, len: usize) -> SprayStatus {
    guard(|| {
        // SAFETY: the caller passes null or a live handle.
        let e = unsafe { emb.as_ref() }.ok_or_else(|| null("emb"))?;
        copy_out(&e.0.eigenvalues, buf, len)
    })
}

/// Copies row `i` of Φ into `buf`, which must hold `len >= q`.
///
/// # Safety
/// `emb` must be a handle from this library and `buf` writable for `len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn spray_embedding_row(
    emb: *const SprayEmbedding,
    i: usize,
    buf: *mut f64,
    len: usize,
) -> SprayStatus {
    guard(|| {
        // SAFETY: the caller passes null or a live handle.
        let e = unsafe { emb.as_ref() }.ok_or_else(|| null("emb"))?;
        if i >= e.0.n {
            return Err((SprayStatus::InvalidArgument, format!("row {i} outside {} samples", e.0.n)));
        }
        copy_out(e.0.row(i), buf, len)
    })
}

fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), (SprayStatus, String)> {
    if buf.is_null() {
        return Err(null("buf"));
    }
    if len < src.len() {
        return Err((SprayStatus::InvalidArgument, format!("buffer holds {len} values, need {}", src.len())));
    }
    // SAFETY: `buf` is non-null and the caller guarantees `len >= src.len()` writable slots.
    unsafe { ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len()) };
    Ok(())
}

/// Index before the largest gap among the first `max_k + 1` eigenvalues.
///
/// # Safety
/// `eigenvalues` must point to `len` readable doubles and `k` be writable.
#[no_mangle]
pub unsafe extern "C" fn spray_eigengap_estimate(
    eigenvalues: *const f64,
    len: usize,
    max_k: usize,
    k: *mut usize,
) -> SprayStatus {
    guard(|| {
        if eigenvalues.is_null() {
            return Err(null("eigenvalues"));
        }
        if k.is_null() {
            return Err(null("k"));
        }
        // SAFETY: the caller guarantees `len` readable values.
        let eig = unsafe { std::slice::from_raw_parts(eigenvalues, len) };
        // SAFETY: checked non-null above.
        unsafe { *k = eigengap_estimate(eig, max_k) };
        Ok(())
    })
}

/// Separability score τ of the embedding rows over `k_min..=k_max` clusters.
///
/// # Safety
/// `emb` must be a handle from this library and `tau` writable.
#[no_mangle]
pub unsafe extern "C" fn spray_tau_score(
    emb: *const SprayEmbedding,
    k_min: usize,
    k_max: usize,
    seed: u64,
    tau: *mut f64,
) -> SprayStatus {
    guard(|| {
        // SAFETY: the caller passes null or a live handle.
        let e = unsafe { emb.as_ref() }.ok_or_else(|| null("emb"))?;
        if tau.is_null() {
            return Err(null("tau"));
        }
        let params = TauParams { k_min, k_max, seed, ..TauParams::default() };
        let rep = core(tau_score(0, &e.0.rows(), &params))?;
        // SAFETY: checked non-null above.
        unsafe { *tau = rep.tau };
        Ok(())
    })
}

/// # Safety
/// `emb` must be null or a handle from this library that is not used again.
#[no_mangle]
pub unsafe extern "C" fn spray_embedding_free(emb: *mut SprayEmbedding) {
    if !emb.is_null() {
        // SAFETY: the handle came from `Box::into_raw`.
        drop(unsafe { Box::from_raw(emb) });
    }
}
