//! C ABI over `ldtcast`: trained-model handles for embedding and
//! forecasting, plus the clustering and agreement metrics.
//!
//! Every fallible function returns an [`LdtStatus`]; on failure the message
//! is available from [`ldt_last_error`] on the same thread. Arrays are
//! passed as pointer + length and are never retained.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use ldtcast::data::repair_monotone;
use ldtcast::embedding::{kmeans, kmedoids, ClusterModel, ClusterOptions};
use ldtcast::metrics::{adjusted_rand_index, permutation_accuracy, ConfusionMatrix};
use ldtcast::model::{EmbedMode, EmbedSource, LstmModel};
use ldtcast::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LdtStatus {
    Ok = 0,
    /// A required pointer was null.
    NullArgument = 1,
    /// Invalid option or argument value.
    InvalidArgument = 2,
    /// Array lengths disagree with the model or with each other.
    Shape = 3,
    /// Input data was unusable.
    Data = 4,
    /// File could not be read or parsed.
    Io = 5,
    /// Numerical failure in the model.
    Numeric = 6,
    /// A Rust panic was caught at the boundary.
    Internal = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LdtEmbedMode {
    Last = 0,
    All = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LdtEmbedSource {
    H = 0,
    Sc = 1,
    HSc = 2,
}

impl From<LdtEmbedMode> for EmbedMode {
    fn from(m: LdtEmbedMode) -> Self {
        match m {
            LdtEmbedMode::Last => EmbedMode::Last,
            LdtEmbedMode::All => EmbedMode::All,
        }
    }
}

impl From<LdtEmbedSource> for EmbedSource {
    fn from(s: LdtEmbedSource) -> Self {
        match s {
            LdtEmbedSource::H => EmbedSource::H,
            LdtEmbedSource::Sc => EmbedSource::Sc,
            LdtEmbedSource::HSc => EmbedSource::HSc,
        }
    }
}

/// Opaque trained model.
pub struct LdtModel {
    inner: LstmModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LdtStatus {
    match e {
        Error::Config(_) | Error::Usage(_) => LdtStatus::InvalidArgument,
        Error::Shape(_) => LdtStatus::Shape,
        Error::Data(_) | Error::Input(_) | Error::Join { .. } | Error::Alignment(_) | Error::Schema { .. } => {
            LdtStatus::Data
        }
        Error::Io { .. } | Error::Json(_) | Error::Csv(_) => LdtStatus::Io,
        Error::Training(_) => LdtStatus::Numeric,
        Error::Stage { source, .. } => status_of(source),
    }
}

struct Fail(LdtStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LdtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LdtStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            LdtStatus::Internal
        }
    }
}

fn null(name: &str) -> Fail {
    Fail(LdtStatus::NullArgument, format!("{name} is null"))
}

/// # Safety
/// `ptr` must be null or point to `len` readable values.
unsafe fn input<'a, T>(ptr: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or point to `len` writable values.
unsafe fn output<'a, T>(ptr: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts_mut(ptr, len))
}

fn write_out<T>(ptr: *mut T, value: T, name: &str) -> Result<(), Fail> {
    if ptr.is_null() {
        return Err(null(name));
    }
    // SAFETY: non-null; the caller promises a valid, writable location.
    unsafe { ptr.write(value) };
    Ok(())
}

fn model_ref<'a>(m: *const LdtModel) -> Result<&'a LdtModel, Fail> {
    // SAFETY: handles come from `ldt_model_load` and are freed only by
    // `ldt_model_free`.
    unsafe { m.as_ref() }.ok_or_else(|| null("model"))
}

/// Version string of the library; static storage.
#[no_mangle]
pub extern "C" fn ldt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ldt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Loads a model checkpoint (`model.json`) into a new handle.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ldt_model_load(path: *const c_char, out: *mut *mut LdtModel) -> LdtStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(LdtStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let inner = LstmModel::load(Path::new(path))?;
        out.write(Box::into_raw(Box::new(LdtModel { inner })));
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `model` must come from `ldt_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ldt_model_free(model: *mut LdtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Shape of a loaded model. Any output pointer may be null.
///
/// # Safety
/// Non-null output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn ldt_model_info(
    model: *const LdtModel,
    hidden_size: *mut usize,
    num_layers: *mut usize,
    static_dim: *mut usize,
    window_len: *mut usize,
) -> LdtStatus {
    guard(|| {
        let m = &model_ref(model)?.inner;
        for (ptr, v) in [
            (hidden_size, m.config.hidden_size),
            (num_layers, m.config.num_layers),
            (static_dim, m.config.static_dim),
            (window_len, m.window.window_len),
        ] {
            if !ptr.is_null() {
                ptr.write(v);
            }
        }
        Ok(())
    })
}

/// Number of values written by `ldt_model_embed` for this mode and source.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ldt_model_embedding_len(
    model: *const LdtModel,
    mode: LdtEmbedMode,
    source: LdtEmbedSource,
    out: *mut usize,
) -> LdtStatus {
    guard(|| {
        let m = &model_ref(model)?.inner;
        write_out(out, m.embedding_len(mode.into(), source.into()), "out")
    })
}

fn days(infections: &[f64], deaths: &[f64]) -> Result<Vec<Vec<f64>>, Fail> {
    if infections.len() != deaths.len() {
        return Err(Fail(LdtStatus::Shape, "infections and deaths differ in length".into()));
    }
    if infections.is_empty() {
        return Err(Fail(LdtStatus::Data, "empty series".into()));
    }
    Ok(infections.iter().zip(deaths).map(|(&i, &d)| vec![i, d]).collect())
}

/// Embedding of the first `pit` days of a series. `out_len` must equal
/// `ldt_model_embedding_len`.
///
/// # Safety
/// Input arrays must hold `len` (`static_len`) values; `out` must hold
/// `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn ldt_model_embed(
    model: *const LdtModel,
    infections: *const f64,
    deaths: *const f64,
    len: usize,
    statics: *const f64,
    static_len: usize,
    pit: usize,
    mode: LdtEmbedMode,
    source: LdtEmbedSource,
    out: *mut f64,
    out_len: usize,
) -> LdtStatus {
    guard(|| {
        let m = &model_ref(model)?.inner;
        let series = days(input(infections, len, "infections")?, input(deaths, len, "deaths")?)?;
        let statics = input(statics, static_len, "statics")?;
        if pit == 0 || pit > len {
            return Err(Fail(LdtStatus::InvalidArgument, format!("pit {pit} outside 1..={len}")));
        }
        let need = m.embedding_len(mode.into(), source.into());
        if out_len != need {
            return Err(Fail(LdtStatus::Shape, format!("out_len {out_len}, embedding has {need} values")));
        }
        let v = m.embed(&series[..pit], statics, mode.into(), source.into())?;
        output(out, out_len, "out")?.copy_from_slice(&v);
        Ok(())
    })
}

/// Recursive forecast of `horizon` days past the end of the series.
///
/// # Safety
/// Input arrays must hold `len` (`static_len`) values; each output array
/// must hold `horizon` writable values.
#[no_mangle]
pub unsafe extern "C" fn ldt_model_forecast(
    model: *const LdtModel,
    infections: *const f64,
    deaths: *const f64,
    len: usize,
    statics: *const f64,
    static_len: usize,
    horizon: usize,
    out_infections: *mut f64,
    out_deaths: *mut f64,
) -> LdtStatus {
    guard(|| {
        let m = &model_ref(model)?.inner;
        let series = days(input(infections, len, "infections")?, input(deaths, len, "deaths")?)?;
        let statics = input(statics, static_len, "statics")?;
        let out_i = output(out_infections, horizon, "out_infections")?;
        let out_d = output(out_deaths, horizon, "out_deaths")?;
        let f = m.rollout(&series, statics, horizon)?;
        for (t, day) in f.iter().enumerate() {
            out_i[t] = day[0];
            out_d[t] = day[1];
        }
        Ok(())
    })
}

/// Adjusted Rand index of two label vectors of length `n`.
///
/// # Safety
/// `a` and `b` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ldt_adjusted_rand_index(a: *const usize, b: *const usize, n: usize, out: *mut f64) -> LdtStatus {
    guard(|| {
        let v = adjusted_rand_index(input(a, n, "a")?, input(b, n, "b")?)?;
        write_out(out, v, "out")
    })
}

/// Best diagonal fraction over relabelings of a row-major `k x k`
/// confusion matrix.
///
/// # Safety
/// `counts` must hold `k * k` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ldt_permutation_accuracy(counts: *const u64, k: usize, out: *mut f64) -> LdtStatus {
    guard(|| {
        let cells = k
            .checked_mul(k)
            .ok_or_else(|| Fail(LdtStatus::InvalidArgument, "k too large".into()))?;
        let flat = input(counts, cells, "counts")?;
        let rows: Vec<Vec<u64>> = flat.chunks(k.max(1)).map(<[u64]>::to_vec).collect();
        let (acc, _) = permutation_accuracy(&ConfusionMatrix::from_counts(rows)?)?;
        write_out(out, acc, "out")
    })
}

/// Running maximum of a cumulative series; `out` may alias `series`.
///
/// # Safety
/// `series` and `out` must each hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn ldt_repair_monotone(series: *const f64, n: usize, out: *mut f64) -> LdtStatus {
    guard(|| {
        let repaired = repair_monotone(input(series, n, "series")?);
        output(out, n, "out")?.copy_from_slice(&repaired);
        Ok(())
    })
}

type ClusterFn = fn(&[Vec<f64>], usize, &ClusterOptions) -> ldtcast::Result<ClusterModel>;

unsafe fn cluster_with(
    f: ClusterFn,
    points: *const f64,
    n: usize,
    dim: usize,
    k: usize,
    restarts: usize,
    seed: u64,
    labels: *mut usize,
    inertia: *mut f64,
) -> LdtStatus {
    guard(|| {
        if dim == 0 {
            return Err(Fail(LdtStatus::InvalidArgument, "dim must be positive".into()));
        }
        let cells = n
            .checked_mul(dim)
            .ok_or_else(|| Fail(LdtStatus::InvalidArgument, "n * dim overflows".into()))?;
        let flat = input(points, cells, "points")?;
        let rows: Vec<Vec<f64>> = flat.chunks(dim).map(<[f64]>::to_vec).collect();
        let opts = ClusterOptions {
            restarts,
            seed,
            ..ClusterOptions::default()
        };
        let model = f(&rows, k, &opts)?;
        output(labels, n, "labels")?.copy_from_slice(&model.labels);
        if !inertia.is_null() {
            inertia.write(model.inertia);
        }
        Ok(())
    })
}

/// k-means with k-means++ seeding over `restarts` runs on row-major
/// `n x dim` points. `inertia` may be null.
///
/// # Safety
/// `points` must hold `n * dim` values and `labels` `n` writable values.
#[no_mangle]
pub unsafe extern "C" fn ldt_kmeans(
    points: *const f64,
    n: usize,
    dim: usize,
    k: usize,
    restarts: usize,
    seed: u64,
    labels: *mut usize,
    inertia: *mut f64,
) -> LdtStatus {
    cluster_with(kmeans, points, n, dim, k, restarts, seed, labels, inertia)
}

/// k-medoids (PAM) on row-major `n x dim` points. `inertia` may be null.
///
/// # Safety
/// `points` must hold `n * dim` values and `labels` `n` writable values.
#[no_mangle]
pub unsafe extern "C" fn ldt_kmedoids(
    points: *const f64,
    n: usize,
    dim: usize,
    k: usize,
    restarts: usize,
    seed: u64,
    labels: *mut usize,
    inertia: *mut f64,
) -> LdtStatus {
    cluster_with(kmedoids, points, n, dim, k, restarts, seed, labels, inertia)
}
