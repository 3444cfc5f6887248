//! C interface to the attlab estimators.
//!
//! Tables are opaque handles created by `attlab_table_*` and released with
//! [`attlab_table_free`]. Every fallible call returns an [`AttlabStatus`];
//! on failure, [`attlab_last_error`] describes the most recent error on the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use attlab::dataset::{compose_sample, load_table, CovariateSchema, ObservationTable, SourceTag};
use attlab::estimators::{estimate, EstimatorOptions, EstimatorTag};
use attlab::forest::ForestParams;
use attlab::heterogeneity::estimate_catt;
use attlab::{Error, ErrorKind};
use nalgebra::DMatrix;

/// Result of a call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    NumericalError = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Covariate layout of the input files.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttlabSchema {
    Ldw = 0,
    LalondeOriginal = 1,
}

/// Opaque sample handle.
pub struct AttlabTable {
    inner: ObservationTable,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttlabOptions {
    pub seed: u64,
    pub trees: usize,
    pub dml_folds: usize,
    pub match_k: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AttlabEstimate {
    pub point: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_treated: usize,
    pub n_control: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> AttlabStatus {
    match e.kind() {
        ErrorKind::Usage => AttlabStatus::InvalidArgument,
        ErrorKind::Data => AttlabStatus::DataError,
        ErrorKind::Numerical => AttlabStatus::NumericalError,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (AttlabStatus, String)>) -> AttlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AttlabStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AttlabStatus::Panic
        }
    }
}

fn lib(e: Error) -> (AttlabStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (AttlabStatus, String) {
    (AttlabStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (AttlabStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (AttlabStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

impl AttlabOptions {
    fn to_options(self) -> EstimatorOptions {
        EstimatorOptions {
            seed: self.seed,
            forest: ForestParams {
                trees: self.trees,
                seed: self.seed,
                ..ForestParams::default()
            },
            dml_folds: self.dml_folds,
            match_k: self.match_k,
            ..EstimatorOptions::default()
        }
    }
}

/// Library defaults with seed 0.
#[no_mangle]
pub extern "C" fn attlab_options_default() -> AttlabOptions {
    let d = EstimatorOptions::default();
    AttlabOptions {
        seed: 0,
        trees: d.forest.trees,
        dml_folds: d.dml_folds,
        match_k: d.match_k,
    }
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn attlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn attlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a treated file and a control file and stacks them into one sample.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn attlab_table_load(
    treated_path: *const c_char,
    controls_path: *const c_char,
    schema: AttlabSchema,
    out: *mut *mut AttlabTable,
) -> AttlabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let t = str_arg(treated_path, "treated_path")?;
        let c = str_arg(controls_path, "controls_path")?;
        let schema = match schema {
            AttlabSchema::Ldw => CovariateSchema::ldw(),
            AttlabSchema::LalondeOriginal => CovariateSchema::lalonde_original(),
        };
        let treated = load_table(Path::new(t), &schema, SourceTag::ExperimentalTreated).map_err(lib)?;
        let controls = load_table(Path::new(c), &schema, SourceTag::External).map_err(lib)?;
        let inner = compose_sample(&treated, &controls).map_err(lib)?;
        *out = Box::into_raw(Box::new(AttlabTable { inner }));
        Ok(())
    })
}

/// Builds a sample from row-major covariates `x` (`n * p`), 0/1 treatment
/// `w` and outcome `y`. Covariates are named `x0`, `x1`, ...
///
/// # Safety
/// `x` must hold `n * p` values, `w` and `y` must hold `n`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn attlab_table_from_arrays(
    n: usize,
    p: usize,
    x: *const f64,
    w: *const u8,
    y: *const f64,
    out: *mut *mut AttlabTable,
) -> AttlabStatus {
    guard(|| {
        if out.is_null() || w.is_null() || y.is_null() || (x.is_null() && n * p > 0) {
            return Err(null("an input array"));
        }
        let xs = if n * p == 0 { &[][..] } else { std::slice::from_raw_parts(x, n * p) };
        let m = DMatrix::from_row_slice(n, p, xs);
        let w = std::slice::from_raw_parts(w, n).to_vec();
        let y = std::slice::from_raw_parts(y, n).to_vec();
        let names = (0..p).map(|j| format!("x{j}")).collect();
        let inner = ObservationTable::from_parts(names, m, w, y).map_err(lib)?;
        *out = Box::into_raw(Box::new(AttlabTable { inner }));
        Ok(())
    })
}

/// Releases a table. Null is ignored.
///
/// # Safety
/// `table` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn attlab_table_free(table: *mut AttlabTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Row, treated and covariate counts.
///
/// # Safety
/// `table` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn attlab_table_dims(
    table: *const AttlabTable,
    n: *mut usize,
    n_treated: *mut usize,
    p: *mut usize,
) -> AttlabStatus {
    guard(|| {
        let t = table.as_ref().ok_or_else(|| null("table"))?;
        if n.is_null() || n_treated.is_null() || p.is_null() {
            return Err(null("an output"));
        }
        *n = t.inner.n();
        *n_treated = t.inner.n_treated();
        *p = t.inner.p();
        Ok(())
    })
}

/// Runs one estimator, named by its tag (`diff_in_means`, `aipw`, ...).
///
/// # Safety
/// `table` must be a live handle, `estimator` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn attlab_estimate(
    table: *const AttlabTable,
    estimator: *const c_char,
    options: AttlabOptions,
    out: *mut AttlabEstimate,
) -> AttlabStatus {
    guard(|| {
        let t = table.as_ref().ok_or_else(|| null("table"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let tag: EstimatorTag = str_arg(estimator, "estimator")?.parse().map_err(lib)?;
        let e = estimate(&t.inner, tag, &options.to_options()).map_err(lib)?;
        *out = AttlabEstimate {
            point: e.point,
            se: e.se,
            ci_lo: e.ci95.0,
            ci_hi: e.ci95.1,
            n_treated: e.n_treated,
            n_control: e.n_control,
        };
        Ok(())
    })
}

/// Causal-forest CATT at each treated unit, in row order. Writes the count
/// to `len`; returns `BufferTooSmall` if `capacity` is short.
///
/// # Safety
/// `table` must be a live handle; `values` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn attlab_catt(
    table: *const AttlabTable,
    options: AttlabOptions,
    values: *mut f64,
    capacity: usize,
    len: *mut usize,
) -> AttlabStatus {
    guard(|| {
        let t = table.as_ref().ok_or_else(|| null("table"))?;
        let len = len.as_mut().ok_or_else(|| null("len"))?;
        let needed = t.inner.n_treated();
        *len = needed;
        if capacity < needed {
            return Err((AttlabStatus::BufferTooSmall, format!("need room for {needed} values")));
        }
        if values.is_null() {
            return Err(null("values"));
        }
        let params = options.to_options().forest;
        let profile = estimate_catt(&t.inner, &params, "ffi").map_err(lib)?;
        let dst = std::slice::from_raw_parts_mut(values, needed);
        for (d, e) in dst.iter_mut().zip(&profile.entries) {
            *d = e.catt;
        }
        Ok(())
    })
}
