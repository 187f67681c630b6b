//! C interface to the nsf-plate library.
//!
//! Handles are opaque and owned by the caller; every `*_parse`, `*_run` and
//! `*_assemble` result must be released with the matching `*_free`. Functions
//! return an [`NsfpStatus`]; on failure the message is available from
//! [`nsfp_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nsf_plate::cli_io::{parse_config, run_scenario, RunConfig, RunReport};
use nsf_plate::fs_operator::{assemble_afs, max_real, spectrum, Domain, OperatorMatrix};
use nsf_plate::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NsfpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Numerical = 4,
    Geometry = 5,
    BufferTooSmall = 6,
    NotFound = 7,
    Panic = 8,
}

/// Parsed and validated run configuration.
pub struct NsfpConfig(RunConfig);

/// Report of a completed run.
pub struct NsfpReport(RunReport);

/// Assembled linearized fluid-structure operator.
pub struct NsfpOperator(OperatorMatrix);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> NsfpStatus {
    match e.exit_code() {
        2 => NsfpStatus::Config,
        4 => NsfpStatus::Geometry,
        _ => NsfpStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (NsfpStatus, String)>) -> NsfpStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NsfpStatus::Ok,
        Ok(Err((s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic");
            NsfpStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (NsfpStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (NsfpStatus, String)> {
    if p.is_null() {
        return Err((NsfpStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (NsfpStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn null(what: &str) -> (NsfpStatus, String) {
    (NsfpStatus::NullPointer, format!("{what} is null"))
}

/// Copies `s` with a terminating NUL; `needed` (optional) receives the byte
/// count including the NUL.
unsafe fn copy_out(s: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), (NsfpStatus, String)> {
    let n = s.len() + 1;
    if !needed.is_null() {
        *needed = n;
    }
    if buf.is_null() || len < n {
        return Err((NsfpStatus::BufferTooSmall, format!("buffer of {len} bytes, {n} needed")));
    }
    ptr::copy_nonoverlapping(s.as_ptr() as *const c_char, buf, s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nsfp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Last error message of this thread, or null. Valid until the next call
/// into the library on the same thread.
#[no_mangle]
pub extern "C" fn nsfp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses a TOML configuration document.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nsfp_config_parse(text: *const c_char, out: *mut *mut NsfpConfig) -> NsfpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let t = str_arg(text, "text")?;
        let cfg = parse_config(t).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(NsfpConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from [`nsfp_config_parse`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn nsfp_config_free(cfg: *mut NsfpConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the configuration, writing artifacts under `out_dir`. A report is
/// produced even when the run fails; its exit code tells the outcome.
///
/// # Safety
/// `cfg` must be a live handle, `out_dir` a NUL-terminated path, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nsfp_run(cfg: *const NsfpConfig, out_dir: *const c_char, out: *mut *mut NsfpReport) -> NsfpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let dir = str_arg(out_dir, "out_dir")?;
        let rep = run_scenario(&cfg.0, Path::new(dir), "ffi");
        let err = rep.error.clone();
        *out = Box::into_raw(Box::new(NsfpReport(rep)));
        if let Some(e) = err {
            set_error(e);
        }
        Ok(())
    })
}

/// Process-style exit code of the run (0 pass, 2 validation, 3 numerical,
/// 4 geometry); -1 for a null handle.
///
/// # Safety
/// `rep` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nsfp_report_exit_code(rep: *const NsfpReport) -> i32 {
    rep.as_ref().map_or(-1, |r| r.0.exit_code)
}

/// Copies the rendered report text.
///
/// # Safety
/// `rep` must be a live handle; `buf` must hold `len` bytes or be null;
/// `needed` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn nsfp_report_text(rep: *const NsfpReport, buf: *mut c_char, len: usize, needed: *mut usize) -> NsfpStatus {
    guard(|| {
        let r = rep.as_ref().ok_or_else(|| null("rep"))?;
        copy_out(&r.0.render(), buf, len, needed)
    })
}

/// Copies the value of the named check line.
///
/// # Safety
/// As for [`nsfp_report_text`]; `name` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nsfp_report_value(
    rep: *const NsfpReport,
    name: *const c_char,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> NsfpStatus {
    guard(|| {
        let r = rep.as_ref().ok_or_else(|| null("rep"))?;
        let n = str_arg(name, "name")?;
        let line = r.0.get(n).ok_or_else(|| (NsfpStatus::NotFound, format!("no report line named '{n}'")))?;
        copy_out(&line.value, buf, len, needed)
    })
}

/// # Safety
/// `rep` must come from [`nsfp_run`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn nsfp_report_free(rep: *mut NsfpReport) {
    if !rep.is_null() {
        drop(Box::from_raw(rep));
    }
}

/// Assembles the linearized operator for the configured grid and parameters.
///
/// # Safety
/// `cfg` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nsfp_operator_assemble(cfg: *const NsfpConfig, out: *mut *mut NsfpOperator) -> NsfpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let op = assemble_afs(&cfg.0.grid, &cfg.0.params).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(NsfpOperator(op)));
        Ok(())
    })
}

/// Stacked dimension; 0 for a null handle.
///
/// # Safety
/// `op` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nsfp_operator_dim(op: *const NsfpOperator) -> usize {
    op.as_ref().map_or(0, |o| o.0.dim())
}

/// `y = A x` with `x`, `y` of length `n` (the operator dimension).
///
/// # Safety
/// `x` and `y` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn nsfp_operator_apply(op: *const NsfpOperator, x: *const f64, y: *mut f64, n: usize) -> NsfpStatus {
    guard(|| {
        let o = op.as_ref().ok_or_else(|| null("op"))?;
        if x.is_null() || y.is_null() {
            return Err(null("x or y"));
        }
        if n != o.0.dim() {
            return Err((NsfpStatus::Config, format!("length {n} does not match dimension {}", o.0.dim())));
        }
        let xs = std::slice::from_raw_parts(x, n);
        let r = o.0.apply(xs);
        std::slice::from_raw_parts_mut(y, n).copy_from_slice(&r);
        Ok(())
    })
}

/// Largest real part of the spectrum on the conserved subspace.
///
/// # Safety
/// `op` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nsfp_operator_spectrum_max_re(op: *const NsfpOperator, out: *mut f64) -> NsfpStatus {
    guard(|| {
        let o = op.as_ref().ok_or_else(|| null("op"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let ev = spectrum(&o.0, Domain::Xm).map_err(lib_err)?;
        *out = max_real(&ev);
        Ok(())
    })
}

/// # Safety
/// `op` must come from [`nsfp_operator_assemble`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn nsfp_operator_free(op: *mut NsfpOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}
