//! C interface to the oustab solver.
//!
//! Every entry point returns an [`OustabStatus`]; on failure the message is
//! retrievable with [`oustab_last_error_message`]. Handles and strings
//! returned through out-parameters are owned by the caller and must be
//! released with the matching `_free` function. Rust panics are caught at
//! the boundary and reported as `OustabStatus_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DVector;
use oustab::harness::{self, experiments, Config};
use oustab::Error;

/// Outcome of a library call. Zero is success; anything else leaves a
/// description in `oustab_last_error_message`.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum OustabStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The configuration text was malformed or inconsistent.
    Config = 3,
    /// Input violated a structural precondition of the solver.
    Validation = 4,
    /// A numerical routine failed.
    Numerical = 5,
    /// The request is well-formed but outside what this build implements.
    Unsupported = 6,
    Io = 7,
    /// A panic was caught at the language boundary.
    Panic = 8,
}

/// Parsed problem description. Create with `oustab_problem_parse`, release
/// with `oustab_problem_free`.
pub struct OustabProblem {
    config: Config,
}

/// One Monte Carlo estimate. `value` is bounded by `sup_bound` pathwise,
/// so `|value| <= sup_bound` holds by construction, not just in the limit.
#[repr(C)]
pub struct OustabEstimate {
    pub value: f64,
    pub std_error: f64,
    pub sup_bound: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    // Interior NULs would truncate the C string; blank them instead.
    let bytes: Vec<u8> = msg
        .into_bytes()
        .into_iter()
        .map(|b| if b == 0 { b' ' } else { b })
        .collect();
    let c = CString::new(bytes).unwrap();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn fail(status: OustabStatus, msg: impl Into<String>) -> OustabStatus {
    set_error(msg.into());
    status
}

fn fail_with(err: &Error) -> OustabStatus {
    let status = match err {
        Error::Validation(_) => OustabStatus::Validation,
        Error::Config(_) => OustabStatus::Config,
        Error::Numerical(_) => OustabStatus::Numerical,
        Error::Unsupported(_) => OustabStatus::Unsupported,
        Error::Io(_) => OustabStatus::Io,
    };
    fail(status, err.to_string())
}

/// Runs an entry-point body, converting a panic into a status code so the
/// unwind never crosses the C boundary.
fn shielded(f: impl FnOnce() -> OustabStatus) -> OustabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in library call".to_string());
            fail(OustabStatus::Panic, msg)
        }
    }
}

/// Moves a Rust string to the caller. Release with `oustab_string_free`.
unsafe fn export_string(s: String, out: *mut *mut c_char) -> OustabStatus {
    let bytes: Vec<u8> = s
        .into_bytes()
        .into_iter()
        .map(|b| if b == 0 { b' ' } else { b })
        .collect();
    *out = CString::new(bytes).unwrap().into_raw();
    OustabStatus::Ok
}

/// Library version as a static NUL-terminated string. Never null; do not
/// free.
#[no_mangle]
pub extern "C" fn oustab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn oustab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Releases a string returned through an out-parameter. Null is a no-op.
///
/// # Safety
/// `s` must have come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn oustab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a TOML problem description into a handle.
///
/// # Safety
/// `toml_text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oustab_problem_parse(
    toml_text: *const c_char,
    out: *mut *mut OustabProblem,
) -> OustabStatus {
    shielded(|| {
        if toml_text.is_null() || out.is_null() {
            return fail(OustabStatus::NullArgument, "null pointer argument");
        }
        unsafe { *out = ptr::null_mut() };
        let text = match unsafe { CStr::from_ptr(toml_text) }.to_str() {
            Ok(t) => t,
            Err(_) => return fail(OustabStatus::InvalidUtf8, "config text is not UTF-8"),
        };
        match Config::from_toml_str(text) {
            Ok(config) => {
                unsafe { *out = Box::into_raw(Box::new(OustabProblem { config })) };
                OustabStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Releases a problem handle. Null is a no-op.
///
/// # Safety
/// `problem` must have come from `oustab_problem_parse` and not have been
/// freed already.
#[no_mangle]
pub unsafe extern "C" fn oustab_problem_free(problem: *mut OustabProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Space dimension of the operator behind the handle.
///
/// # Safety
/// `problem` must be a live handle; `out_dim` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oustab_problem_dim(
    problem: *const OustabProblem,
    out_dim: *mut usize,
) -> OustabStatus {
    shielded(|| {
        if problem.is_null() || out_dim.is_null() {
            return fail(OustabStatus::NullArgument, "null pointer argument");
        }
        unsafe { *out_dim = (*problem).config.dim() };
        OustabStatus::Ok
    })
}

/// Block structure and driver diagnostics as a JSON document.
///
/// # Safety
/// `problem` must be a live handle; `out_json` must be writable. The
/// returned string is released with `oustab_string_free`.
#[no_mangle]
pub unsafe extern "C" fn oustab_analyze_json(
    problem: *const OustabProblem,
    out_json: *mut *mut c_char,
) -> OustabStatus {
    shielded(|| {
        if problem.is_null() || out_json.is_null() {
            return fail(OustabStatus::NullArgument, "null pointer argument");
        }
        let analysis = match harness::analyze(unsafe { &(*problem).config }) {
            Ok(a) => a,
            Err(e) => return fail_with(&e),
        };
        match serde_json::to_string_pretty(&analysis) {
            Ok(json) => unsafe { export_string(json, out_json) },
            Err(e) => fail(OustabStatus::Numerical, format!("cannot render analysis: {e}")),
        }
    })
}

/// Estimates the solution at one space-time point. On scheduled problems a
/// positive `epsilon` sets the jump size; zero or negative selects the
/// smallest configured one. Unscheduled problems ignore it.
///
/// # Safety
/// `problem` must be a live handle, `x` must point to `dim` doubles, and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oustab_solve(
    problem: *const OustabProblem,
    t: f64,
    x: *const f64,
    dim: usize,
    epsilon: f64,
    out: *mut OustabEstimate,
) -> OustabStatus {
    shielded(|| {
        if problem.is_null() || x.is_null() || out.is_null() {
            return fail(OustabStatus::NullArgument, "null pointer argument");
        }
        let config = unsafe { &(*problem).config };
        let point = DVector::from_column_slice(unsafe { std::slice::from_raw_parts(x, dim) });
        let eps = (epsilon > 0.0).then_some(epsilon);
        match experiments::solve_point(config, None, eps, t, &point) {
            Ok(est) => {
                unsafe {
                    *out = OustabEstimate {
                        value: est.value,
                        std_error: est.std_error,
                        sup_bound: est.sup_bound,
                    };
                }
                OustabStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Available experiment names with one-line descriptions, one per line,
/// tab-separated.
///
/// # Safety
/// `out_text` must be writable. The returned string is released with
/// `oustab_string_free`.
#[no_mangle]
pub unsafe extern "C" fn oustab_experiment_list(out_text: *mut *mut c_char) -> OustabStatus {
    shielded(|| {
        if out_text.is_null() {
            return fail(OustabStatus::NullArgument, "null pointer argument");
        }
        let mut text = String::new();
        for (name, what) in harness::EXPERIMENTS {
            text.push_str(name);
            text.push('\t');
            text.push_str(what);
            text.push('\n');
        }
        unsafe { export_string(text, out_text) }
    })
}

/// Runs one named verification experiment against the handle's problem.
/// `out_passed` receives the verdict; `out_summary` (optional, may be null)
/// a one-line account; `out_report_csv` (optional, may be null) the
/// measurement rows as CSV.
///
/// # Safety
/// `problem` must be a live handle, `name` a NUL-terminated string, and
/// every non-null out-pointer writable. Returned strings are released with
/// `oustab_string_free`.
#[no_mangle]
pub unsafe extern "C" fn oustab_run_experiment(
    problem: *const OustabProblem,
    name: *const c_char,
    out_passed: *mut bool,
    out_summary: *mut *mut c_char,
    out_report_csv: *mut *mut c_char,
) -> OustabStatus {
    shielded(|| {
        if problem.is_null() || name.is_null() || out_passed.is_null() {
            return fail(OustabStatus::NullArgument, "null pointer argument");
        }
        let name = match unsafe { CStr::from_ptr(name) }.to_str() {
            Ok(n) => n,
            Err(_) => return fail(OustabStatus::InvalidUtf8, "experiment name is not UTF-8"),
        };
        let outcome = match harness::run_experiment(name, unsafe { &(*problem).config }, None) {
            Ok(o) => o,
            Err(e) => return fail_with(&e),
        };
        unsafe { *out_passed = outcome.passed };
        if !out_summary.is_null() {
            let status = unsafe { export_string(outcome.summary.clone(), out_summary) };
            if status != OustabStatus::Ok {
                return status;
            }
        }
        if !out_report_csv.is_null() {
            return unsafe { export_string(outcome.report.to_csv(), out_report_csv) };
        }
        OustabStatus::Ok
    })
}
