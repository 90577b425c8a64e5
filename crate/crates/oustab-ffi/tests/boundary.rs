//! Drives the C entry points from Rust: handle lifecycle, status codes,
//! string ownership, and the solve/experiment paths.

use std::ffi::{c_char, CStr, CString};
use std::ptr;

use oustab_ffi::*;

const KINETIC: &str = r#"
[operator]
a = [[0.0, 0.0], [1.0, 0.0]]
b = [[1.0, 0.0], [0.0, 0.0]]
alpha = 2.0
horizon = 0.4

[source]
[[source.pieces]]
t_start = 0.0
t_end = 0.4
[[source.pieces.terms]]
kind = "gaussian_bump"
amplitude = 1.0
center = [0.0, 0.0]
width = 0.9

[schedule]
cuts = [0.0, 0.2, 0.4]
values = [[[0.5]], [[0.2]]]

[mc]
n_time = 3
nsteps = 16
samples = 2000
seed = 11

[probes]
t = [0.4]
x = [[0.2, -0.1]]
"#;

fn parse(text: &str) -> *mut OustabProblem {
    let c = CString::new(text).unwrap();
    let mut handle: *mut OustabProblem = ptr::null_mut();
    let status = unsafe { oustab_problem_parse(c.as_ptr(), &mut handle) };
    assert_eq!(status, OustabStatus::Ok);
    assert!(!handle.is_null());
    handle
}

fn take_string(s: *mut c_char) -> String {
    assert!(!s.is_null());
    let owned = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_string();
    unsafe { oustab_string_free(s) };
    owned
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(oustab_last_error_message()) }
        .to_str()
        .unwrap()
        .to_string()
}

#[test]
fn version_is_a_static_string() {
    let v = unsafe { CStr::from_ptr(oustab_version()) }.to_str().unwrap();
    assert!(v.starts_with(|c: char| c.is_ascii_digit()));
}

#[test]
fn parse_analyze_solve_free() {
    let handle = parse(KINETIC);

    let mut dim = 0usize;
    assert_eq!(
        unsafe { oustab_problem_dim(handle, &mut dim) },
        OustabStatus::Ok
    );
    assert_eq!(dim, 2);

    let mut json: *mut c_char = ptr::null_mut();
    assert_eq!(
        unsafe { oustab_analyze_json(handle, &mut json) },
        OustabStatus::Ok
    );
    let doc = take_string(json);
    assert!(doc.contains("\"kalman\""));
    assert!(doc.contains("\"satisfied\": true"));

    let x = [0.2f64, -0.1];
    let mut est = OustabEstimate {
        value: f64::NAN,
        std_error: f64::NAN,
        sup_bound: f64::NAN,
    };
    assert_eq!(
        unsafe { oustab_solve(handle, 0.4, x.as_ptr(), x.len(), 0.0, &mut est) },
        OustabStatus::Ok
    );
    assert!(est.value.is_finite());
    assert!(est.std_error > 0.0);
    assert!(est.value.abs() <= est.sup_bound);

    unsafe { oustab_problem_free(handle) };
}

#[test]
fn experiments_run_through_the_boundary() {
    let handle = parse(KINETIC);

    let mut listing: *mut c_char = ptr::null_mut();
    assert_eq!(
        unsafe { oustab_experiment_list(&mut listing) },
        OustabStatus::Ok
    );
    let listing = take_string(listing);
    assert!(listing.lines().any(|l| l.starts_with("poisson-identity\t")));

    let name = CString::new("poisson-identity").unwrap();
    let mut passed = false;
    let mut summary: *mut c_char = ptr::null_mut();
    let mut csv: *mut c_char = ptr::null_mut();
    let status = unsafe {
        oustab_run_experiment(handle, name.as_ptr(), &mut passed, &mut summary, &mut csv)
    };
    assert_eq!(status, OustabStatus::Ok);
    assert!(passed, "summary: {}", take_string(summary));
    let csv = take_string(csv);
    assert!(csv.starts_with("experiment,param,value,ci_low,ci_high,seed"));
    assert!(csv.lines().count() > 1);

    unsafe { oustab_problem_free(handle) };
}

#[test]
fn failures_set_status_and_message() {
    let mut handle: *mut OustabProblem = ptr::null_mut();

    assert_eq!(
        unsafe { oustab_problem_parse(ptr::null(), &mut handle) },
        OustabStatus::NullArgument
    );

    let bad = CString::new("not toml at all [").unwrap();
    assert_eq!(
        unsafe { oustab_problem_parse(bad.as_ptr(), &mut handle) },
        OustabStatus::Config
    );
    assert!(handle.is_null());
    assert!(!last_error().is_empty());

    let handle = parse(KINETIC);
    let name = CString::new("no-such-experiment").unwrap();
    let mut passed = false;
    assert_eq!(
        unsafe {
            oustab_run_experiment(
                handle,
                name.as_ptr(),
                &mut passed,
                ptr::null_mut(),
                ptr::null_mut(),
            )
        },
        OustabStatus::Config
    );
    assert!(last_error().contains("no-such-experiment"));

    // Probe dimension mismatch surfaces as a config error, not a panic.
    let x = [0.1f64];
    let mut est = OustabEstimate {
        value: 0.0,
        std_error: 0.0,
        sup_bound: 0.0,
    };
    assert_eq!(
        unsafe { oustab_solve(handle, 0.2, x.as_ptr(), x.len(), 0.0, &mut est) },
        OustabStatus::Config
    );

    unsafe { oustab_problem_free(handle) };
    unsafe { oustab_problem_free(ptr::null_mut()) };
    unsafe { oustab_string_free(ptr::null_mut()) };
}
