use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use attlab_ffi::*;

fn toy4() -> *mut AttlabTable {
    // Two treated and two control units with x mirrored across arms.
    let x = [0.0, 1.0, 0.0, 1.0];
    let w = [1u8, 1, 0, 0];
    let y = [5.0, 7.0, 1.0, 3.0];
    let mut t = ptr::null_mut();
    let s = unsafe { attlab_table_from_arrays(4, 1, x.as_ptr(), w.as_ptr(), y.as_ptr(), &mut t) };
    assert_eq!(s, AttlabStatus::Ok);
    t
}

fn last_error() -> String {
    let p = attlab_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn estimates_through_the_c_interface() {
    let t = toy4();
    let (mut n, mut n1, mut p) = (0, 0, 0);
    assert_eq!(unsafe { attlab_table_dims(t, &mut n, &mut n1, &mut p) }, AttlabStatus::Ok);
    assert_eq!((n, n1, p), (4, 2, 1));
    let mut e = AttlabEstimate::default();
    let tag = CString::new("diff_in_means").unwrap();
    let s = unsafe { attlab_estimate(t, tag.as_ptr(), attlab_options_default(), &mut e) };
    assert_eq!(s, AttlabStatus::Ok);
    assert_eq!(e.point, 4.0);
    assert_eq!((e.n_treated, e.n_control), (2, 2));
    assert!(attlab_last_error().is_null());
    unsafe { attlab_table_free(t) };
}

#[test]
fn unknown_estimator_is_an_invalid_argument() {
    let t = toy4();
    let mut e = AttlabEstimate::default();
    let tag = CString::new("bogus").unwrap();
    let s = unsafe { attlab_estimate(t, tag.as_ptr(), attlab_options_default(), &mut e) };
    assert_eq!(s, AttlabStatus::InvalidArgument);
    assert!(last_error().contains("bogus"));
    unsafe { attlab_table_free(t) };
}

#[test]
fn null_pointers_are_reported() {
    let mut e = AttlabEstimate::default();
    let tag = CString::new("ols").unwrap();
    let s = unsafe { attlab_estimate(ptr::null(), tag.as_ptr(), attlab_options_default(), &mut e) };
    assert_eq!(s, AttlabStatus::NullPointer);
    unsafe { attlab_table_free(ptr::null_mut()) };
}

#[test]
fn missing_file_is_a_data_error() {
    let a = CString::new("/nonexistent/a.csv").unwrap();
    let mut t = ptr::null_mut();
    let s = unsafe { attlab_table_load(a.as_ptr(), a.as_ptr(), AttlabSchema::Ldw, &mut t) };
    assert_eq!(s, AttlabStatus::DataError);
    assert!(t.is_null());
}

#[test]
fn single_arm_arrays_are_rejected_by_estimators() {
    let x = [0.0, 1.0];
    let w = [1u8, 1];
    let y = [1.0, 2.0];
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { attlab_table_from_arrays(2, 1, x.as_ptr(), w.as_ptr(), y.as_ptr(), &mut t) }, AttlabStatus::Ok);
    let mut e = AttlabEstimate::default();
    let tag = CString::new("diff_in_means").unwrap();
    let s = unsafe { attlab_estimate(t, tag.as_ptr(), attlab_options_default(), &mut e) };
    assert_eq!(s, AttlabStatus::DataError);
    unsafe { attlab_table_free(t) };
}

#[test]
fn catt_reports_required_capacity() {
    let n = 120;
    let x: Vec<f64> = (0..n).map(|i| (i % 10) as f64).collect();
    let w: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
    let y: Vec<f64> = (0..n).map(|i| x[i] + 2.0 * w[i] as f64).collect();
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { attlab_table_from_arrays(n, 1, x.as_ptr(), w.as_ptr(), y.as_ptr(), &mut t) }, AttlabStatus::Ok);
    let opts = AttlabOptions {
        trees: 50,
        seed: 3,
        ..attlab_options_default()
    };
    let mut len = 0;
    let s = unsafe { attlab_catt(t, opts, ptr::null_mut(), 0, &mut len) };
    assert_eq!(s, AttlabStatus::BufferTooSmall);
    assert_eq!(len, 40);
    let mut buf = vec![0.0; len];
    assert_eq!(unsafe { attlab_catt(t, opts, buf.as_mut_ptr(), buf.len(), &mut len) }, AttlabStatus::Ok);
    assert!(buf.iter().all(|v| v.is_finite()));
    unsafe { attlab_table_free(t) };
}

#[test]
fn header_declares_the_interface() {
    let header = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/attlab.h")).unwrap();
    for f in [
        "attlab_table_load",
        "attlab_table_from_arrays",
        "attlab_table_free",
        "attlab_table_dims",
        "attlab_estimate",
        "attlab_catt",
        "attlab_last_error",
        "attlab_version",
        "typedef struct AttlabTable AttlabTable",
        "ATTLAB_STATUS_OK = 0",
    ] {
        assert!(header.contains(f), "header lacks {f}");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "attlab.h"
int main(void) {
    double x[4] = {0, 1, 0, 1};
    uint8_t w[4] = {1, 1, 0, 0};
    double y[4] = {5, 7, 1, 3};
    AttlabTable *t = NULL;
    if (attlab_table_from_arrays(4, 1, x, w, y, &t) != ATTLAB_STATUS_OK) return 1;
    AttlabEstimate e;
    if (attlab_estimate(t, "ols", attlab_options_default(), &e) != ATTLAB_STATUS_OK) return 2;
    if (attlab_estimate(t, "nope", attlab_options_default(), &e) != ATTLAB_STATUS_INVALID_ARGUMENT) return 3;
    if (attlab_last_error() == NULL) return 4;
    attlab_table_free(t);
    printf("%.6f\n", e.point);
    return 0;
}
"#;

/// Compiles a C caller against the header and the static library.
#[test]
fn c_program_links_and_runs() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = profile_dir.join("libattlab_ffi.a");
    if !lib.is_file() {
        // Test builds do not emit the static library; build it with the same cargo.
        let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
        let mut cmd = Command::new(cargo);
        cmd.args(["build", "-p", "attlab-ffi", "--lib"])
            .arg("--target-dir")
            .arg(profile_dir.parent().unwrap());
        if profile_dir.ends_with("release") {
            cmd.arg("--release");
        }
        assert!(cmd.status().unwrap().success());
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = dir.path().join("main");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "4.000000");
}
