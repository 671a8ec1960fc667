use std::ffi::CString;
use std::ptr;

use mldep_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { mldep_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    unsafe { std::ffi::CStr::from_ptr(buf.as_ptr()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn gaussian_pdf_roundtrip() {
    let mut h = ptr::null_mut();
    let cov = [1.0];
    assert_eq!(
        unsafe { mldep_gaussian_new(1, cov.as_ptr(), &mut h) },
        MldepStatus::Ok
    );
    let mut v = 0.0;
    assert_eq!(
        unsafe { mldep_gaussian_pdf(h, [0.0].as_ptr(), 1, &mut v) },
        MldepStatus::Ok
    );
    assert!((v - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
    assert_eq!(
        unsafe { mldep_gaussian_pdf(h, [0.0, 1.0].as_ptr(), 2, &mut v) },
        MldepStatus::DimensionMismatch
    );
    unsafe { mldep_gaussian_free(h) };
}

#[test]
fn rejects_bad_covariance_and_nulls() {
    let mut h = ptr::null_mut();
    let cov = [1.0, 2.0, 2.0, 1.0];
    assert_eq!(
        unsafe { mldep_gaussian_new(2, cov.as_ptr(), &mut h) },
        MldepStatus::InvalidArgument
    );
    assert!(h.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(
        unsafe { mldep_gaussian_new(1, ptr::null(), &mut h) },
        MldepStatus::NullPointer
    );
    let mut v = 0.0;
    assert_eq!(
        unsafe { mldep_gaussian_pdf(ptr::null(), [0.0].as_ptr(), 1, &mut v) },
        MldepStatus::NullPointer
    );
    unsafe { mldep_gaussian_free(ptr::null_mut()) };
}

#[test]
fn structure_chi_is_symmetric() {
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { mldep_structure_new(1, 16, 2.0, 2.0, 1.0, true, &mut h) },
        MldepStatus::Ok
    );
    let mut n = 0;
    assert_eq!(
        unsafe { mldep_structure_index_count(h, &mut n) },
        MldepStatus::Ok
    );
    assert!(n >= 16);
    for i in 0..n {
        for j in 0..n {
            let (mut a, mut b) = (false, false);
            unsafe {
                assert_eq!(mldep_structure_chi(h, i, j, &mut a), MldepStatus::Ok);
                assert_eq!(mldep_structure_chi(h, j, i, &mut b), MldepStatus::Ok);
            }
            assert_eq!(a, b);
        }
    }
    let mut c = false;
    assert_eq!(
        unsafe { mldep_structure_chi(h, n, 0, &mut c) },
        MldepStatus::InvalidArgument
    );
    unsafe { mldep_structure_free(h) };
}

#[test]
fn scalar_functions() {
    let mut v = 0.0;
    assert_eq!(
        unsafe { mldep_bennett_bound(1.0, 1.0, 0.0, true, &mut v) },
        MldepStatus::Ok
    );
    assert_eq!(v, 1.0);
    assert_eq!(
        unsafe { mldep_bennett_bound(-1.0, 1.0, 0.0, true, &mut v) },
        MldepStatus::InvalidArgument
    );
    let xs = [0.0, 0.0];
    assert_eq!(
        unsafe { mldep_w1_empirical_gaussian(xs.as_ptr(), 2, 1.0, &mut v) },
        MldepStatus::Ok
    );
    assert!((v - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-12);
}

#[test]
fn monte_carlo_is_deterministic() {
    let name = CString::new("identity-rademacher").unwrap();
    let draw = || {
        let mut h = ptr::null_mut();
        assert_eq!(
            unsafe { mldep_monte_carlo(name.as_ptr(), 1, 1, 8, 100, 42, &mut h) },
            MldepStatus::Ok
        );
        let (mut n, mut dim) = (0, 0);
        assert_eq!(
            unsafe { mldep_samples_shape(h, &mut n, &mut dim) },
            MldepStatus::Ok
        );
        assert_eq!((n, dim), (100, 1));
        let mut buf = vec![0.0; n * dim];
        assert_eq!(
            unsafe { mldep_samples_copy(h, buf.as_mut_ptr(), buf.len()) },
            MldepStatus::Ok
        );
        assert_eq!(
            unsafe { mldep_samples_copy(h, buf.as_mut_ptr(), 1) },
            MldepStatus::DimensionMismatch
        );
        unsafe { mldep_samples_free(h) };
        buf
    };
    assert_eq!(draw(), draw());
    let bad = CString::new("nope").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { mldep_monte_carlo(bad.as_ptr(), 1, 1, 8, 100, 42, &mut h) },
        MldepStatus::InvalidArgument
    );
}

#[test]
fn header_is_current() {
    let header = include_str!("../include/mldep.h");
    for sym in [
        "mldep_gaussian_new",
        "mldep_structure_chi",
        "mldep_monte_carlo",
        "mldep_last_error_message",
        "MLDEP_STATUS_NULL_POINTER",
    ] {
        assert!(header.contains(sym), "{sym} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = std::process::Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler, skipping");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"mldep.h\"\nint f(void) { MldepGaussian *g = 0; double v; \
         return mldep_gaussian_pdf(g, 0, 0, &v) == MLDEP_STATUS_OK; }\n",
    )
    .unwrap();
    let status = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}
