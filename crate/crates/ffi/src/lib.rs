//! C ABI over `mldep`.
//!
//! Every function returns an [`MldepStatus`]; results go through out
//! pointers. Handles are opaque and must be released with the matching
//! `_free` function. The message for the most recent failure on the calling
//! thread is available from [`mldep_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mldep::concentration::{bennett_bound, BennettForm};
use mldep::distance::{w1_values_gaussian, SampleSet};
use mldep::fields::{monte_carlo, Preset};
use mldep::multilevel::{DependenceGeometry, DependenceStructure};
use mldep::{Error, GaussianLaw, SpdMatrix};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MldepStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Numerical = 4,
    Internal = 5,
}

/// Centered Gaussian law.
pub struct MldepGaussian {
    law: GaussianLaw,
}

/// Multilevel dependence structure on the torus.
pub struct MldepStructure {
    inner: DependenceStructure,
}

/// Row-major samples, `n` rows of `dim` values.
pub struct MldepSamples {
    inner: SampleSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend_from_slice(msg.as_bytes());
    });
}

fn status_of(e: &Error) -> MldepStatus {
    match e {
        Error::DimensionMismatch { .. } => MldepStatus::DimensionMismatch,
        Error::NotSpd(_) | Error::InvalidArgument(_) | Error::TooLarge(_) | Error::Config(_) => {
            MldepStatus::InvalidArgument
        }
        Error::Numerical(_) => MldepStatus::Numerical,
        _ => MldepStatus::Internal,
    }
}

struct Fail(MldepStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MldepStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MldepStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MldepStatus::Ok,
        Ok(Err(Fail(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("panic inside mldep");
            MldepStatus::Internal
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Copies the last error message (NUL terminated, truncated to `len`) and
/// returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mldep_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            ptr::copy_nonoverlapping(e.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Creates N(0, cov) from a row-major `dim`×`dim` covariance.
///
/// # Safety
/// `cov` must point to `dim*dim` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mldep_gaussian_new(
    dim: usize,
    cov: *const f64,
    out_handle: *mut *mut MldepGaussian,
) -> MldepStatus {
    guard(|| {
        let o = out(out_handle, "out")?;
        *o = ptr::null_mut();
        let c = slice(cov, dim * dim, "cov")?;
        let law = GaussianLaw::new(SpdMatrix::new(dim, c.to_vec())?);
        *o = Box::into_raw(Box::new(MldepGaussian { law }));
        Ok(())
    })
}

/// # Safety
/// `h` must be null or come from [`mldep_gaussian_new`].
#[no_mangle]
pub unsafe extern "C" fn mldep_gaussian_free(h: *mut MldepGaussian) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// # Safety
/// `x` must point to `dim` values.
#[no_mangle]
pub unsafe extern "C" fn mldep_gaussian_pdf(
    h: *const MldepGaussian,
    x: *const f64,
    dim: usize,
    out_value: *mut f64,
) -> MldepStatus {
    guard(|| {
        let g = h.as_ref().ok_or_else(|| null("handle"))?;
        let o = out(out_value, "out")?;
        *o = g.law.pdf(slice(x, dim, "x")?)?;
        Ok(())
    })
}

/// # Safety
/// `out_handle` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mldep_structure_new(
    d: usize,
    side: usize,
    k: f64,
    gamma: f64,
    b: f64,
    periodic: bool,
    out_handle: *mut *mut MldepStructure,
) -> MldepStatus {
    guard(|| {
        let o = out(out_handle, "out")?;
        *o = ptr::null_mut();
        let inner = DependenceStructure::new(d, side, k, gamma, b, periodic)?;
        *o = Box::into_raw(Box::new(MldepStructure { inner }));
        Ok(())
    })
}

/// # Safety
/// `h` must be null or come from [`mldep_structure_new`].
#[no_mangle]
pub unsafe extern "C" fn mldep_structure_free(h: *mut MldepStructure) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mldep_structure_index_count(
    h: *const MldepStructure,
    out_count: *mut usize,
) -> MldepStatus {
    guard(|| {
        let s = h.as_ref().ok_or_else(|| null("handle"))?;
        *out(out_count, "out")? = s.inner.len();
        Ok(())
    })
}

/// Dependency indicator between indices at flat positions `i` and `j`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mldep_structure_chi(
    h: *const MldepStructure,
    i: usize,
    j: usize,
    out_chi: *mut bool,
) -> MldepStatus {
    guard(|| {
        let s = h.as_ref().ok_or_else(|| null("handle"))?;
        let o = out(out_chi, "out")?;
        let n = s.inner.len();
        if i >= n || j >= n {
            return Err(Fail(
                MldepStatus::InvalidArgument,
                format!("position out of range (len {n})"),
            ));
        }
        *o = s.inner.chi_pos(i, j);
        Ok(())
    })
}

/// W1 between the empirical law of `values` and N(0, sigma2).
///
/// # Safety
/// `values` must point to `n` values.
#[no_mangle]
pub unsafe extern "C" fn mldep_w1_empirical_gaussian(
    values: *const f64,
    n: usize,
    sigma2: f64,
    out_value: *mut f64,
) -> MldepStatus {
    guard(|| {
        let o = out(out_value, "out")?;
        *o = w1_values_gaussian(slice(values, n, "values")?, sigma2)?;
        Ok(())
    })
}

/// One-sided Bennett tail bound; `exact` selects the h-function form.
///
/// # Safety
/// `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mldep_bennett_bound(
    sigma2: f64,
    a: f64,
    r: f64,
    exact: bool,
    out_value: *mut f64,
) -> MldepStatus {
    guard(|| {
        let form = if exact {
            BennettForm::Exact
        } else {
            BennettForm::Simplified
        };
        *out(out_value, "out")? = bennett_bound(sigma2, a, r, form)?;
        Ok(())
    })
}

/// Draws `n` realizations of X from a named preset.
///
/// # Safety
/// `preset` must be a NUL-terminated string; `out_handle` writable.
#[no_mangle]
pub unsafe extern "C" fn mldep_monte_carlo(
    preset: *const c_char,
    dim: usize,
    d: usize,
    side: usize,
    n: usize,
    seed: u64,
    out_handle: *mut *mut MldepSamples,
) -> MldepStatus {
    guard(|| {
        let o = out(out_handle, "out")?;
        *o = ptr::null_mut();
        if preset.is_null() {
            return Err(null("preset"));
        }
        let name = CStr::from_ptr(preset)
            .to_str()
            .map_err(|_| Fail(MldepStatus::InvalidArgument, "preset is not UTF-8".into()))?;
        let p = Preset::named(name, dim)?;
        let structure = p.structure(d, side)?;
        let prepared = p.generator.prepare(&structure)?;
        let inner = monte_carlo(&prepared, n, seed, false)?.samples;
        *o = Box::into_raw(Box::new(MldepSamples { inner }));
        Ok(())
    })
}

/// # Safety
/// `h` must be null or come from [`mldep_monte_carlo`].
#[no_mangle]
pub unsafe extern "C" fn mldep_samples_free(h: *mut MldepSamples) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mldep_samples_shape(
    h: *const MldepSamples,
    out_n: *mut usize,
    out_dim: *mut usize,
) -> MldepStatus {
    guard(|| {
        let s = h.as_ref().ok_or_else(|| null("handle"))?;
        *out(out_n, "out_n")? = s.inner.n();
        *out(out_dim, "out_dim")? = s.inner.dim();
        Ok(())
    })
}

/// Copies the row-major values into `buf`, which must hold `len` ≥ n·dim.
///
/// # Safety
/// `buf` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn mldep_samples_copy(
    h: *const MldepSamples,
    buf: *mut f64,
    len: usize,
) -> MldepStatus {
    guard(|| {
        let s = h.as_ref().ok_or_else(|| null("handle"))?;
        let v = s.inner.values();
        if len < v.len() {
            return Err(Fail(
                MldepStatus::DimensionMismatch,
                format!("buffer holds {len}, need {}", v.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
        Ok(())
    })
}
