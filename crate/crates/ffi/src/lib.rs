//! C ABI over the `imgadd` library.
//!
//! Designs and images are returned as opaque handles that the caller frees
//! with the matching `*_free` function. Every fallible call returns an
//! [`ImgaddStatus`]; on failure a message is kept per thread and can be read
//! with [`imgadd_last_error`]. Complex arrays cross the boundary as
//! interleaved `re, im` doubles in column-major order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use imgadd::experiments::verify_suite;
use imgadd::imaging::ImageResult;
use imgadd::numerics::CMat;
use imgadd::problem::{
    default_grid, psf_trace, run_image, run_solve, ArraySetup, ImageConfig, SolveConfig,
    SolveOutput,
};
use imgadd::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImgaddStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    InvalidInput = 4,
    Numerical = 5,
    Io = 6,
    BufferTooSmall = 7,
    VerifyFailed = 8,
    Panic = 9,
}

/// A solved beamformer bank.
pub struct ImgaddBank {
    inner: SolveOutput,
}

/// A formed image.
pub struct ImgaddImage {
    inner: ImageResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let mut bytes = msg.into().into_bytes();
    bytes.retain(|&b| b != 0);
    let c = CString::new(bytes).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ImgaddStatus {
    match e {
        _ if e.is_numerical() => ImgaddStatus::Numerical,
        Error::Config(_) | Error::Json(_) => ImgaddStatus::InvalidConfig,
        Error::Io(_) | Error::Csv(_) => ImgaddStatus::Io,
        _ => ImgaddStatus::InvalidInput,
    }
}

struct Fail(ImgaddStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ImgaddStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ImgaddStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            ImgaddStatus::Panic
        }
    }
}

fn null() -> Fail {
    Fail(ImgaddStatus::NullPointer, "null pointer argument".into())
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Fail(
            ImgaddStatus::InvalidUtf8,
            "string argument is not UTF-8".into(),
        )
    })
}

unsafe fn out_slice<'a>(buf: *mut f64, len: usize, needed: usize) -> Result<&'a mut [f64], Fail> {
    if len < needed {
        return Err(Fail(
            ImgaddStatus::BufferTooSmall,
            format!("buffer holds {len} doubles, need {needed}"),
        ));
    }
    if buf.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts_mut(buf, needed))
}

fn parse<T: for<'de> serde::Deserialize<'de>>(text: &str) -> Result<T, Fail> {
    serde_json::from_str(text).map_err(|e| Fail(ImgaddStatus::InvalidConfig, e.to_string()))
}

fn copy_interleaved(m: &CMat, out: &mut [f64]) {
    for (i, z) in m.iter().enumerate() {
        out[2 * i] = z.re;
        out[2 * i + 1] = z.im;
    }
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn imgadd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn imgadd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Solves the JSON design problem `config` and stores a new bank in `*out`.
///
/// # Safety
/// `config` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn imgadd_solve(
    config: *const c_char,
    out: *mut *mut ImgaddBank,
) -> ImgaddStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let cfg: SolveConfig = parse(str_arg(config)?)?;
        let inner = run_solve(&cfg)?;
        *out = Box::into_raw(Box::new(ImgaddBank { inner }));
        Ok(())
    })
}

/// Loads a bank from the JSON text written by [`imgadd_bank_to_json`].
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn imgadd_bank_from_json(
    json: *const c_char,
    out: *mut *mut ImgaddBank,
) -> ImgaddStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let inner: SolveOutput = parse(str_arg(json)?)?;
        inner.bank.validate(inner.tx.len(), inner.rx.len())?;
        *out = Box::into_raw(Box::new(ImgaddBank { inner }));
        Ok(())
    })
}

/// Serializes a bank to JSON. Release the string with [`imgadd_string_free`].
///
/// # Safety
/// `bank` must come from this library; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn imgadd_bank_to_json(
    bank: *const ImgaddBank,
    out: *mut *mut c_char,
) -> ImgaddStatus {
    guard(|| {
        let bank = bank.as_ref().ok_or_else(null)?;
        if out.is_null() {
            return Err(null());
        }
        let text = serde_json::to_string(&bank.inner).map_err(Error::from)?;
        *out = CString::new(text).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// Frees a bank. NULL is ignored.
///
/// # Safety
/// `bank` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn imgadd_bank_free(bank: *mut ImgaddBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn imgadd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Image count, element counts and relative error of a bank.
///
/// # Safety
/// `bank` must come from this library; output pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn imgadd_bank_info(
    bank: *const ImgaddBank,
    q: *mut usize,
    n_t: *mut usize,
    n_r: *mut usize,
    relative_error: *mut f64,
) -> ImgaddStatus {
    guard(|| {
        let b = &bank.as_ref().ok_or_else(null)?.inner;
        if let Some(p) = q.as_mut() {
            *p = b.q;
        }
        if let Some(p) = n_t.as_mut() {
            *p = b.tx.len();
        }
        if let Some(p) = n_r.as_mut() {
            *p = b.rx.len();
        }
        if let Some(p) = relative_error.as_mut() {
            *p = b.relative_error;
        }
        Ok(())
    })
}

/// Effective element weights of every image: `N_t × Q` transmit and
/// `N_r × Q` receive, interleaved complex, column-major. `len_t` and
/// `len_r` count doubles.
///
/// # Safety
/// Buffers must hold at least the given number of doubles.
#[no_mangle]
pub unsafe extern "C" fn imgadd_bank_weights(
    bank: *const ImgaddBank,
    tx: *mut f64,
    len_t: usize,
    rx: *mut f64,
    len_r: usize,
) -> ImgaddStatus {
    guard(|| {
        let d = bank.as_ref().ok_or_else(null)?.inner.bank.to_digital()?;
        copy_interleaved(&d.w_t, out_slice(tx, len_t, 2 * d.w_t.len())?);
        copy_interleaved(&d.w_r, out_slice(rx, len_r, 2 * d.w_r.len())?);
        Ok(())
    })
}

/// Desired and realized PSF magnitudes over the default grid with `points`
/// samples (per axis for planar arrays). Both buffers need the grid size,
/// which is written to `*count` first so a sizing call may pass NULL buffers.
///
/// # Safety
/// `count` must be valid; buffers must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn imgadd_bank_psf(
    bank: *const ImgaddBank,
    points: usize,
    desired: *mut f64,
    realized: *mut f64,
    len: usize,
    count: *mut usize,
) -> ImgaddStatus {
    guard(|| {
        let b = &bank.as_ref().ok_or_else(null)?.inner;
        let count = count.as_mut().ok_or_else(null)?;
        let setup = ArraySetup::new(b.tx.clone(), b.rx.clone(), b.gain)?;
        let grid = default_grid(&setup, points)?;
        *count = grid.len();
        let (d, r) = psf_trace(b, &grid)?;
        let ds = out_slice(desired, len, d.len())?;
        for (o, z) in ds.iter_mut().zip(d.iter()) {
            *o = z.norm();
        }
        let rs = out_slice(realized, len, r.len())?;
        for (o, z) in rs.iter_mut().zip(r.iter()) {
            *o = z.norm();
        }
        Ok(())
    })
}

/// Forms the image described by the JSON `config`. `bank` replaces the
/// config's bank file and may be NULL when the config has a `solve` section.
///
/// # Safety
/// `config` must be NUL-terminated; `bank` NULL or from this library.
#[no_mangle]
pub unsafe extern "C" fn imgadd_image(
    config: *const c_char,
    bank: *const ImgaddBank,
    out: *mut *mut ImgaddImage,
) -> ImgaddStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let mut cfg: ImageConfig = parse(str_arg(config)?)?;
        let b = bank.as_ref().map(|b| &b.inner);
        if b.is_some() {
            cfg.bank = None;
        } else if cfg.bank.is_some() {
            return Err(Fail(
                ImgaddStatus::InvalidConfig,
                "pass the bank as a handle, not a path".into(),
            ));
        }
        let inner = run_image(&cfg, b)?;
        *out = Box::into_raw(Box::new(ImgaddImage { inner }));
        Ok(())
    })
}

/// Image shape; linear arrays give `rows = pixels`, `cols = 1`.
///
/// # Safety
/// `image` must come from this library; outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn imgadd_image_shape(
    image: *const ImgaddImage,
    rows: *mut usize,
    cols: *mut usize,
) -> ImgaddStatus {
    guard(|| {
        let img = &image.as_ref().ok_or_else(null)?.inner;
        let (r, c) = img.shape.unwrap_or((img.values.len(), 1));
        *rows.as_mut().ok_or_else(null)? = r;
        *cols.as_mut().ok_or_else(null)? = c;
        Ok(())
    })
}

/// Pixel values, interleaved complex in row-major order (`2·rows·cols`
/// doubles).
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn imgadd_image_values(
    image: *const ImgaddImage,
    buf: *mut f64,
    len: usize,
) -> ImgaddStatus {
    guard(|| {
        let img = &image.as_ref().ok_or_else(null)?.inner;
        let out = out_slice(buf, len, 2 * img.values.len())?;
        for (i, z) in img.values.iter().enumerate() {
            out[2 * i] = z.re;
            out[2 * i + 1] = z.im;
        }
        Ok(())
    })
}

/// Frees an image. NULL is ignored.
///
/// # Safety
/// `image` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn imgadd_image_free(image: *mut ImgaddImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Runs the closed-form and invariant self-checks. Returns
/// `IMGADD_STATUS_VERIFY_FAILED` when any check fails; `failures` receives
/// the number of failing checks when non-NULL.
///
/// # Safety
/// `failures` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn imgadd_verify(seed: u64, failures: *mut usize) -> ImgaddStatus {
    guard(|| {
        let checks = verify_suite(seed)?;
        let failed: Vec<&str> = checks
            .iter()
            .filter(|c| !c.passed())
            .map(|c| c.name.as_str())
            .collect();
        if let Some(p) = failures.as_mut() {
            *p = failed.len();
        }
        if failed.is_empty() {
            Ok(())
        } else {
            Err(Fail(
                ImgaddStatus::VerifyFailed,
                format!("failed checks: {}", failed.join(", ")),
            ))
        }
    })
}
