//! C ABI over `cmflow`.
//!
//! Every entry point returns a [`CmfStatus`]. On failure a message is kept in
//! thread-local storage and can be read with [`cmf_last_error_message`].
//! Matrices are dense row-major `f64` buffers. Output buffers are supplied by
//! the caller together with their length in elements; a length mismatch is
//! reported as `CMF_STATUS_INVALID_ARGUMENT` and nothing is written.
//!
//! A `CmfFlow` handle may be shared between threads for read-only calls.
//! It must be released exactly once with [`cmf_flow_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use cmflow::evalkit::{fid_like, log_prob, mean_macs, moments, sample};
use cmflow::metric::{jacobian, metric_at};
use cmflow::{Checkpoint, Error, ErrorKind, InjectiveFlow, Rng};

/// Result code of every `cmf_*` function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numeric = 4,
    Io = 5,
    Data = 6,
    Panic = 7,
}

/// Opaque handle to a trained injective flow.
pub struct CmfFlow {
    inner: InjectiveFlow,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(CmfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.kind() {
            ErrorKind::Config => CmfStatus::Config,
            ErrorKind::Numeric => CmfStatus::Numeric,
            ErrorKind::Io => CmfStatus::Io,
            ErrorKind::Data => CmfStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

type FfiResult = std::result::Result<(), Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(CmfStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> FfiResult) -> CmfStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CmfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal panic: {msg}"));
            CmfStatus::Panic
        }
    }
}

unsafe fn flow_ref<'a>(flow: *const CmfFlow) -> Result<&'a InjectiveFlow, Failure> {
    flow.as_ref()
        .map(|f| &f.inner)
        .ok_or_else(|| Failure(CmfStatus::NullPointer, "flow handle is null".into()))
}

unsafe fn input<'a>(ptr: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure(CmfStatus::NullPointer, format!("{name} is null")));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

unsafe fn output<'a>(ptr: *mut f64, len: usize, want: usize, name: &str) -> Result<&'a mut [f64], Failure> {
    if len != want {
        return Err(invalid(format!("{name} has length {len}, expected {want}")));
    }
    if want == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(Failure(CmfStatus::NullPointer, format!("{name} is null")));
    }
    Ok(slice::from_raw_parts_mut(ptr, len))
}

fn expect_len(buf: &[f64], want: usize, name: &str) -> FfiResult {
    if buf.len() != want {
        return Err(invalid(format!("{name} has length {}, expected {want}", buf.len())));
    }
    Ok(())
}

fn rows(flat: &[f64], n: usize, dim: usize, name: &str) -> Result<Vec<Vec<f64>>, Failure> {
    let want = n
        .checked_mul(dim)
        .ok_or_else(|| invalid(format!("{name}: size overflow")))?;
    expect_len(flat, want, name)?;
    if dim == 0 {
        return Ok(vec![Vec::new(); n]);
    }
    Ok(flat.chunks(dim).map(<[f64]>::to_vec).collect())
}

unsafe fn put_handle(out: *mut *mut CmfFlow, gf: InjectiveFlow) -> FfiResult {
    *out = Box::into_raw(Box::new(CmfFlow { inner: gf }));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cmf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next `cmf_*` call on the same thread.
#[no_mangle]
pub extern "C" fn cmf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a checkpoint (JSON or binary) from `path`.
#[no_mangle]
pub unsafe extern "C" fn cmf_flow_load(path: *const c_char, out: *mut *mut CmfFlow) -> CmfStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(Failure(CmfStatus::NullPointer, "path or out is null".into()));
        }
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not valid UTF-8"))?;
        let gf = Checkpoint::load(Path::new(path))?.model()?;
        put_handle(out, gf)
    })
}

/// Creates the identity embedding of `latent_dim` into `data_dim` dimensions.
#[no_mangle]
pub unsafe extern "C" fn cmf_flow_new_identity(
    latent_dim: usize,
    data_dim: usize,
    out: *mut *mut CmfFlow,
) -> CmfStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(CmfStatus::NullPointer, "out is null".into()));
        }
        *out = ptr::null_mut();
        put_handle(out, InjectiveFlow::identity(latent_dim, data_dim)?)
    })
}

/// Releases a handle. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn cmf_flow_free(flow: *mut CmfFlow) {
    if !flow.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(flow))));
    }
}

/// Writes the latent and data dimensions.
#[no_mangle]
pub unsafe extern "C" fn cmf_flow_dims(
    flow: *const CmfFlow,
    latent_dim: *mut usize,
    data_dim: *mut usize,
) -> CmfStatus {
    guard(|| {
        let gf = flow_ref(flow)?;
        if latent_dim.is_null() || data_dim.is_null() {
            return Err(Failure(CmfStatus::NullPointer, "output pointer is null".into()));
        }
        *latent_dim = gf.latent_dim();
        *data_dim = gf.data_dim();
        Ok(())
    })
}

/// Maps a latent point (length d) to data space (length D).
#[no_mangle]
pub unsafe extern "C" fn cmf_flow_embed(
    flow: *const CmfFlow,
    z: *const f64,
    z_len: usize,
    x_out: *mut f64,
    x_len: usize,
) -> CmfStatus {
    guard(|| {
        let gf = flow_ref(flow)?;
        let z = input(z, z_len, "z")?;
        expect_len(z, gf.latent_dim(), "z")?;
        let out = output(x_out, x_len, gf.data_dim(), "x_out")?;
        out.copy_from_slice(&gf.embed(z)?);
        Ok(())
    })
}

/// Maps a data point (length D) to its latent coordinates (length d).
#[no_mangle]
pub unsafe extern "C" fn cmf_flow_project(
    flow: *const CmfFlow,
    x: *const f64,
    x_len: usize,
    z_out: *mut f64,
    z_len: usize,
) -> CmfStatus {
    guard(|| {
        let gf = flow_ref(flow)?;
        let x = input(x, x_len, "x")?;
        expect_len(x, gf.data_dim(), "x")?;
        let out = output(z_out, z_len, gf.latent_dim(), "z_out")?;
        out.copy_from_slice(&gf.project(x)?);
        Ok(())
    })
}

/// Model log-density of a data point, evaluated at its projection.
#[no_mangle]
pub unsafe extern "C" fn cmf_flow_log_prob(
    flow: *const CmfFlow,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
) -> CmfStatus {
    guard(|| {
        let gf = flow_ref(flow)?;
        let x = input(x, x_len, "x")?;
        expect_len(x, gf.data_dim(), "x")?;
        if out.is_null() {
            return Err(Failure(CmfStatus::NullPointer, "out is null".into()));
        }
        *out = log_prob(gf, x)?;
        Ok(())
    })
}

/// Jacobian of the embedding at latent `z`, D×d row-major.
#[no_mangle]
pub unsafe extern "C" fn cmf_flow_jacobian(
    flow: *const CmfFlow,
    z: *const f64,
    z_len: usize,
    out: *mut f64,
    out_len: usize,
) -> CmfStatus {
    guard(|| {
        let gf = flow_ref(flow)?;
        let z = input(z, z_len, "z")?;
        expect_len(z, gf.latent_dim(), "z")?;
        let buf = output(out, out_len, gf.data_dim() * gf.latent_dim(), "out")?;
        buf.copy_from_slice(jacobian(gf, z)?.as_slice());
        Ok(())
    })
}

/// Metric tensor JᵀJ at latent `z`, d×d row-major.
#[no_mangle]
pub unsafe extern "C" fn cmf_flow_metric_tensor(
    flow: *const CmfFlow,
    z: *const f64,
    z_len: usize,
    out: *mut f64,
    out_len: usize,
) -> CmfStatus {
    guard(|| {
        let gf = flow_ref(flow)?;
        let z = input(z, z_len, "z")?;
        expect_len(z, gf.latent_dim(), "z")?;
        let d = gf.latent_dim();
        let buf = output(out, out_len, d * d, "out")?;
        buf.copy_from_slice(metric_at(gf, z)?.matrix().as_slice());
        Ok(())
    })
}

/// Draws `n` samples into an n×D row-major buffer. Identical seeds give
/// identical samples.
#[no_mangle]
pub unsafe extern "C" fn cmf_flow_sample(
    flow: *const CmfFlow,
    n: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> CmfStatus {
    guard(|| {
        let gf = flow_ref(flow)?;
        let want = n
            .checked_mul(gf.data_dim())
            .ok_or_else(|| invalid("n * data_dim overflows"))?;
        let buf = output(out, out_len, want, "out")?;
        let xs = sample(gf, n, &mut Rng::new(seed))?;
        for (dst, x) in buf.chunks_mut(gf.data_dim().max(1)).zip(&xs) {
            dst.copy_from_slice(x);
        }
        Ok(())
    })
}

/// Mean absolute cosine similarity between Jacobian columns, averaged over
/// the projections of `n` data points (n×D row-major).
#[no_mangle]
pub unsafe extern "C" fn cmf_flow_macs(
    flow: *const CmfFlow,
    x: *const f64,
    n: usize,
    x_len: usize,
    out: *mut f64,
) -> CmfStatus {
    guard(|| {
        let gf = flow_ref(flow)?;
        let xs = rows(input(x, x_len, "x")?, n, gf.data_dim(), "x")?;
        if out.is_null() {
            return Err(Failure(CmfStatus::NullPointer, "out is null".into()));
        }
        *out = mean_macs(gf, &xs)?;
        Ok(())
    })
}

/// Fréchet distance between Gaussian fits of two sample sets, each row-major
/// with `dim` columns.
#[no_mangle]
pub unsafe extern "C" fn cmf_fid_like(
    a: *const f64,
    n_a: usize,
    b: *const f64,
    n_b: usize,
    dim: usize,
    out: *mut f64,
) -> CmfStatus {
    guard(|| {
        let a = rows(input(a, n_a.saturating_mul(dim), "a")?, n_a, dim, "a")?;
        let b = rows(input(b, n_b.saturating_mul(dim), "b")?, n_b, dim, "b")?;
        if out.is_null() {
            return Err(Failure(CmfStatus::NullPointer, "out is null".into()));
        }
        *out = fid_like(&moments(&a)?, &moments(&b)?)?;
        Ok(())
    })
}
