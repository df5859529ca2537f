//! C ABI over `shelab`.
//!
//! Objects cross the boundary as opaque handles created by `*_new` / `*_from_*`
//! functions and released by the matching `*_free`. Every fallible call
//! returns a [`ShelabStatus`]; the message of the last failure on the calling
//! thread is available from [`shelab_last_error`]. Strings returned through
//! `char **` out-parameters are owned by the caller and released with
//! [`shelab_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use shelab::cli::{parse_config, ExperimentConfig, Options};
use shelab::kernels::{dalang_integral, heat_kernel, omega_d, KernelSpec};
use shelab::islands::d_alpha;
use shelab::report::{report, DEFAULT_DELTAS};
use shelab::solver::{run_ensemble, RunSummary};
use shelab::spectral::{atom_at_zero, AtomDecision, DEFAULT_SCALES};
use shelab::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShelabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Domain = 4,
    Precondition = 5,
    Unsupported = 6,
    Gate = 7,
    BlowUp = 8,
    Config = 9,
    Insufficient = 10,
    Io = 11,
    OutOfRange = 12,
    Panic = 13,
}

/// Outcome of the atom test.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShelabAtom {
    Zero = 0,
    Positive = 1,
    Inconclusive = 2,
}

/// A validated kernel description.
pub struct ShelabKernel(KernelSpec);

/// A parsed experiment configuration.
pub struct ShelabConfig(ExperimentConfig);

/// Final-time fields of every replica of a simulation.
pub struct ShelabEnsemble {
    cells: usize,
    fields: Vec<Vec<f64>>,
    summary: RunSummary,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> ShelabStatus {
    match e {
        Error::Domain(_) => ShelabStatus::Domain,
        Error::Precondition(_) => ShelabStatus::Precondition,
        Error::Unsupported(_) => ShelabStatus::Unsupported,
        Error::Gate(_) => ShelabStatus::Gate,
        Error::BlowUp { .. } => ShelabStatus::BlowUp,
        Error::Config(_) => ShelabStatus::Config,
        Error::Insufficient(_) => ShelabStatus::Insufficient,
        Error::Io(_) => ShelabStatus::Io,
    }
}

fn fail(status: ShelabStatus, msg: &str) -> ShelabStatus {
    set_error(msg);
    status
}

fn guard<F: FnOnce() -> ShelabStatus>(f: F) -> ShelabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == ShelabStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(ShelabStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: shelab::Result<T>) -> Result<T, ShelabStatus> {
    r.map_err(|e| fail(status_of(&e), &e.to_string()))
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, ShelabStatus> {
    if p.is_null() {
        return Err(fail(ShelabStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(ShelabStatus::InvalidUtf8, "argument is not valid UTF-8"))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> ShelabStatus {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            ShelabStatus::Ok
        }
        Err(_) => fail(ShelabStatus::Io, "string contains a NUL byte"),
    }
}

macro_rules! nonnull {
    ($($p:expr),+) => {
        $(if $p.is_null() {
            return fail(ShelabStatus::NullPointer, concat!("null argument: ", stringify!($p)));
        })+
    };
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn shelab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn shelab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn shelab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a kernel from JSON, e.g. `{"d": 1, "family": "exp_decay_f", "rate": 1.0}`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn shelab_kernel_from_json(json: *const c_char, out: *mut *mut ShelabKernel) -> ShelabStatus {
    guard(|| {
        nonnull!(out);
        *out = ptr::null_mut();
        let text = tri!(str_arg(json));
        let spec: KernelSpec = match serde_json::from_str(text) {
            Ok(s) => s,
            Err(e) => return fail(ShelabStatus::Parse, &e.to_string()),
        };
        tri!(lift(spec.validate()));
        *out = Box::into_raw(Box::new(ShelabKernel(spec)));
        ShelabStatus::Ok
    })
}

/// # Safety
/// `k` must come from [`shelab_kernel_from_json`] or be null.
#[no_mangle]
pub unsafe extern "C" fn shelab_kernel_free(k: *mut ShelabKernel) {
    if !k.is_null() {
        drop(Box::from_raw(k));
    }
}

/// Dalang integral at `lambda`. Forms that are not available are set to NaN.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn shelab_dalang_integral(k: *const ShelabKernel, lambda: f64, finite: *mut bool, spectral: *mut f64, potential: *mut f64) -> ShelabStatus {
    guard(|| {
        nonnull!(k, finite, spectral, potential);
        let r = tri!(lift(dalang_integral(&(*k).0, lambda)));
        *finite = r.finite;
        *spectral = r.spectral.unwrap_or(f64::NAN);
        *potential = r.potential.unwrap_or(f64::NAN);
        ShelabStatus::Ok
    })
}

/// Atom of the spectral measure at the origin over the default scales.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn shelab_atom_at_zero(k: *const ShelabKernel, decision: *mut ShelabAtom, atom: *mut f64) -> ShelabStatus {
    guard(|| {
        nonnull!(k, decision, atom);
        let a = tri!(lift(atom_at_zero(&(*k).0, &DEFAULT_SCALES)));
        *decision = match a.decision {
            AtomDecision::AtomZero => ShelabAtom::Zero,
            AtomDecision::AtomPositive => ShelabAtom::Positive,
            AtomDecision::Inconclusive => ShelabAtom::Inconclusive,
        };
        *atom = a.extrapolated_atom;
        ShelabStatus::Ok
    })
}

/// Full kernel report as JSON. Release the string with [`shelab_string_free`].
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn shelab_kernel_report_json(k: *const ShelabKernel, sigma_constant: bool, out: *mut *mut c_char) -> ShelabStatus {
    guard(|| {
        nonnull!(k, out);
        *out = ptr::null_mut();
        let r = tri!(lift(report(&(*k).0, sigma_constant, &DEFAULT_DELTAS)));
        write_string(out, serde_json::to_string(&r).expect("report serializes"))
    })
}

/// `ω_d(r)`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn shelab_omega_d(d: usize, r: f64, out: *mut f64) -> ShelabStatus {
    guard(|| {
        nonnull!(out);
        *out = tri!(lift(omega_d(d, r)));
        ShelabStatus::Ok
    })
}

/// Heat kernel `p_t(x)` at a point with `d` coordinates.
///
/// # Safety
/// `x` must point to `d` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn shelab_heat_kernel(t: f64, x: *const f64, d: usize, out: *mut f64) -> ShelabStatus {
    guard(|| {
        nonnull!(x, out);
        *out = tri!(lift(heat_kernel(t, std::slice::from_raw_parts(x, d))));
        ShelabStatus::Ok
    })
}

/// `d(α)` for the island dimension formula.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn shelab_d_alpha(alpha: f64, t: f64, out: *mut f64) -> ShelabStatus {
    guard(|| {
        nonnull!(out);
        *out = tri!(lift(d_alpha(alpha, t)));
        ShelabStatus::Ok
    })
}

/// Parses an experiment configuration from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn shelab_config_from_toml(toml: *const c_char, out: *mut *mut ShelabConfig) -> ShelabStatus {
    guard(|| {
        nonnull!(out);
        *out = ptr::null_mut();
        let text = tri!(str_arg(toml));
        let cfg = tri!(lift(parse_config(text)));
        *out = Box::into_raw(Box::new(ShelabConfig(cfg)));
        ShelabStatus::Ok
    })
}

/// # Safety
/// `c` must come from [`shelab_config_from_toml`] or be null.
#[no_mangle]
pub unsafe extern "C" fn shelab_config_free(c: *mut ShelabConfig) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Hex SHA-256 of the configuration. Release with [`shelab_string_free`].
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn shelab_config_hash(c: *const ShelabConfig, out: *mut *mut c_char) -> ShelabStatus {
    guard(|| {
        nonnull!(c, out);
        write_string(out, (*c).0.hash())
    })
}

/// Runs the ensemble and keeps every replica's field at the final time.
/// `threads = 0` means one worker.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn shelab_simulate(c: *const ShelabConfig, threads: usize, unsafe_skip_gate: bool, out: *mut *mut ShelabEnsemble) -> ShelabStatus {
    guard(|| {
        nonnull!(c, out);
        *out = ptr::null_mut();
        let cfg = &(*c).0;
        let opts = Options { threads: Some(threads.max(1)), unsafe_skip_gate, ..Options::default() };
        let mut rc = tri!(lift(cfg.run_config(&opts)));
        rc.snapshots = vec![rc.t_final];
        let (fields, summary) = tri!(lift(run_ensemble(&rc, |_, s| s[0].values.clone())));
        *out = Box::into_raw(Box::new(ShelabEnsemble { cells: rc.grid.cells(), fields, summary }));
        ShelabStatus::Ok
    })
}

/// # Safety
/// `e` must come from [`shelab_simulate`] or be null.
#[no_mangle]
pub unsafe extern "C" fn shelab_ensemble_free(e: *mut ShelabEnsemble) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Number of replicas and cells per field.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn shelab_ensemble_shape(e: *const ShelabEnsemble, replicas: *mut usize, cells: *mut usize) -> ShelabStatus {
    guard(|| {
        nonnull!(e, replicas, cells);
        *replicas = (*e).fields.len();
        *cells = (*e).cells;
        ShelabStatus::Ok
    })
}

/// Copies one replica's field into `buf`, which holds `len` doubles.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn shelab_ensemble_field(e: *const ShelabEnsemble, replica: usize, buf: *mut f64, len: usize) -> ShelabStatus {
    guard(|| {
        nonnull!(e, buf);
        let e = &*e;
        let Some(f) = e.fields.get(replica) else {
            return fail(ShelabStatus::OutOfRange, "replica index out of range");
        };
        if len < f.len() {
            return fail(ShelabStatus::OutOfRange, "buffer shorter than the field");
        }
        std::slice::from_raw_parts_mut(buf, f.len()).copy_from_slice(f);
        ShelabStatus::Ok
    })
}

/// Mean and cell-averaged pointwise variance at the final time.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn shelab_ensemble_moments(e: *const ShelabEnsemble, mean: *mut f64, variance: *mut f64) -> ShelabStatus {
    guard(|| {
        nonnull!(e, mean, variance);
        let s = &(*e).summary;
        *mean = *s.mean.last().unwrap_or(&f64::NAN);
        *variance = *s.variance.last().unwrap_or(&f64::NAN);
        ShelabStatus::Ok
    })
}
