//! C ABI over `parabolic-spiral`.
//!
//! Every fallible function returns a [`PsStatus`]; on failure the message is
//! kept per thread and can be read with [`ps_last_error`]. Handles are opaque
//! and must be released with [`ps_spiral_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use parabolic_spiral::cli::{execute, Format, RunConfig, Stage};
use parabolic_spiral::coefficients::{construct, CaseId, FieldOptions, Overrides};
use parabolic_spiral::profile::Variant;
use parabolic_spiral::spiral::SpiralField;
use parabolic_spiral::Error;

/// Status codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParams = 2,
    Usage = 3,
    Numerical = 4,
    Io = 5,
    CheckFailed = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsVariant {
    Piecewise = 0,
    Analytic = 1,
}

/// Opaque spiral solution handle.
pub struct PsSpiral {
    inner: SpiralField,
}

/// Selected constants of a construction.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PsConstants {
    pub c_mu: f64,
    pub alpha: f64,
    /// 1, 2 or 3.
    pub case_id: i32,
    pub lambda: f64,
    pub big_lambda: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PsStatus {
    match e {
        Error::InvalidParams(_) => PsStatus::InvalidParams,
        Error::Usage(_) | Error::Json(_) => PsStatus::Usage,
        Error::Io(_) => PsStatus::Io,
        _ => PsStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), PsStatus>) -> PsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PsStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            PsStatus::Panic
        }
    }
}

fn fail(e: Error) -> PsStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> PsStatus {
    set_error(format!("null pointer: {what}"));
    PsStatus::NullPointer
}

unsafe fn spiral<'a>(h: *const PsSpiral) -> Result<&'a SpiralField, PsStatus> {
    h.as_ref().map(|s| &s.inner).ok_or_else(|| null("handle"))
}

unsafe fn point<'a>(x: *const f64, n: usize) -> Result<&'a [f64], PsStatus> {
    if x.is_null() {
        return Err(null("x"));
    }
    Ok(std::slice::from_raw_parts(x, n))
}

unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, PsStatus> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s).to_str().map_err(|_| {
        set_error(format!("{what} is not UTF-8"));
        PsStatus::Usage
    })
}

/// Builds the spiral solution in dimension `n` with decay `mu`.
///
/// Pass NaN for `c_mu` or `alpha` to select them automatically.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ps_spiral_new(n: u32, mu: f64, variant: PsVariant, c_mu: f64, alpha: f64, out: *mut *mut PsSpiral) -> PsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let variant = match variant {
            PsVariant::Piecewise => Variant::Piecewise,
            PsVariant::Analytic => Variant::Analytic,
        };
        let overrides = Overrides {
            c_mu: (!c_mu.is_nan()).then_some(c_mu),
            alpha: (!alpha.is_nan()).then_some(alpha),
        };
        let c = construct(n as usize, mu, variant, overrides, FieldOptions::default()).map_err(fail)?;
        *out = Box::into_raw(Box::new(PsSpiral {
            inner: SpiralField::from_construction(c),
        }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `h` must come from [`ps_spiral_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ps_spiral_free(h: *mut PsSpiral) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// # Safety
/// `h` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ps_spiral_constants(h: *const PsSpiral, out: *mut PsConstants) -> PsStatus {
    guard(|| {
        let sf = spiral(h)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let f = sf.field();
        let (lambda, big_lambda) = f.predicted_constants();
        *out = PsConstants {
            c_mu: sf.profile().c_mu(),
            alpha: f.alpha(),
            case_id: match f.case_id() {
                CaseId::Case1 => 1,
                CaseId::Case2 => 2,
                CaseId::Case3 => 3,
            },
            lambda,
            big_lambda,
        };
        Ok(())
    })
}

/// β(r) and γ(r).
///
/// # Safety
/// `h` must be a live handle; `beta` and `gamma` writable.
#[no_mangle]
pub unsafe extern "C" fn ps_spiral_coefficients(h: *const PsSpiral, r: f64, beta: *mut f64, gamma: *mut f64) -> PsStatus {
    guard(|| {
        let sf = spiral(h)?;
        if beta.is_null() || gamma.is_null() {
            return Err(null("beta/gamma"));
        }
        let v = sf.field().eval(r).map_err(fail)?;
        *beta = v.beta;
        *gamma = v.gamma;
        Ok(())
    })
}

/// w(x) for a point of length `n` (the handle's dimension).
///
/// # Safety
/// `x` must point to `n` doubles; `re` and `im` writable.
#[no_mangle]
pub unsafe extern "C" fn ps_spiral_eval(h: *const PsSpiral, x: *const f64, n: usize, re: *mut f64, im: *mut f64) -> PsStatus {
    guard(|| {
        let sf = spiral(h)?;
        let x = point(x, n)?;
        if n != sf.n() {
            set_error(format!("point has {n} components, expected {}", sf.n()));
            return Err(PsStatus::Usage);
        }
        if re.is_null() || im.is_null() {
            return Err(null("re/im"));
        }
        let w = sf.eval_w(x);
        *re = w.re;
        *im = w.im;
        Ok(())
    })
}

/// Modulus of the full elliptic residual at `x` with difference step `step`.
///
/// # Safety
/// `x` must point to `n` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ps_spiral_residual(h: *const PsSpiral, x: *const f64, n: usize, step: f64, out: *mut f64) -> PsStatus {
    guard(|| {
        let sf = spiral(h)?;
        let x = point(x, n)?;
        if n != sf.n() {
            set_error(format!("point has {n} components, expected {}", sf.n()));
            return Err(PsStatus::Usage);
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = sf.full_residual(x, step).map_err(fail)?.norm();
        Ok(())
    })
}

/// Runs a pipeline stage (`construct`, `audit`, `evolve`, `liouville`, `all`)
/// with a JSON run configuration (null or `"{}"` for defaults), writing
/// `report.json` and CSV tables into `out_dir`. Returns
/// [`PsStatus::CheckFailed`] when the run completes but a check fails.
///
/// # Safety
/// `stage` and `out_dir` must be NUL-terminated strings; `config_json` may be null.
#[no_mangle]
pub unsafe extern "C" fn ps_run(stage: *const c_char, config_json: *const c_char, out_dir: *const c_char) -> PsStatus {
    guard(|| {
        let stage: Stage = serde_json::from_value(serde_json::Value::String(text(stage, "stage")?.into())).map_err(|e| {
            set_error(format!("unknown stage: {e}"));
            PsStatus::Usage
        })?;
        let config: RunConfig = if config_json.is_null() {
            RunConfig::default()
        } else {
            serde_json::from_str(text(config_json, "config")?).map_err(|e| fail(e.into()))?
        };
        let out = Path::new(text(out_dir, "out_dir")?);
        let report = execute(stage, &config, out, Format::Both).map_err(fail)?;
        if report.pass {
            Ok(())
        } else {
            set_error("one or more checks failed; see report.json".into());
            Err(PsStatus::CheckFailed)
        }
    })
}

/// Message for the last failure on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ps_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn new(n: u32, mu: f64) -> (PsStatus, *mut PsSpiral) {
        let mut h = ptr::null_mut();
        let s = unsafe { ps_spiral_new(n, mu, PsVariant::Piecewise, f64::NAN, f64::NAN, &mut h) };
        (s, h)
    }

    fn last_error() -> String {
        unsafe { CStr::from_ptr(ps_last_error()) }.to_str().unwrap().to_owned()
    }

    #[test]
    fn handle_round_trip() {
        let (s, h) = new(3, 1.0);
        assert_eq!(s, PsStatus::Ok);
        assert!(ps_last_error().is_null());
        let mut c = PsConstants::default();
        assert_eq!(unsafe { ps_spiral_constants(h, &mut c) }, PsStatus::Ok);
        assert_eq!(c.case_id, 2);
        assert!(c.alpha > 0.0 && c.big_lambda >= c.lambda);

        let x = [0.3, -0.7, 0.2];
        let (mut re, mut im) = (0.0, 0.0);
        assert_eq!(unsafe { ps_spiral_eval(h, x.as_ptr(), 3, &mut re, &mut im) }, PsStatus::Ok);
        let w = unsafe { &*h }.inner.eval_w(&x);
        assert_eq!((re, im), (w.re, w.im));

        let mut res = f64::NAN;
        assert_eq!(unsafe { ps_spiral_residual(h, x.as_ptr(), 3, 1e-4, &mut res) }, PsStatus::Ok);
        assert!(res < 1e-5);

        let (mut b, mut g) = (0.0, 0.0);
        assert_eq!(unsafe { ps_spiral_coefficients(h, 2.0, &mut b, &mut g) }, PsStatus::Ok);
        assert!(b.is_finite() && g.is_finite());
        unsafe { ps_spiral_free(h) };
    }

    #[test]
    fn errors_are_reported() {
        let (s, h) = new(2, 1.2);
        assert_eq!(s, PsStatus::InvalidParams);
        assert!(h.is_null());
        assert!(last_error().contains("mu out of range"));

        assert_eq!(unsafe { ps_spiral_constants(ptr::null(), &mut PsConstants::default()) }, PsStatus::NullPointer);

        let (_, h) = new(2, 0.5);
        let x = [1.0, 0.0, 0.0];
        let (mut re, mut im) = (0.0, 0.0);
        assert_eq!(unsafe { ps_spiral_eval(h, x.as_ptr(), 3, &mut re, &mut im) }, PsStatus::Usage);
        assert!(last_error().contains("expected 2"));
        unsafe { ps_spiral_free(h) };
        unsafe { ps_spiral_free(ptr::null_mut()) };
    }

    #[test]
    fn run_writes_report() {
        let dir = tempfile::tempdir().unwrap();
        let out = CString::new(dir.path().to_str().unwrap()).unwrap();
        let stage = CString::new("construct").unwrap();
        let cfg = CString::new(r#"{"n": 4, "mu": 0.5}"#).unwrap();
        assert_eq!(unsafe { ps_run(stage.as_ptr(), cfg.as_ptr(), out.as_ptr()) }, PsStatus::Ok);
        assert!(dir.path().join("report.json").exists());

        let bad = CString::new("explode").unwrap();
        assert_eq!(unsafe { ps_run(bad.as_ptr(), ptr::null(), out.as_ptr()) }, PsStatus::Usage);
        let cfg = CString::new(r#"{"n": 4, "nu": 0.5}"#).unwrap();
        assert_eq!(unsafe { ps_run(stage.as_ptr(), cfg.as_ptr(), out.as_ptr()) }, PsStatus::Usage);
    }

    #[test]
    fn header_declares_api() {
        let header = include_str!("../include/parabolic_spiral.h");
        for name in ["ps_spiral_new", "ps_spiral_free", "ps_spiral_eval", "ps_run", "ps_last_error", "PS_STATUS_CHECK_FAILED"] {
            assert!(header.contains(name), "{name}");
        }
    }
}
