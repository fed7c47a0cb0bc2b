//! C ABI over the scoring catalog and the exact tabular oracle.
//!
//! Objects are opaque handles created by `*_new` / `*_from_json` and released
//! with the matching `*_free`. Every fallible call returns an [`RgStatus`];
//! on failure `rg_last_error` describes the problem for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use riskgrad::oracle::{mdp_bracket, optimal_upsilon_scan, AugmentedGraph};
use riskgrad::scoring::{Interval, RiskKind, RiskSpec};
use riskgrad::env::TabularMdp;
use riskgrad::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Parse = 4,
    Unsupported = 5,
    TooLarge = 6,
    NonFinite = 7,
    Panic = 8,
    Other = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgRiskKind {
    Expectation = 0,
    Es = 1,
    Variance = 2,
    Mad = 3,
    AsymVariance = 4,
    MeanEs = 5,
    MeanVariance = 6,
    Entropic = 7,
    Evar = 8,
}

impl From<RgRiskKind> for RiskKind {
    fn from(k: RgRiskKind) -> Self {
        match k {
            RgRiskKind::Expectation => RiskKind::Expectation,
            RgRiskKind::Es => RiskKind::Es,
            RgRiskKind::Variance => RiskKind::Variance,
            RgRiskKind::Mad => RiskKind::Mad,
            RgRiskKind::AsymVariance => RiskKind::AsymVariance,
            RgRiskKind::MeanEs => RiskKind::MeanEs,
            RgRiskKind::MeanVariance => RiskKind::MeanVariance,
            RgRiskKind::Entropic => RiskKind::Entropic,
            RgRiskKind::Evar => RiskKind::Evar,
        }
    }
}

/// Opaque risk objective.
pub struct RgRiskSpec {
    spec: RiskSpec,
}

/// Opaque tabular MDP.
pub struct RgTabularMdp {
    mdp: TabularMdp,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend(msg.bytes().filter(|&b| b != 0));
    });
}

fn status_of(err: &Error) -> RgStatus {
    match err {
        Error::Domain(_) => RgStatus::Domain,
        Error::Argument(_) | Error::Config(_) | Error::Shape { .. } => RgStatus::InvalidArgument,
        Error::Json(_) => RgStatus::Parse,
        Error::Unsupported(_) => RgStatus::Unsupported,
        Error::TooLarge { .. } => RgStatus::TooLarge,
        Error::NonFinite(_) => RgStatus::NonFinite,
        _ => RgStatus::Other,
    }
}

/// Runs `f`, recording any error or panic for `rg_last_error`.
fn guard(f: impl FnOnce() -> Result<(), (RgStatus, String)>) -> RgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RgStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside riskgrad");
            RgStatus::Panic
        }
    }
}

fn lift<T>(r: riskgrad::Result<T>) -> Result<T, (RgStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(name: &str) -> (RgStatus, String) {
    (RgStatus::NullPointer, format!("{name} is null"))
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rg_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            std::ptr::copy_nonoverlapping(e.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Creates a risk objective. `alpha`, `lambda` and `gamma` are ignored by
/// kinds that do not use them.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn rg_risk_spec_new(
    kind: RgRiskKind,
    alpha: f64,
    lambda: f64,
    gamma: f64,
    out: *mut *mut RgRiskSpec,
) -> RgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = RiskSpec { kind: kind.into(), alpha, lambda, gamma, upsilon_bracket: None };
        if spec.kind != RiskKind::Evar {
            lift(spec.validate())?;
        }
        *out = Box::into_raw(Box::new(RgRiskSpec { spec }));
        Ok(())
    })
}

/// Sets the auxiliary-variable range; required for EVaR.
///
/// # Safety
/// `spec` must be a live handle from `rg_risk_spec_new`.
#[no_mangle]
pub unsafe extern "C" fn rg_risk_spec_set_bracket(spec: *mut RgRiskSpec, lo: f64, hi: f64) -> RgStatus {
    guard(|| {
        let s = spec.as_mut().ok_or_else(|| null("spec"))?;
        let mut next = s.spec;
        next.upsilon_bracket = Some(lift(Interval::new(lo, hi))?);
        lift(next.validate())?;
        s.spec = next;
        Ok(())
    })
}

/// # Safety
/// `spec` must be null or a handle from `rg_risk_spec_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rg_risk_spec_free(spec: *mut RgRiskSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Scoring function `f(y, upsilon)`.
///
/// # Safety
/// `spec` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rg_score(spec: *const RgRiskSpec, y: f64, upsilon: f64, out: *mut f64) -> RgStatus {
    guard(|| {
        let s = spec.as_ref().ok_or_else(|| null("spec"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = lift(s.spec.eval_f(y, upsilon))?;
        Ok(())
    })
}

/// Risk of the empirical law of `n` samples and its minimizing auxiliary value.
///
/// # Safety
/// `samples` must point to `n` doubles; `rho` and `upsilon` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_empirical_risk(
    spec: *const RgRiskSpec,
    samples: *const f64,
    n: usize,
    grid_n: usize,
    rho: *mut f64,
    upsilon: *mut f64,
) -> RgStatus {
    guard(|| {
        let s = spec.as_ref().ok_or_else(|| null("spec"))?;
        if samples.is_null() || rho.is_null() || upsilon.is_null() {
            return Err(null("samples, rho or upsilon"));
        }
        let xs = std::slice::from_raw_parts(samples, n);
        let est = lift(s.spec.empirical_risk(xs, grid_n))?;
        *rho = est.rho;
        *upsilon = est.upsilon_star;
        Ok(())
    })
}

/// Parses a tabular MDP from its JSON description.
///
/// # Safety
/// `json` must be a NUL-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rg_tabular_mdp_from_json(json: *const c_char, out: *mut *mut RgTabularMdp) -> RgStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return Err(null("json or out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (RgStatus::Parse, format!("json is not UTF-8: {e}")))?;
        let mdp = TabularMdp::from_json_str(text).map_err(|e| match e {
            Error::Json(_) => (RgStatus::Parse, e.to_string()),
            other => (status_of(&other), other.to_string()),
        })?;
        *out = Box::into_raw(Box::new(RgTabularMdp { mdp }));
        Ok(())
    })
}

/// # Safety
/// `mdp` must be null or a handle from `rg_tabular_mdp_from_json` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rg_tabular_mdp_free(mdp: *mut RgTabularMdp) {
    if !mdp.is_null() {
        drop(Box::from_raw(mdp));
    }
}

/// Exact optimum of the risk objective over history-dependent policies: scans
/// `grid_n` auxiliary values and solves the augmented dynamic program at each.
///
/// # Safety
/// Handles must be live; `upsilon` and `objective` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_oracle_optimum(
    mdp: *const RgTabularMdp,
    spec: *const RgRiskSpec,
    grid_n: usize,
    upsilon: *mut f64,
    objective: *mut f64,
) -> RgStatus {
    guard(|| {
        let m = mdp.as_ref().ok_or_else(|| null("mdp"))?;
        let s = spec.as_ref().ok_or_else(|| null("spec"))?;
        if upsilon.is_null() || objective.is_null() {
            return Err(null("upsilon or objective"));
        }
        if grid_n < 2 {
            return Err((RgStatus::InvalidArgument, "grid_n must be >= 2".into()));
        }
        let graph = lift(AugmentedGraph::new(&m.mdp))?;
        let bracket = lift(mdp_bracket(&m.mdp, &s.spec))?;
        let scan = lift(optimal_upsilon_scan(&graph, &s.spec, bracket, grid_n))?;
        *upsilon = scan.upsilon_star;
        *objective = scan.objective;
        Ok(())
    })
}
