//! C interface. Objects are opaque handles created by `bhl_*` constructors and
//! released by the matching `*_free` function. Every fallible call returns a
//! [`BhlStatus`]; on failure `bhl_last_error` describes the cause.
//! Strings returned through out-parameters are owned by the caller and must be
//! released with `bhl_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use bhl::cell::{solve_corrector, voigt_reuss, CellSolution};
use bhl::config::ScenarioConfig;
use bhl::fiber::Variant;
use bhl::germ::{regime_classify, theta_samples, Regime};
use bhl::scenarios::{builtin, Scenario};
use bhl::study::operator_error_study;
use bhl::BhlError;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BhlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Validation = 3,
    Numerical = 4,
    Panic = 5,
}

/// Convergence regime of a scenario.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BhlRegime {
    Exact = 0,
    Improved = 1,
    General = 2,
}

/// Opaque scenario handle.
pub struct BhlScenario {
    inner: Scenario,
}

/// Opaque cell-problem solution.
pub struct BhlCell {
    inner: CellSolution,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap_or_default());
}

fn status_of(e: &BhlError) -> BhlStatus {
    match e {
        BhlError::Numerical(_) => BhlStatus::Numerical,
        BhlError::UnknownScenario(_) => BhlStatus::InvalidArgument,
        _ => BhlStatus::Validation,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (BhlStatus, String)>) -> BhlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            BhlStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            BhlStatus::Panic
        }
    }
}

fn lift<T>(r: bhl::Result<T>) -> Result<T, (BhlStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (BhlStatus, String)> {
    if p.is_null() {
        return Err((BhlStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (BhlStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), (BhlStatus, String)> {
    let c = CString::new(s).map_err(|_| (BhlStatus::Numerical, "output contains a NUL byte".to_string()))?;
    *out = c.into_raw();
    Ok(())
}

fn check_out<T>(out: *mut T, what: &str) -> Result<(), (BhlStatus, String)> {
    if out.is_null() {
        Err((BhlStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Message describing the last failure on this thread. The pointer stays valid
/// until the next `bhl_*` call on the same thread.
#[no_mangle]
pub extern "C" fn bhl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn bhl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a built-in scenario by name.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bhl_scenario_builtin(name: *const c_char, out: *mut *mut BhlScenario) -> BhlStatus {
    guard(|| {
        check_out(out, "out")?;
        let name = read_str(name, "name")?;
        let sc = lift(builtin(name))?;
        *out = Box::into_raw(Box::new(BhlScenario { inner: sc }));
        Ok(())
    })
}

/// Parses and validates a scenario config given as JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bhl_scenario_from_json(json: *const c_char, out: *mut *mut BhlScenario) -> BhlStatus {
    guard(|| {
        check_out(out, "out")?;
        let text = read_str(json, "json")?;
        let cfg = lift(ScenarioConfig::parse(text, "<json>"))?;
        let sc = lift(cfg.to_scenario("<json>"))?;
        *out = Box::into_raw(Box::new(BhlScenario { inner: sc }));
        Ok(())
    })
}

/// Serializes a scenario to its config JSON.
///
/// # Safety
/// `sc` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bhl_scenario_to_json(sc: *const BhlScenario, out: *mut *mut c_char) -> BhlStatus {
    guard(|| {
        check_out(out, "out")?;
        let sc = sc.as_ref().ok_or((BhlStatus::NullPointer, "scenario is null".to_string()))?;
        let json = lift(ScenarioConfig::from_scenario(&sc.inner).to_json())?;
        write_string(out, json)
    })
}

/// Spatial dimension of the scenario lattice, or 0 for a null handle.
///
/// # Safety
/// `sc` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bhl_scenario_dim(sc: *const BhlScenario) -> usize {
    sc.as_ref().map_or(0, |s| s.inner.model.lattice.dim)
}

/// # Safety
/// `sc` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn bhl_scenario_free(sc: *mut BhlScenario) {
    if !sc.is_null() {
        drop(Box::from_raw(sc));
    }
}

/// Solves the cell problem at Fourier cutoff `cutoff`.
///
/// # Safety
/// `sc` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bhl_cell_solve(sc: *const BhlScenario, cutoff: usize, out: *mut *mut BhlCell) -> BhlStatus {
    guard(|| {
        check_out(out, "out")?;
        let sc = sc.as_ref().ok_or((BhlStatus::NullPointer, "scenario is null".to_string()))?;
        if cutoff == 0 {
            return Err((BhlStatus::InvalidArgument, "cutoff must be positive".into()));
        }
        let cell = lift(solve_corrector(&sc.inner.model, cutoff))?;
        *out = Box::into_raw(Box::new(BhlCell { inner: cell }));
        Ok(())
    })
}

/// Order `m` of the effective matrix, or 0 for a null handle.
///
/// # Safety
/// `cell` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bhl_cell_order(cell: *const BhlCell) -> usize {
    cell.as_ref().map_or(0, |c| c.inner.g_eff.nrows())
}

/// Copies the effective matrix row-major into `re` and `im` (each `len >= m*m`).
///
/// # Safety
/// `cell` must be a live handle; `re` and `im` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bhl_cell_effective(cell: *const BhlCell, re: *mut f64, im: *mut f64, len: usize) -> BhlStatus {
    guard(|| {
        let cell = cell.as_ref().ok_or((BhlStatus::NullPointer, "cell is null".to_string()))?;
        check_out(re, "re")?;
        check_out(im, "im")?;
        let g = &cell.inner.g_eff;
        let m = g.nrows();
        if len < m * m {
            return Err((BhlStatus::InvalidArgument, format!("buffers need {} entries, got {len}", m * m)));
        }
        for i in 0..m {
            for j in 0..m {
                *re.add(i * m + j) = g[(i, j)].re;
                *im.add(i * m + j) = g[(i, j)].im;
            }
        }
        Ok(())
    })
}

/// Residual norm of the Galerkin cell solve and the Voigt and Reuss margins.
///
/// # Safety
/// `cell` must be a live handle; each out-pointer must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn bhl_cell_diagnostics(
    cell: *const BhlCell,
    residual: *mut f64,
    voigt_margin: *mut f64,
    reuss_margin: *mut f64,
) -> BhlStatus {
    guard(|| {
        let cell = cell.as_ref().ok_or((BhlStatus::NullPointer, "cell is null".to_string()))?;
        let vr = voigt_reuss(&cell.inner);
        for (p, v) in [(residual, cell.inner.residual_norm), (voigt_margin, vr.upper_margin), (reuss_margin, vr.lower_margin)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `cell` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn bhl_cell_free(cell: *mut BhlCell) {
    if !cell.is_null() {
        drop(Box::from_raw(cell));
    }
}

/// Classifies the regime over `thetas` sampled directions.
///
/// # Safety
/// `sc` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bhl_regime(sc: *const BhlScenario, thetas: usize, out: *mut BhlRegime) -> BhlStatus {
    guard(|| {
        check_out(out, "out")?;
        let sc = sc.as_ref().ok_or((BhlStatus::NullPointer, "scenario is null".to_string()))?;
        let s = &sc.inner;
        let cell = lift(solve_corrector(&s.model, s.defaults.cell_cutoff))?;
        let wc = match s.model.q {
            Some(_) => Some(lift(bhl::cell::weighted_corrector(&s.model, &cell))?),
            None => None,
        };
        let dirs = theta_samples(s.model.lattice.dim, thetas.max(1));
        let rep = lift(regime_classify(&s.model, &cell, None, wc.as_ref(), &dirs, s.validation.c_star_hat))?;
        *out = match rep.regime {
            Regime::Exact => BhlRegime::Exact,
            Regime::Improved => BhlRegime::Improved,
            Regime::General => BhlRegime::General,
        };
        Ok(())
    })
}

/// Runs an operator error study with the scenario defaults and returns the
/// report as JSON. `ss` and `eps` override the defaults when non-null.
///
/// # Safety
/// `sc` must be a live handle, `variant` a NUL-terminated string, `ss` and
/// `eps` null or arrays of `n_ss` and `n_eps` doubles, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bhl_error_study_json(
    sc: *const BhlScenario,
    variant: *const c_char,
    ss: *const f64,
    n_ss: usize,
    eps: *const f64,
    n_eps: usize,
    out: *mut *mut c_char,
) -> BhlStatus {
    guard(|| {
        check_out(out, "out")?;
        let sc = sc.as_ref().ok_or((BhlStatus::NullPointer, "scenario is null".to_string()))?;
        let name = read_str(variant, "variant")?;
        let variant = Variant::parse(name).ok_or((BhlStatus::InvalidArgument, format!("unknown variant `{name}`")))?;
        let s = &sc.inner;
        let mut spec = s.study_spec(variant);
        if !ss.is_null() {
            spec.ss = std::slice::from_raw_parts(ss, n_ss).to_vec();
        }
        if !eps.is_null() {
            spec.eps = std::slice::from_raw_parts(eps, n_eps).to_vec();
        }
        let prep = lift(s.prepare(None, variant.uses_weight(s.model.q.is_some())))?;
        let rep = lift(operator_error_study(&prep.ctx, &prep.cell, &spec, Some(s.expected)))?;
        let json = serde_json::to_string(&rep).map_err(|e| (BhlStatus::Numerical, e.to_string()))?;
        write_string(out, json)
    })
}
