//! C ABI over `hormander_lab`.
//!
//! Every function returns an [`HlStatus`]; results go through out-pointers.
//! On failure, [`hl_last_error_message`] describes the most recent error on
//! the calling thread. Handles are opaque and owned by the caller until
//! passed to the matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hormander_lab::chart::ExpChart;
use hormander_lab::geometry::distance;
use hormander_lab::models::ModelOperator;
use hormander_lab::modulus::{DiniValue, ModulusOfContinuity};
use hormander_lab::schauder::{wang_iteration, Forcing};
use hormander_lab::LabError;

/// Status codes of every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Parse = 3,
    DimensionMismatch = 4,
    RankDeficient = 5,
    OutOfChart = 6,
    Numeric = 7,
    SolverDivergence = 8,
    Panic = 9,
}

/// A model operator: generators, coefficient matrix and optional kernel.
pub struct HlModel {
    inner: ModelOperator,
}

/// An exponential chart at a base point.
pub struct HlChart {
    inner: ExpChart,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &LabError) -> HlStatus {
    match e {
        LabError::Input(_) | LabError::Ellipticity { .. } | LabError::Binning { .. } => {
            HlStatus::InvalidInput
        }
        LabError::Parse(_) => HlStatus::Parse,
        LabError::DimensionMismatch { .. } => HlStatus::DimensionMismatch,
        LabError::RankDeficient { .. } => HlStatus::RankDeficient,
        LabError::ChartRadius { .. } | LabError::OutOfChart { .. } => HlStatus::OutOfChart,
        LabError::SolverDivergence { .. } => HlStatus::SolverDivergence,
        LabError::Numeric(_)
        | LabError::FlowEscape { .. }
        | LabError::SingularEvaluation { .. }
        | LabError::Quadrature { .. } => HlStatus::Numeric,
    }
}

struct Fail(HlStatus, String);

impl From<LabError> for Fail {
    fn from(e: LabError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(HlStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            HlStatus::Ok
        }
        Ok(Err(Fail(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            HlStatus::Panic
        }
    }
}

unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Fail(HlStatus::InvalidInput, format!("`{what}` is not UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out(out: *mut f64, values: &[f64]) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

fn check_len(len: usize, dim: usize) -> Result<(), Fail> {
    if len != dim {
        return Err(LabError::DimensionMismatch {
            expected: dim,
            actual: len,
        }
        .into());
    }
    Ok(())
}

unsafe fn model_ref<'a>(m: *const HlModel) -> Result<&'a ModelOperator, Fail> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

unsafe fn chart_ref<'a>(c: *const HlChart) -> Result<&'a ExpChart, Fail> {
    c.as_ref().map(|c| &c.inner).ok_or_else(|| null("chart"))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn hl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Shipped model by name: `heat`, `heat1`, `kolmogorov`, `heisenberg-time`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_model_by_name(name: *const c_char, out: *mut *mut HlModel) -> HlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = ModelOperator::by_name(text(name, "name")?)?;
        *out = Box::into_raw(Box::new(HlModel { inner }));
        Ok(())
    })
}

/// Model from a JSON or TOML vector-field file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_model_from_file(path: *const c_char, out: *mut *mut HlModel) -> HlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = ModelOperator::from_file(Path::new(text(path, "path")?))?;
        *out = Box::into_raw(Box::new(HlModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `hl_model_*` and not be freed twice; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hl_model_free(model: *mut HlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_model_dimension(model: *const HlModel, out: *mut usize) -> HlStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.dimension();
        Ok(())
    })
}

/// Homogeneous dimension `q` at the origin.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_model_homogeneous_dimension(model: *const HlModel, out: *mut u32) -> HlStatus {
    guard(|| {
        let q = model_ref(model)?.homogeneous_dimension()?;
        *out.as_mut().ok_or_else(|| null("out"))? = q;
        Ok(())
    })
}

/// `Gamma(z, zeta)` for models with a closed fundamental solution.
///
/// # Safety
/// `z` and `zeta` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_model_gamma(
    model: *const HlModel,
    z: *const f64,
    zeta: *const f64,
    len: usize,
    out: *mut f64,
) -> HlStatus {
    guard(|| {
        let m = model_ref(model)?;
        check_len(len, m.dimension())?;
        let v = m.gamma(slice(z, len, "z")?, slice(zeta, len, "zeta")?)?;
        write_out(out, &[v])
    })
}

/// Chart at base point `z` (`len` = model dimension).
///
/// # Safety
/// `model` must be a live handle, `z` must hold `len` doubles, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hl_chart_at(
    model: *const HlModel,
    z: *const f64,
    len: usize,
    out: *mut *mut HlChart,
) -> HlStatus {
    guard(|| {
        let m = model_ref(model)?;
        check_len(len, m.dimension())?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = m.chart_at(slice(z, len, "z")?)?;
        *out = Box::into_raw(Box::new(HlChart { inner }));
        Ok(())
    })
}

/// # Safety
/// `chart` must come from `hl_chart_at` and not be freed twice; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hl_chart_free(chart: *mut HlChart) {
    if !chart.is_null() {
        drop(Box::from_raw(chart));
    }
}

/// Homogeneous degrees of the basis, written to `out[0..len]`.
///
/// # Safety
/// `chart` must be a live handle; `out` must hold `len` entries.
#[no_mangle]
pub unsafe extern "C" fn hl_chart_degrees(chart: *const HlChart, out: *mut u32, len: usize) -> HlStatus {
    guard(|| {
        let c = chart_ref(chart)?;
        check_len(len, c.dimension())?;
        if out.is_null() {
            return Err(null("out"));
        }
        let d = c.degrees();
        ptr::copy_nonoverlapping(d.as_ptr(), out, d.len());
        Ok(())
    })
}

/// `E(z, h)`.
///
/// # Safety
/// `h` and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hl_chart_exp(chart: *const HlChart, h: *const f64, len: usize, out: *mut f64) -> HlStatus {
    guard(|| {
        let c = chart_ref(chart)?;
        check_len(len, c.dimension())?;
        write_out(out, &c.e_map(slice(h, len, "h")?)?)
    })
}

/// `Log(zeta)`, the chart coordinates of `zeta`.
///
/// # Safety
/// `zeta` and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hl_chart_log(chart: *const HlChart, zeta: *const f64, len: usize, out: *mut f64) -> HlStatus {
    guard(|| {
        let c = chart_ref(chart)?;
        check_len(len, c.dimension())?;
        write_out(out, &c.log_map(slice(zeta, len, "zeta")?)?)
    })
}

/// Quasi-distance `d(a, b)`, read in the chart rebased at `a`.
///
/// # Safety
/// `a` and `b` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_chart_distance(
    chart: *const HlChart,
    a: *const f64,
    b: *const f64,
    len: usize,
    out: *mut f64,
) -> HlStatus {
    guard(|| {
        let c = chart_ref(chart)?;
        check_len(len, c.dimension())?;
        let d = distance(c, slice(a, len, "a")?, slice(b, len, "b")?)?;
        write_out(out, &[d])
    })
}

/// `int_a^b omega(r)/r dr` for a modulus spec (`zero`, `lip`, `log`,
/// `pow:<alpha>`). A divergent integral sets `*divergent = true` and
/// `*out = INFINITY`.
///
/// # Safety
/// `modulus` must be NUL-terminated; `out` and `divergent` writable.
#[no_mangle]
pub unsafe extern "C" fn hl_dini_integral(
    modulus: *const c_char,
    a: f64,
    b: f64,
    out: *mut f64,
    divergent: *mut bool,
) -> HlStatus {
    guard(|| {
        let m = ModulusOfContinuity::parse(text(modulus, "modulus")?)?;
        let (v, d) = match m.dini_integral(a, b)? {
            DiniValue::Finite(v) => (v, false),
            DiniValue::Divergent => (f64::INFINITY, true),
        };
        write_out(out, &[v])?;
        *divergent.as_mut().ok_or_else(|| null("divergent"))? = d;
        Ok(())
    })
}

/// Iteration ledger for the forcing `omega_f(d(0, z))` as a JSON string.
/// Release it with `hl_string_free`.
///
/// # Safety
/// `model` must be live, `omega_f` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hl_schauder_ledger_json(
    model: *const HlModel,
    omega_f: *const c_char,
    levels: usize,
    grid: usize,
    out: *mut *mut c_char,
) -> HlStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let f = Forcing::radial(m, ModulusOfContinuity::parse(text(omega_f, "omega_f")?)?)?;
        let ledger = wang_iteration(m, &f, levels, grid)?;
        let json = serde_json::to_string(&ledger).map_err(|e| Fail(HlStatus::Numeric, e.to_string()))?;
        let c = CString::new(json).map_err(|e| Fail(HlStatus::Numeric, e.to_string()))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be freed twice; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
