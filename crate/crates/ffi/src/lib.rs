//! C ABI over `gyrolab`.
//!
//! Every call returns a [`GyrolabStatus`]; on failure the message is kept
//! per thread and read with [`gyrolab_last_error_message`]. Systems are
//! opaque handles created from TOML text holding `[surface]` and `[field]`
//! tables and released with [`gyrolab_system_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use gyrolab::geometry::{ChartId, ChartPoint, FieldSpec, Surface};
use gyrolab::magflow::{curvature_residual, integrate, Flow};
use gyrolab::reduced::{make_reduced, trace_level_circle};
use gyrolab::section::{rotation_number, Region, SectionMap, SectionOpts};
use gyrolab::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GyrolabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Parse = 4,
    Precondition = 5,
    /// Integration, budget or consistency failure.
    Numerical = 6,
    Io = 7,
    Domain = 8,
    Panic = 9,
}

/// Phase-space state in a chart (`chart`: 0 main, 1 south, 2 north).
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GyrolabState {
    pub chart: u8,
    pub t: f64,
    pub q1: f64,
    pub q2: f64,
    pub v1: f64,
    pub v2: f64,
}

/// A surface together with a magnetic field.
pub struct GyrolabSystem {
    surface: Surface,
    field: FieldSpec,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> GyrolabStatus {
    match e {
        Error::Stage { inner, .. } => status_of(inner),
        Error::Config(_) | Error::Mode(_) => GyrolabStatus::Config,
        Error::Parse { .. } => GyrolabStatus::Parse,
        Error::Precondition(_) => GyrolabStatus::Precondition,
        Error::Io(_) => GyrolabStatus::Io,
        Error::Domain(..) => GyrolabStatus::Domain,
        _ => GyrolabStatus::Numerical,
    }
}

enum Fail {
    Null,
    Utf8,
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GyrolabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            GyrolabStatus::Ok
        }
        Ok(Err(Fail::Null)) => {
            set_error("null pointer argument".into());
            GyrolabStatus::NullPointer
        }
        Ok(Err(Fail::Utf8)) => {
            set_error("string argument is not valid UTF-8".into());
            GyrolabStatus::InvalidUtf8
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            GyrolabStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null);
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Utf8)
}

unsafe fn sys<'a>(p: *const GyrolabSystem) -> Result<&'a GyrolabSystem, Fail> {
    p.as_ref().ok_or(Fail::Null)
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null)
}

fn region(lo: f64, hi: f64) -> Region {
    if lo.is_nan() || hi.is_nan() {
        Region::whole()
    } else {
        Region::band(lo, hi)
    }
}

/// Version string of the library; static, do not free.
#[no_mangle]
pub extern "C" fn gyrolab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated, truncated
/// to `len - 1` bytes). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn gyrolab_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Build a system from TOML text with `[surface]` and `[field]` tables.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out_system` writable.
#[no_mangle]
pub unsafe extern "C" fn gyrolab_system_from_toml(toml: *const c_char, out_system: *mut *mut GyrolabSystem) -> GyrolabStatus {
    guard(|| {
        let src = text(toml)?;
        let slot = out(out_system)?;
        *slot = std::ptr::null_mut();
        let (surface, field) = gyrolab::config::system_from_str(src)?;
        *slot = Box::into_raw(Box::new(GyrolabSystem { surface, field }));
        Ok(())
    })
}

/// Release a system; null is ignored.
///
/// # Safety
/// `system` must come from [`gyrolab_system_from_toml`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gyrolab_system_free(system: *mut GyrolabSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// Field value `b` at a main-chart point.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gyrolab_field_value(system: *const GyrolabSystem, q1: f64, q2: f64, value: *mut f64) -> GyrolabStatus {
    guard(|| {
        let s = sys(system)?;
        let v = out(value)?;
        s.surface.check_domain(ChartId::Main, [q1, q2])?;
        *v = s.field.value(&s.surface, ChartId::Main, [q1, q2]);
        Ok(())
    })
}

/// Integrate the flow at speed `s` from `(q1, q2)` with unit-speed heading `angle`
/// over `[0, t_end]`. Writes the final state and, if non-null, `max |kappa - b/s|`.
///
/// # Safety
/// `system` and `end` must be valid; `curvature_error` may be null.
#[no_mangle]
pub unsafe extern "C" fn gyrolab_simulate(
    system: *const GyrolabSystem,
    s: f64,
    q1: f64,
    q2: f64,
    angle: f64,
    t_end: f64,
    tol: f64,
    end: *mut GyrolabState,
    curvature_error: *mut f64,
) -> GyrolabStatus {
    guard(|| {
        let sy = sys(system)?;
        let e = out(end)?;
        let flow = Flow::new(&sy.surface, &sy.field, s, tol)?;
        let st = flow.state_at(ChartPoint::main(q1, q2), angle)?;
        let traj = integrate(&flow, st, t_end, 1)?;
        let last = traj.samples[traj.samples.len() - 1];
        *e = GyrolabState { chart: last.chart.code(), t: last.t, q1: last.q[0], q2: last.q[1], v1: last.v[0], v2: last.v[1] };
        if let Some(k) = curvature_error.as_mut() {
            *k = curvature_residual(&flow, &traj)?.max;
        }
        Ok(())
    })
}

/// One return (`dir = +1`) or inverse return (`dir = -1`) of the section map on the
/// band `lo <= q1 <= hi` (NaN bounds: whole surface). `x` is updated in place.
///
/// # Safety
/// `system` must be valid and `x` point to two doubles; `t` may be null.
#[no_mangle]
pub unsafe extern "C" fn gyrolab_return_map(
    system: *const GyrolabSystem,
    s: f64,
    lo: f64,
    hi: f64,
    tol: f64,
    dir: i32,
    x: *mut f64,
    t: *mut f64,
) -> GyrolabStatus {
    guard(|| {
        let sy = sys(system)?;
        if x.is_null() {
            return Err(Fail::Null);
        }
        let xs = std::slice::from_raw_parts_mut(x, 2);
        let map = SectionMap::new(&sy.surface, &sy.field, s, region(lo, hi), SectionOpts { tol, ..Default::default() })?;
        let p = if dir < 0 { map.inverse([xs[0], xs[1]])? } else { map.apply([xs[0], xs[1]])? };
        xs.copy_from_slice(&p.q);
        if let Some(t) = t.as_mut() {
            *t = p.t;
        }
        Ok(())
    })
}

/// Rotation number (radians per return) of the section orbit through `(x1, x2)`.
///
/// # Safety
/// `system` and `rho` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gyrolab_rotation_number(
    system: *const GyrolabSystem,
    s: f64,
    lo: f64,
    hi: f64,
    tol: f64,
    x1: f64,
    x2: f64,
    iterates: usize,
    rho: *mut f64,
) -> GyrolabStatus {
    guard(|| {
        let sy = sys(system)?;
        let r = out(rho)?;
        let map = SectionMap::new(&sy.surface, &sy.field, s, region(lo, hi), SectionOpts { tol, ..Default::default() })?;
        let est = rotation_number(&map, [x1, x2], iterates)?;
        if est.escaped {
            return Err(Error::Precondition("orbit left the section region".into()).into());
        }
        *r = est.value;
        Ok(())
    })
}

/// Period of the guiding-center circle through a main-chart point.
///
/// # Safety
/// `system` and `period` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gyrolab_level_period(system: *const GyrolabSystem, q1: f64, q2: f64, period: *mut f64) -> GyrolabStatus {
    guard(|| {
        let sy = sys(system)?;
        let p = out(period)?;
        let rs = make_reduced(&sy.surface, &sy.field, None)?;
        let c = rs.h([q1, q2])?;
        *p = trace_level_circle(&rs, c, [q1, q2])?.period;
        Ok(())
    })
}

/// Run a scenario config file into `out_dir`.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn gyrolab_run_scenario(config_path: *const c_char, out_dir: *const c_char) -> GyrolabStatus {
    guard(|| {
        let c = text(config_path)?;
        let o = text(out_dir)?;
        gyrolab::cli::run_scenario(Path::new(c), Path::new(o))?;
        Ok(())
    })
}
