//! C ABI over the solver.
//!
//! Configurations and grids cross the boundary as opaque handles created by
//! this library and released with the matching `_free` function. Every
//! fallible call returns an [`HmeStatus`]; on failure the message is
//! available from [`hme_last_error_message`] on the same thread.
//!
//! # Safety
//!
//! String arguments must be NUL-terminated. Handles must come from this
//! library and must not be used after they are freed. Null handles and
//! null out-pointers are reported as [`HmeStatus::NullPointer`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hme::config::{load_config, parse_config, RunConfig};
use hme::grid::JointDensityGrid;
use hme::oracles::total_variation;
use hme::pipeline::{simulate_ssa, solve_cme, solve_hme};
use hme::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HmeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Numerical = 4,
    Io = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Parsed run configuration.
pub struct HmeConfig(RunConfig);

/// Joint density over lattice points `(d, c)`.
pub struct HmeGrid(JointDensityGrid);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn classify(e: &Error) -> HmeStatus {
    match e {
        Error::Io { .. } => HmeStatus::Io,
        Error::GridFormat { .. } => HmeStatus::Io,
        e if e.is_config() => HmeStatus::Config,
        _ => HmeStatus::Numerical,
    }
}

fn fail(status: HmeStatus, msg: impl Into<String>) -> HmeStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> HmeStatus) -> HmeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(HmeStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: hme::Result<T>) -> Result<T, HmeStatus> {
    r.map_err(|e| fail(classify(&e), e.to_string()))
}

unsafe fn cstr<'a>(s: *const c_char) -> Result<&'a str, HmeStatus> {
    if s.is_null() {
        return Err(fail(HmeStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(HmeStatus::InvalidUtf8, "argument is not valid UTF-8"))
}

unsafe fn config<'a>(cfg: *const HmeConfig) -> Result<&'a HmeConfig, HmeStatus> {
    cfg.as_ref().ok_or_else(|| fail(HmeStatus::NullPointer, "null config handle"))
}

unsafe fn config_mut<'a>(cfg: *mut HmeConfig) -> Result<&'a mut HmeConfig, HmeStatus> {
    cfg.as_mut().ok_or_else(|| fail(HmeStatus::NullPointer, "null config handle"))
}

unsafe fn grid<'a>(g: *const HmeGrid) -> Result<&'a HmeGrid, HmeStatus> {
    g.as_ref().ok_or_else(|| fail(HmeStatus::NullPointer, "null grid handle"))
}

unsafe fn put<T>(out: *mut T, value: T) -> HmeStatus {
    if out.is_null() {
        return fail(HmeStatus::NullPointer, "null output pointer");
    }
    out.write(value);
    HmeStatus::Ok
}

fn run(f: impl FnOnce() -> Result<(), HmeStatus>) -> HmeStatus {
    guard(|| match f() {
        Ok(()) => HmeStatus::Ok,
        Err(s) => s,
    })
}

fn ok(s: HmeStatus) -> Result<(), HmeStatus> {
    if s == HmeStatus::Ok {
        Ok(())
    } else {
        Err(s)
    }
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hme_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hme_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a TOML configuration document.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn hme_config_parse(text: *const c_char, out: *mut *mut HmeConfig) -> HmeStatus {
    run(|| {
        let cfg = lift(parse_config(cstr(text)?))?;
        ok(put(out, Box::into_raw(Box::new(HmeConfig(cfg)))))
    })
}

/// Reads and parses a configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn hme_config_load(path: *const c_char, out: *mut *mut HmeConfig) -> HmeStatus {
    run(|| {
        let cfg = lift(load_config(Path::new(cstr(path)?)))?;
        ok(put(out, Box::into_raw(Box::new(HmeConfig(cfg)))))
    })
}

/// Overrides the final time and revalidates.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hme_config_set_tau(cfg: *mut HmeConfig, tau: f64) -> HmeStatus {
    run(|| {
        let c = config_mut(cfg)?;
        c.0 = lift(c.0.clone().with_tau(tau))?;
        Ok(())
    })
}

/// Overrides the SSA seed and trajectory count.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hme_config_set_ssa(cfg: *mut HmeConfig, seed: u64, n_traj: u64) -> HmeStatus {
    run(|| {
        let c = config_mut(cfg)?;
        let mut next = c.0.clone();
        next.oracle.seed = seed;
        next.oracle.n_traj = n_traj;
        lift(next.validate())?;
        c.0 = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hme_config_free(cfg: *mut HmeConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

unsafe fn produce(
    cfg: *const HmeConfig,
    out: *mut *mut HmeGrid,
    f: impl FnOnce(&RunConfig) -> hme::Result<JointDensityGrid>,
) -> HmeStatus {
    run(|| {
        if out.is_null() {
            return Err(fail(HmeStatus::NullPointer, "null output pointer"));
        }
        let g = lift(f(&config(cfg)?.0))?;
        ok(put(out, Box::into_raw(Box::new(HmeGrid(g)))))
    })
}

/// Integrates the moment system and returns the reconstructed joint density.
///
/// # Safety
/// `cfg` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn hme_solve_hme(cfg: *const HmeConfig, out: *mut *mut HmeGrid) -> HmeStatus {
    produce(cfg, out, |c| solve_hme(c, None).map(|r| r.joint))
}

/// Integrates the master equation on the full lattice.
///
/// # Safety
/// `cfg` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn hme_solve_cme(cfg: *const HmeConfig, out: *mut *mut HmeGrid) -> HmeStatus {
    produce(cfg, out, solve_cme)
}

/// Empirical law of simulated trajectories.
///
/// # Safety
/// `cfg` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn hme_simulate_ssa(cfg: *const HmeConfig, out: *mut *mut HmeGrid) -> HmeStatus {
    produce(cfg, out, |c| simulate_ssa(c).map(|r| r.grid))
}

/// Reads a grid file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn hme_grid_read(path: *const c_char, out: *mut *mut HmeGrid) -> HmeStatus {
    run(|| {
        let g = lift(JointDensityGrid::read(Path::new(cstr(path)?)))?;
        ok(put(out, Box::into_raw(Box::new(HmeGrid(g)))))
    })
}

/// Writes a grid file.
///
/// # Safety
/// `g` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hme_grid_write(g: *const HmeGrid, path: *const c_char) -> HmeStatus {
    run(|| {
        let g = grid(g)?;
        let p = cstr(path)?;
        std::fs::write(p, g.0.to_text()).map_err(|e| fail(HmeStatus::Io, format!("{p}: {e}")))
    })
}

/// Number of stored points; 0 for a null handle.
///
/// # Safety
/// `g` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hme_grid_len(g: *const HmeGrid) -> usize {
    g.as_ref().map_or(0, |g| g.0.len())
}

/// # Safety
/// `g` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hme_grid_slow_dims(g: *const HmeGrid) -> usize {
    g.as_ref().map_or(0, |g| g.0.slow_dims())
}

/// # Safety
/// `g` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hme_grid_fast_dims(g: *const HmeGrid) -> usize {
    g.as_ref().map_or(0, |g| g.0.fast_dims())
}

/// # Safety
/// `g` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn hme_grid_total_mass(g: *const HmeGrid, out: *mut f64) -> HmeStatus {
    run(|| ok(put(out, grid(g)?.0.total_mass())))
}

/// Copies the grid in lexicographic order. `d` receives `len * slow_dims`
/// values, `c` receives `len * fast_dims` and `p` receives `len`, where
/// `capacity` is the number of points the buffers can hold.
///
/// # Safety
/// The buffers must be writable for the sizes above.
#[no_mangle]
pub unsafe extern "C" fn hme_grid_copy(
    g: *const HmeGrid,
    d: *mut i64,
    c: *mut i64,
    p: *mut f64,
    capacity: usize,
) -> HmeStatus {
    run(|| {
        let g = &grid(g)?.0;
        if d.is_null() || c.is_null() || p.is_null() {
            return Err(fail(HmeStatus::NullPointer, "null output buffer"));
        }
        if capacity < g.len() {
            return Err(fail(
                HmeStatus::BufferTooSmall,
                format!("grid has {} points, buffers hold {capacity}", g.len()),
            ));
        }
        let (l, q) = (g.slow_dims(), g.fast_dims());
        let d = std::slice::from_raw_parts_mut(d, g.len() * l);
        let c = std::slice::from_raw_parts_mut(c, g.len() * q);
        let p = std::slice::from_raw_parts_mut(p, g.len());
        for (i, (pt, v)) in g.iter().enumerate() {
            d[i * l..(i + 1) * l].copy_from_slice(&pt.d);
            c[i * q..(i + 1) * q].copy_from_slice(&pt.c);
            p[i] = v;
        }
        Ok(())
    })
}

/// Total variation distance between two grids.
///
/// # Safety
/// `a` and `b` must be live handles and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn hme_total_variation(a: *const HmeGrid, b: *const HmeGrid, out: *mut f64) -> HmeStatus {
    run(|| {
        let tv = lift(total_variation(&grid(a)?.0, &grid(b)?.0))?;
        ok(put(out, tv))
    })
}

/// # Safety
/// `g` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hme_grid_free(g: *mut HmeGrid) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}
