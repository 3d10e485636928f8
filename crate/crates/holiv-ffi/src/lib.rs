//! C ABI for the holiv core.
//!
//! Objects cross the boundary as opaque heap handles created by `*_new`
//! style functions and released by the matching `*_free`. Every fallible
//! call returns a [`HolivStatus`]; the message of the last failure on the
//! calling thread is available from [`holiv_last_error`]. Panics are caught
//! and reported as [`HolivStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use holiv::cocycle::{wilson, wilson_discrepancy, CocycleError, CocycleField, FieldSpec, TrigField};
use holiv::dynamics::{enumerate_periodic_orbits, HyperbolicMap};
use holiv::livsic::{livsic_solve, LivsicConfig, LivsicError, LivsicReport};
use holiv::rng::stage_rng;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HolivStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotHyperbolic = 3,
    BufferTooSmall = 4,
    NotIrreducible = 5,
    OverBudget = 6,
    NumericalFailure = 7,
    Panic = 8,
}

/// Toral automorphism.
pub struct HolivMap(HyperbolicMap);

/// Unitary cocycle over a map.
pub struct HolivCocycle(CocycleField);

/// Result of a Livšic solve.
pub struct HolivLivsicReport(LivsicReport);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl ToString) {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).expect("nul bytes removed"));
}

fn guard(f: impl FnOnce() -> Result<(), (HolivStatus, String)>) -> HolivStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            HolivStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside holiv");
            HolivStatus::Panic
        }
    }
}

fn null(what: &str) -> (HolivStatus, String) {
    (HolivStatus::NullPointer, format!("{what} is null"))
}

fn livsic_status(e: &LivsicError) -> HolivStatus {
    match e {
        LivsicError::NotIrreducible => HolivStatus::NotIrreducible,
        LivsicError::OverBudget { .. } => HolivStatus::OverBudget,
        LivsicError::Cocycle(CocycleError::RankMismatch(..)) | LivsicError::RankMismatch { .. } => HolivStatus::InvalidArgument,
        _ => HolivStatus::NumericalFailure,
    }
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn holiv_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            // SAFETY: caller guarantees `len` writable bytes at `buf`.
            unsafe {
                ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Static NUL-terminated version string.
#[no_mangle]
pub extern "C" fn holiv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds the map with row-major integer entries `entries[0..4]`.
///
/// # Safety
/// `entries` must point to four `int64_t`; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn holiv_map_new(entries: *const i64, out: *mut *mut HolivMap) -> HolivStatus {
    guard(|| {
        if entries.is_null() {
            return Err(null("entries"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: four readable entries per the contract.
        let e = unsafe { std::slice::from_raw_parts(entries, 4) };
        let map = HyperbolicMap::from_entries([e[0], e[1], e[2], e[3]]).map_err(|e| (HolivStatus::NotHyperbolic, e.to_string()))?;
        // SAFETY: `out` is valid for a write.
        unsafe { *out = Box::into_raw(Box::new(HolivMap(map))) };
        Ok(())
    })
}

/// # Safety
/// `map` must be null or a handle from [`holiv_map_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn holiv_map_free(map: *mut HolivMap) {
    if !map.is_null() {
        // SAFETY: handle was created by Box::into_raw.
        drop(unsafe { Box::from_raw(map) });
    }
}

/// Number of points fixed by the `n`-th iterate, `|det(M^n - I)|`.
///
/// # Safety
/// `map` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn holiv_map_fixed_point_count(map: *const HolivMap, n: u32, out: *mut u64) -> HolivStatus {
    guard(|| {
        // SAFETY: live handle per the contract.
        let map = unsafe { map.as_ref() }.ok_or_else(|| null("map"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if n == 0 {
            return Err((HolivStatus::InvalidArgument, "period must be positive".into()));
        }
        let count = u64::try_from(map.0.fixed_point_count(n)).map_err(|_| (HolivStatus::InvalidArgument, "count overflows u64".into()))?;
        // SAFETY: `out` is valid for a write.
        unsafe { *out = count };
        Ok(())
    })
}

/// Cocycle from a JSON field spec (the `kind`-tagged format).
///
/// # Safety
/// `map` must be a live handle, `json` a NUL-terminated string, `out`
/// valid for a write.
#[no_mangle]
pub unsafe extern "C" fn holiv_cocycle_from_json(map: *const HolivMap, json: *const c_char, out: *mut *mut HolivCocycle) -> HolivStatus {
    guard(|| {
        // SAFETY: live handle per the contract.
        let map = unsafe { map.as_ref() }.ok_or_else(|| null("map"))?;
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: NUL-terminated per the contract.
        let text = unsafe { CStr::from_ptr(json) }.to_str().map_err(|e| (HolivStatus::InvalidArgument, e.to_string()))?;
        let spec: FieldSpec = serde_json::from_str(text).map_err(|e| (HolivStatus::InvalidArgument, e.to_string()))?;
        let c = CocycleField::new(map.0.clone(), spec).map_err(|e| (HolivStatus::InvalidArgument, e.to_string()))?;
        // SAFETY: `out` is valid for a write.
        unsafe { *out = Box::into_raw(Box::new(HolivCocycle(c))) };
        Ok(())
    })
}

/// Random trig-polynomial cocycle of the given rank, seeded.
///
/// # Safety
/// `map` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn holiv_cocycle_random(map: *const HolivMap, rank: usize, amplitude: f64, seed: u64, out: *mut *mut HolivCocycle) -> HolivStatus {
    guard(|| {
        // SAFETY: live handle per the contract.
        let map = unsafe { map.as_ref() }.ok_or_else(|| null("map"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if rank == 0 || !amplitude.is_finite() {
            return Err((HolivStatus::InvalidArgument, "rank must be positive and amplitude finite".into()));
        }
        let mut rng = stage_rng(seed, "field");
        let spec = FieldSpec::Trig(TrigField::random(&mut rng, rank, amplitude));
        let c = CocycleField::new(map.0.clone(), spec).map_err(|e| (HolivStatus::InvalidArgument, e.to_string()))?;
        // SAFETY: `out` is valid for a write.
        unsafe { *out = Box::into_raw(Box::new(HolivCocycle(c))) };
        Ok(())
    })
}

/// # Safety
/// `c` must be null or a live cocycle handle.
#[no_mangle]
pub unsafe extern "C" fn holiv_cocycle_free(c: *mut HolivCocycle) {
    if !c.is_null() {
        // SAFETY: handle was created by Box::into_raw.
        drop(unsafe { Box::from_raw(c) });
    }
}

/// Fiber dimension, or 0 for a null handle.
///
/// # Safety
/// `c` must be null or a live cocycle handle.
#[no_mangle]
pub unsafe extern "C" fn holiv_cocycle_rank(c: *const HolivCocycle) -> usize {
    // SAFETY: null or live per the contract.
    unsafe { c.as_ref() }.map_or(0, |c| c.0.rank)
}

/// Wilson traces over primitive periodic orbits of period `<= period_max`,
/// in enumeration order, written as `(re, im)` pairs into `traces`
/// (`2 * capacity` doubles). `count` receives the number of orbits; when it
/// exceeds `capacity` nothing is written and the status is
/// `BUFFER_TOO_SMALL`.
///
/// # Safety
/// `c` must be a live handle, `traces` valid for `2 * capacity` doubles
/// (or null with `capacity == 0`), `count` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn holiv_wilson_traces(c: *const HolivCocycle, period_max: u32, traces: *mut f64, capacity: usize, count: *mut usize) -> HolivStatus {
    guard(|| {
        // SAFETY: live handle per the contract.
        let c = unsafe { c.as_ref() }.ok_or_else(|| null("cocycle"))?;
        if count.is_null() {
            return Err(null("count"));
        }
        let orbits = enumerate_periodic_orbits(&c.0.map, period_max);
        // SAFETY: `count` is valid for a write.
        unsafe { *count = orbits.len() };
        if orbits.len() > capacity {
            return Err((HolivStatus::BufferTooSmall, format!("{} orbits, capacity {capacity}", orbits.len())));
        }
        if traces.is_null() && !orbits.is_empty() {
            return Err(null("traces"));
        }
        for (i, o) in orbits.iter().enumerate() {
            let t = wilson(&c.0, o).trace;
            // SAFETY: i < capacity, buffer holds 2 * capacity doubles.
            unsafe {
                *traces.add(2 * i) = t.re;
                *traces.add(2 * i + 1) = t.im;
            }
        }
        Ok(())
    })
}

/// `max |W_1 - W_2|` over primitive orbits of period `<= period_max`.
///
/// # Safety
/// `c1`, `c2` must be live handles; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn holiv_wilson_discrepancy(c1: *const HolivCocycle, c2: *const HolivCocycle, period_max: u32, out: *mut f64) -> HolivStatus {
    guard(|| {
        // SAFETY: live handles per the contract.
        let (c1, c2) = unsafe { (c1.as_ref(), c2.as_ref()) };
        let c1 = c1.ok_or_else(|| null("c1"))?;
        let c2 = c2.ok_or_else(|| null("c2"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let orbits = enumerate_periodic_orbits(&c1.0.map, period_max);
        let d = wilson_discrepancy(&c1.0, &c2.0, &orbits).map_err(|e| (HolivStatus::InvalidArgument, e.to_string()))?;
        // SAFETY: `out` is valid for a write.
        unsafe { *out = d };
        Ok(())
    })
}

/// Runs the Livšic solver with default settings on a `grid x grid` output
/// grid (`grid == 0` keeps the default).
///
/// # Safety
/// `c0`, `c` must be live handles; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn holiv_livsic_solve(
    c0: *const HolivCocycle,
    c: *const HolivCocycle,
    eps_budget: f64,
    grid: usize,
    out: *mut *mut HolivLivsicReport,
) -> HolivStatus {
    guard(|| {
        // SAFETY: live handles per the contract.
        let (c0, c) = unsafe { (c0.as_ref(), c.as_ref()) };
        let c0 = c0.ok_or_else(|| null("c0"))?;
        let c = c.ok_or_else(|| null("c"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut cfg = LivsicConfig::default();
        if grid > 0 {
            cfg.grid = grid;
        }
        let report = livsic_solve(&c0.0, &c.0, eps_budget, &cfg).map_err(|e| (livsic_status(&e.error), e.to_string()))?;
        // SAFETY: `out` is valid for a write.
        unsafe { *out = Box::into_raw(Box::new(HolivLivsicReport(report))) };
        Ok(())
    })
}

/// # Safety
/// `r` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn holiv_livsic_report_free(r: *mut HolivLivsicReport) {
    if !r.is_null() {
        // SAFETY: handle was created by Box::into_raw.
        drop(unsafe { Box::from_raw(r) });
    }
}

/// Sup of the transport defect, or NaN for a null handle.
///
/// # Safety
/// `r` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn holiv_livsic_report_sup_defect(r: *const HolivLivsicReport) -> f64 {
    // SAFETY: null or live per the contract.
    unsafe { r.as_ref() }.map_or(f64::NAN, |r| r.0.sup_defect)
}

/// Grid side of the section, or 0 for a null handle.
///
/// # Safety
/// `r` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn holiv_livsic_report_grid_side(r: *const HolivLivsicReport) -> usize {
    // SAFETY: null or live per the contract.
    unsafe { r.as_ref() }.map_or(0, |r| r.0.grid.side)
}

/// Copies the section into `buf`: row-major nodes, `r^2` row-major entries
/// per node, each as `(re, im)`. `needed` receives the number of doubles.
///
/// # Safety
/// `r` must be a live handle, `buf` valid for `len` doubles (or null with
/// `len == 0`), `needed` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn holiv_livsic_report_section(r: *const HolivLivsicReport, buf: *mut f64, len: usize, needed: *mut usize) -> HolivStatus {
    guard(|| {
        // SAFETY: live handle per the contract.
        let r = unsafe { r.as_ref() }.ok_or_else(|| null("report"))?;
        if needed.is_null() {
            return Err(null("needed"));
        }
        let values: Vec<f64> = r.0.p.iter().flat_map(|u| u.matrix().data().iter().flat_map(|z| [z.re, z.im]).collect::<Vec<_>>()).collect();
        // SAFETY: `needed` is valid for a write.
        unsafe { *needed = values.len() };
        if values.len() > len {
            return Err((HolivStatus::BufferTooSmall, format!("need {} doubles, have {len}", values.len())));
        }
        if buf.is_null() && !values.is_empty() {
            return Err(null("buf"));
        }
        // SAFETY: `buf` holds at least `values.len()` doubles.
        unsafe { ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len()) };
        Ok(())
    })
}
