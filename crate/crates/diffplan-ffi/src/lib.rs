//! C ABI for the diffplan motion planner.
//!
//! - Opaque handles: callers see pointers, never struct layouts.
//! - Every fallible function returns an error code (`DP_OK` = 0) and
//!   reports results through out-parameters.
//! - `dp_last_error()` returns a thread-local message for the most recent
//!   failure on the calling thread.
//! - Handles are freed with their matching `*_free` function; freeing null
//!   is a no-op.
//!
//! The generated header lands in `include/diffplan.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use diffplan::chain::ChainSpec;
use diffplan::diffusion::{load_checkpoint, CheckpointMeta, DenoiserParams, DiffusionSchedule};
use diffplan::guidance::{plan, GuideConfig, PlanConfig, PlanResult, Scene};

/// Error codes returned by every fallible `dp_*` function.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = -1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = -2,
    /// File could not be read or written.
    Io = -3,
    /// File contents or configuration were rejected.
    Format = -4,
    /// The operation ran but failed in the domain (e.g. invalid scene
    /// endpoints for the chain).
    Domain = -5,
    /// An internal panic was caught at the boundary.
    Panic = -6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', "?");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &diffplan::Error) -> DpStatus {
    match err {
        diffplan::Error::Io(_) => DpStatus::Io,
        e if e.is_format() => DpStatus::Format,
        _ => DpStatus::Domain,
    }
}

fn fail(err: &diffplan::Error) -> i32 {
    set_error(&err.to_string());
    status_of(err) as i32
}

/// Run `f` with panics converted to `DP_PANIC`.
fn guarded(f: impl FnOnce() -> i32) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(&msg);
            DpStatus::Panic as i32
        }
    }
}

/// # Safety
/// `ptr` must be null or a NUL-terminated string valid for the call.
unsafe fn path_arg<'a>(ptr: *const c_char) -> Result<&'a Path, i32> {
    if ptr.is_null() {
        set_error("null path argument");
        return Err(DpStatus::NullArgument as i32);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(DpStatus::InvalidUtf8 as i32)
        }
    }
}

fn out_arg<T>(ptr: *mut T) -> Result<(), i32> {
    if ptr.is_null() {
        set_error("null output argument");
        Err(DpStatus::NullArgument as i32)
    } else {
        Ok(())
    }
}

fn ref_arg<'a, T>(ptr: *const T) -> Result<&'a T, i32> {
    if ptr.is_null() {
        set_error("null handle argument");
        Err(DpStatus::NullArgument as i32)
    } else {
        Ok(unsafe { &*ptr })
    }
}

/// Opaque kinematic chain handle.
pub struct DpChain {
    inner: ChainSpec,
}

/// Opaque scene handle.
pub struct DpScene {
    inner: Scene,
}

/// Opaque guide-ensemble handle.
pub struct DpGuides {
    inner: Vec<GuideConfig>,
}

/// Opaque planner handle: a loaded checkpoint plus its schedule.
pub struct DpPlanner {
    params: DenoiserParams,
    meta: CheckpointMeta,
    sched: DiffusionSchedule,
}

/// Opaque plan-result handle.
pub struct DpPlan {
    result: PlanResult,
    /// Selected trajectory flattened row-major (`rows * cols`).
    selected: Vec<f64>,
    rows: usize,
    cols: usize,
}

/// The last error message for this thread; empty until an error occurs.
/// The pointer stays valid until the next failing `dp_*` call on the same
/// thread.
#[no_mangle]
pub extern "C" fn dp_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn dp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Create the built-in three-joint desk arm.
#[no_mangle]
pub extern "C" fn dp_chain_default(out: *mut *mut DpChain) -> i32 {
    guarded(|| {
        if out_arg(out).is_err() {
            return DpStatus::NullArgument as i32;
        }
        let chain = Box::new(DpChain { inner: ChainSpec::default_arm() });
        unsafe { *out = Box::into_raw(chain) };
        DpStatus::Ok as i32
    })
}

/// Load a chain JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dp_chain_load(path: *const c_char, out: *mut *mut DpChain) -> i32 {
    guarded(|| {
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(code) => return code,
        };
        if out_arg(out).is_err() {
            return DpStatus::NullArgument as i32;
        }
        match diffplan::chain::read_chain(path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(DpChain { inner }));
                DpStatus::Ok as i32
            }
            Err(e) => fail(&e),
        }
    })
}

/// Number of joints in the chain.
#[no_mangle]
pub extern "C" fn dp_chain_joint_count(chain: *const DpChain, out: *mut usize) -> i32 {
    guarded(|| {
        let chain = match ref_arg(chain) {
            Ok(c) => c,
            Err(code) => return code,
        };
        if out_arg(out).is_err() {
            return DpStatus::NullArgument as i32;
        }
        unsafe { *out = chain.inner.dof() };
        DpStatus::Ok as i32
    })
}

/// # Safety
/// `chain` must be a pointer returned by a `dp_chain_*` constructor, not
/// yet freed.
#[no_mangle]
pub unsafe extern "C" fn dp_chain_free(chain: *mut DpChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Load and validate a scene JSON file against a chain.
///
/// # Safety
/// `path` must be a NUL-terminated string; `chain` a live chain handle;
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dp_scene_load(
    path: *const c_char,
    chain: *const DpChain,
    out: *mut *mut DpScene,
) -> i32 {
    guarded(|| {
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(code) => return code,
        };
        let chain = match ref_arg(chain) {
            Ok(c) => c,
            Err(code) => return code,
        };
        if out_arg(out).is_err() {
            return DpStatus::NullArgument as i32;
        }
        match diffplan::worldgen::read_scene(path, &chain.inner) {
            Ok((scene, _kind)) => {
                *out = Box::into_raw(Box::new(DpScene { inner: scene }));
                DpStatus::Ok as i32
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `scene` must be a pointer returned by `dp_scene_load`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dp_scene_free(scene: *mut DpScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// The built-in twelve-guide ensemble.
#[no_mangle]
pub extern "C" fn dp_guides_default(out: *mut *mut DpGuides) -> i32 {
    guarded(|| {
        if out_arg(out).is_err() {
            return DpStatus::NullArgument as i32;
        }
        let guides = Box::new(DpGuides { inner: GuideConfig::default_ensemble() });
        unsafe { *out = Box::into_raw(guides) };
        DpStatus::Ok as i32
    })
}

/// Load a guides JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dp_guides_load(path: *const c_char, out: *mut *mut DpGuides) -> i32 {
    guarded(|| {
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(code) => return code,
        };
        if out_arg(out).is_err() {
            return DpStatus::NullArgument as i32;
        }
        match diffplan::guidance::read_guides(path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(DpGuides { inner }));
                DpStatus::Ok as i32
            }
            Err(e) => fail(&e),
        }
    })
}

/// Number of guides in the ensemble.
#[no_mangle]
pub extern "C" fn dp_guides_len(guides: *const DpGuides, out: *mut usize) -> i32 {
    guarded(|| {
        let guides = match ref_arg(guides) {
            Ok(g) => g,
            Err(code) => return code,
        };
        if out_arg(out).is_err() {
            return DpStatus::NullArgument as i32;
        }
        unsafe { *out = guides.inner.len() };
        DpStatus::Ok as i32
    })
}

/// # Safety
/// `guides` must be a pointer returned by a `dp_guides_*` constructor, not
/// yet freed.
#[no_mangle]
pub unsafe extern "C" fn dp_guides_free(guides: *mut DpGuides) {
    if !guides.is_null() {
        drop(Box::from_raw(guides));
    }
}

/// Load a checkpoint file into a planner handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dp_planner_load(path: *const c_char, out: *mut *mut DpPlanner) -> i32 {
    guarded(|| {
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(code) => return code,
        };
        if out_arg(out).is_err() {
            return DpStatus::NullArgument as i32;
        }
        let (params, meta) = match load_checkpoint(path) {
            Ok(v) => v,
            Err(e) => return fail(&e),
        };
        let sched = match DiffusionSchedule::new(meta.timesteps, meta.beta_max) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        *out = Box::into_raw(Box::new(DpPlanner { params, meta, sched }));
        DpStatus::Ok as i32
    })
}

/// Trajectory horizon (waypoints) the planner produces.
#[no_mangle]
pub extern "C" fn dp_planner_horizon(planner: *const DpPlanner, out: *mut usize) -> i32 {
    guarded(|| {
        let planner = match ref_arg(planner) {
            Ok(p) => p,
            Err(code) => return code,
        };
        if out_arg(out).is_err() {
            return DpStatus::NullArgument as i32;
        }
        unsafe { *out = planner.meta.h };
        DpStatus::Ok as i32
    })
}

/// # Safety
/// `planner` must be a pointer returned by `dp_planner_load`, not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn dp_planner_free(planner: *mut DpPlanner) {
    if !planner.is_null() {
        drop(Box::from_raw(planner));
    }
}

/// Run the guided planner on a scene. `batch` trajectories are denoised
/// under the guide ensemble; the minimum-swept-volume one is selected.
///
/// # Safety
/// All handles must be live pointers from their constructors; `out` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dp_plan_run(
    planner: *const DpPlanner,
    chain: *const DpChain,
    scene: *const DpScene,
    guides: *const DpGuides,
    batch: u32,
    seed: u64,
    out: *mut *mut DpPlan,
) -> i32 {
    guarded(|| {
        let planner = match ref_arg(planner) {
            Ok(p) => p,
            Err(code) => return code,
        };
        let chain = match ref_arg(chain) {
            Ok(c) => c,
            Err(code) => return code,
        };
        let scene = match ref_arg(scene) {
            Ok(s) => s,
            Err(code) => return code,
        };
        let guides = match ref_arg(guides) {
            Ok(g) => g,
            Err(code) => return code,
        };
        if out_arg(out).is_err() {
            return DpStatus::NullArgument as i32;
        }
        let cfg = PlanConfig { batch: batch as usize, seed, ..PlanConfig::default() };
        match plan(
            &planner.params,
            &planner.sched,
            &scene.inner,
            &chain.inner,
            &guides.inner,
            &cfg,
        ) {
            Ok(result) => {
                let rows = result.selected.horizon();
                let cols = result.selected.dim();
                let mut selected = Vec::with_capacity(rows * cols);
                for k in 0..rows {
                    for j in 0..cols {
                        selected.push(result.selected.states()[(k, j)]);
                    }
                }
                *out = Box::into_raw(Box::new(DpPlan { result, selected, rows, cols }));
                DpStatus::Ok as i32
            }
            Err(e) => fail(&e),
        }
    })
}

/// Whether the selected trajectory passed the collision oracle (1/0).
#[no_mangle]
pub extern "C" fn dp_plan_success(plan: *const DpPlan, out: *mut i32) -> i32 {
    guarded(|| {
        let plan = match ref_arg(plan) {
            Ok(p) => p,
            Err(code) => return code,
        };
        if out_arg(out).is_err() {
            return DpStatus::NullArgument as i32;
        }
        unsafe { *out = i32::from(plan.result.success_selected) };
        DpStatus::Ok as i32
    })
}

/// Borrow the selected trajectory: row-major waypoints-by-joints doubles.
/// The pointer lives as long as the plan handle.
#[no_mangle]
pub extern "C" fn dp_plan_selected(
    plan: *const DpPlan,
    data: *mut *const f64,
    rows: *mut usize,
    cols: *mut usize,
) -> i32 {
    guarded(|| {
        let plan = match ref_arg(plan) {
            Ok(p) => p,
            Err(code) => return code,
        };
        if data.is_null() || rows.is_null() || cols.is_null() {
            set_error("null output argument");
            return DpStatus::NullArgument as i32;
        }
        unsafe {
            *data = plan.selected.as_ptr();
            *rows = plan.rows;
            *cols = plan.cols;
        }
        DpStatus::Ok as i32
    })
}

/// Final swept-volume cost of the selected trajectory.
#[no_mangle]
pub extern "C" fn dp_plan_swept_cost(plan: *const DpPlan, out: *mut f64) -> i32 {
    guarded(|| {
        let plan = match ref_arg(plan) {
            Ok(p) => p,
            Err(code) => return code,
        };
        if out_arg(out).is_err() {
            return DpStatus::NullArgument as i32;
        }
        let idx = plan.result.selected_index;
        unsafe { *out = plan.result.per_trajectory[idx].swept_cost };
        DpStatus::Ok as i32
    })
}

/// # Safety
/// `plan` must be a pointer returned by `dp_plan_run`, not yet freed.
/// Pointers from `dp_plan_selected` become dangling after this call.
#[no_mangle]
pub unsafe extern "C" fn dp_plan_free(plan: *mut DpPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

#[allow(unused)]
fn assert_null_is_noop() {
    unsafe {
        dp_chain_free(ptr::null_mut());
        dp_scene_free(ptr::null_mut());
        dp_guides_free(ptr::null_mut());
        dp_planner_free(ptr::null_mut());
        dp_plan_free(ptr::null_mut());
    }
}
