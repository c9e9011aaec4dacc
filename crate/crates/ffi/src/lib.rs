//! C ABI for the `wgflow` solver.
//!
//! Objects are opaque handles created by `wg_mesh_*` constructors or
//! `wg_run_flow` and released by the matching `wg_*_free`. Fallible functions return a
//! [`WgStatus`] code; the message of the last failure on the calling thread
//! is available from [`wg_last_error_message`]. Panics never cross the
//! boundary and are reported as `WG_ERR_PANIC`.
//!
//! The declarations in `include/wgflow.h` mirror this file.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use wgflow::energies::{Energy, Integrand};
use wgflow::extrapolation::{extrapolate, HjPrefactor};
use wgflow::schemes::{run_flow, Scheme, SchemeConfig, Trajectory};
use wgflow::{CellField, Mesh, SolverConfig};

pub type WgStatus = c_int;

pub const WG_OK: WgStatus = 0;
pub const WG_ERR_NULL: WgStatus = 1;
pub const WG_ERR_INVALID: WgStatus = 2;
pub const WG_ERR_SOLVER: WgStatus = 3;
pub const WG_ERR_BUFFER: WgStatus = 4;
pub const WG_ERR_PANIC: WgStatus = 5;

pub const WG_SCHEME_LJKO: c_int = 0;
pub const WG_SCHEME_EVBDF2: c_int = 1;
pub const WG_SCHEME_VIM: c_int = 2;
pub const WG_SCHEME_BDF2: c_int = 3;

pub const WG_ENERGY_ENTROPY: c_int = 0;
pub const WG_ENERGY_POROUS: c_int = 1;

/// Opaque mesh handle.
pub struct WgMesh(Mesh);

/// Opaque trajectory handle.
pub struct WgTrajectory(Trajectory);

/// Parameters of [`wg_run_flow`]. `wg_flow_params_default` fills every field.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct WgFlowParams {
    pub scheme: c_int,
    pub tau: f64,
    pub steps: usize,
    pub alpha: f64,
    pub init_substeps: usize,
    pub energy: c_int,
    /// Porous-medium exponent, ignored for the entropy.
    pub delta: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("interior nul removed"));
}

struct Fail(WgStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> WgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            WG_OK
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            WG_ERR_PANIC
        }
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(WG_ERR_INVALID, msg.into())
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(Fail(WG_ERR_NULL, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, need: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(Fail(WG_ERR_NULL, format!("{what} is null")));
    }
    if len < need {
        return Err(Fail(WG_ERR_BUFFER, format!("{what} holds {len} values, {need} needed")));
    }
    Ok(slice::from_raw_parts_mut(p, need))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(WG_ERR_NULL, format!("{what} is null")))
}

fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(WG_ERR_NULL, "output handle pointer is null".into()));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn wg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn wg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Uniform mesh of `n` cells on `[a, b]`.
#[no_mangle]
pub unsafe extern "C" fn wg_mesh_interval(n: usize, a: f64, b: f64, out: *mut *mut WgMesh) -> WgStatus {
    guard(|| {
        let mesh = Mesh::interval(n, a, b).map_err(|e| invalid(e.to_string()))?;
        store(out, WgMesh(mesh))
    })
}

/// Cartesian mesh of `nx * ny` cells on `[x0, x1] x [y0, y1]`.
#[no_mangle]
pub unsafe extern "C" fn wg_mesh_cartesian(
    nx: usize,
    ny: usize,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    out: *mut *mut WgMesh,
) -> WgStatus {
    guard(|| {
        let mesh = Mesh::cartesian(nx, ny, (x0, x1), (y0, y1)).map_err(|e| invalid(e.to_string()))?;
        store(out, WgMesh(mesh))
    })
}

#[no_mangle]
pub unsafe extern "C" fn wg_mesh_free(mesh: *mut WgMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// Number of cells, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn wg_mesh_cell_count(mesh: *const WgMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.n_cells())
}

/// Cell measures into `out[0..n_cells]`.
#[no_mangle]
pub unsafe extern "C" fn wg_mesh_measures(mesh: *const WgMesh, out: *mut f64, len: usize) -> WgStatus {
    guard(|| {
        let mesh = &handle(mesh, "mesh")?.0;
        output(out, len, mesh.n_cells(), "out")?.copy_from_slice(mesh.measures());
        Ok(())
    })
}

/// Cell centers as interleaved `(x, y)` pairs into `out[0..2 n_cells]`; `y` is 0 in 1D.
#[no_mangle]
pub unsafe extern "C" fn wg_mesh_centers(mesh: *const WgMesh, out: *mut f64, len: usize) -> WgStatus {
    guard(|| {
        let mesh = &handle(mesh, "mesh")?.0;
        let buf = output(out, len, 2 * mesh.n_cells(), "out")?;
        for (k, c) in mesh.centers().iter().enumerate() {
            buf[2 * k] = c[0];
            buf[2 * k + 1] = c[1];
        }
        Ok(())
    })
}

/// EVBDF2 with `tau = 0.01`, 10 steps, `alpha = 4/3`, one start-up sub-step, entropy.
#[no_mangle]
pub extern "C" fn wg_flow_params_default() -> WgFlowParams {
    let d = SchemeConfig::default();
    WgFlowParams {
        scheme: WG_SCHEME_EVBDF2,
        tau: d.tau,
        steps: d.steps,
        alpha: d.alpha,
        init_substeps: d.init_substeps,
        energy: WG_ENERGY_ENTROPY,
        delta: 2.0,
    }
}

fn scheme(code: c_int) -> Result<Scheme, Fail> {
    match code {
        WG_SCHEME_LJKO => Ok(Scheme::Ljko),
        WG_SCHEME_EVBDF2 => Ok(Scheme::Evbdf2),
        WG_SCHEME_VIM => Ok(Scheme::Vim),
        WG_SCHEME_BDF2 => Ok(Scheme::Bdf2Naive),
        other => Err(invalid(format!("unknown scheme code {other}"))),
    }
}

/// Run a flow from `rho0` with cell potential `potential` (null for zero).
///
/// A solver failure part-way still produces a trajectory, truncated at the
/// failing step; the call then returns `WG_ERR_SOLVER` and sets `*out`.
#[no_mangle]
pub unsafe extern "C" fn wg_run_flow(
    mesh: *const WgMesh,
    params: *const WgFlowParams,
    rho0: *const f64,
    potential: *const f64,
    len: usize,
    out: *mut *mut WgTrajectory,
) -> WgStatus {
    guard(|| {
        let mesh = &handle(mesh, "mesh")?.0;
        let p = *handle(params, "params")?;
        if len != mesh.n_cells() {
            return Err(invalid(format!("{len} values for {} cells", mesh.n_cells())));
        }
        let rho0 = CellField(input(rho0, len, "rho0")?.to_vec());
        let v = if potential.is_null() { CellField::zeros(len) } else { CellField(input(potential, len, "potential")?.to_vec()) };
        let integrand = match p.energy {
            WG_ENERGY_ENTROPY => Integrand::Entropy,
            WG_ENERGY_POROUS if p.delta > 1.0 && p.delta.is_finite() => Integrand::Power { delta: p.delta },
            WG_ENERGY_POROUS => return Err(invalid(format!("porous-medium exponent must exceed 1, got {}", p.delta))),
            other => return Err(invalid(format!("unknown energy code {other}"))),
        };
        let energy = Energy::with_potential(integrand, v).map_err(|e| invalid(e.to_string()))?;
        let config = SchemeConfig {
            scheme: scheme(p.scheme)?,
            tau: p.tau,
            steps: p.steps,
            alpha: p.alpha,
            init_substeps: p.init_substeps,
            prefactor: HjPrefactor::default(),
            vim_fresh_potential: false,
            solver: SolverConfig::default(),
        };
        let traj = run_flow(mesh, &energy, &rho0, &config).map_err(|e| invalid(e.to_string()))?;
        let failure = traj.failure.as_ref().map(|f| format!("step {}: {}", f.step, f.error));
        store(out, WgTrajectory(traj))?;
        match failure {
            Some(msg) => Err(Fail(WG_ERR_SOLVER, msg)),
            None => Ok(()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn wg_trajectory_free(traj: *mut WgTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of stored states, the initial one included; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn wg_trajectory_len(traj: *const WgTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.densities.len())
}

/// Step at which the run failed, or 0 when it completed.
#[no_mangle]
pub unsafe extern "C" fn wg_trajectory_failed_step(traj: *const WgTrajectory) -> usize {
    traj.as_ref().and_then(|t| t.0.failure.as_ref()).map_or(0, |f| f.step)
}

/// Density of state `n` into `out[0..n_cells]`.
#[no_mangle]
pub unsafe extern "C" fn wg_trajectory_density(traj: *const WgTrajectory, n: usize, out: *mut f64, len: usize) -> WgStatus {
    guard(|| {
        let traj = &handle(traj, "trajectory")?.0;
        let rho = traj.densities.get(n).ok_or_else(|| invalid(format!("state {n} of {}", traj.densities.len())))?;
        output(out, len, rho.len(), "out")?.copy_from_slice(rho);
        Ok(())
    })
}

/// Discrete extrapolation of the pair `(mu, nu)` to `alpha` into `out[0..len]`.
#[no_mangle]
pub unsafe extern "C" fn wg_extrapolate(
    mesh: *const WgMesh,
    mu: *const f64,
    nu: *const f64,
    len: usize,
    alpha: f64,
    out: *mut f64,
) -> WgStatus {
    guard(|| {
        let mesh = &handle(mesh, "mesh")?.0;
        if len != mesh.n_cells() {
            return Err(invalid(format!("{len} values for {} cells", mesh.n_cells())));
        }
        let mu = CellField(input(mu, len, "mu")?.to_vec());
        let nu = CellField(input(nu, len, "nu")?.to_vec());
        let buf = output(out, len, len, "out")?;
        let sol = extrapolate(mesh, &mu, &nu, alpha, HjPrefactor::default(), &SolverConfig::default())
            .map_err(|e| Fail(WG_ERR_SOLVER, e.to_string()))?;
        buf.copy_from_slice(&sol.rho);
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CStr;
    use std::ptr;

    fn message() -> String {
        unsafe { CStr::from_ptr(wg_last_error_message()) }.to_string_lossy().into_owned()
    }

    #[test]
    fn null_handles_are_reported() {
        let mut buf = [0.0; 4];
        let code = unsafe { wg_mesh_measures(ptr::null(), buf.as_mut_ptr(), 4) };
        assert_eq!(code, WG_ERR_NULL);
        assert!(message().contains("mesh"));
        assert_eq!(unsafe { wg_mesh_cell_count(ptr::null()) }, 0);
    }

    #[test]
    fn success_clears_the_message() {
        let mut mesh = ptr::null_mut();
        assert_eq!(unsafe { wg_mesh_interval(0, 0.0, 1.0, &mut mesh) }, WG_ERR_INVALID);
        assert!(!message().is_empty());
        assert_eq!(unsafe { wg_mesh_interval(3, 0.0, 1.0, &mut mesh) }, WG_OK);
        assert!(message().is_empty());
        unsafe { wg_mesh_free(mesh) };
    }
}
