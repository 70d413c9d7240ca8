//! C ABI over `kraichnan_lab`.
//!
//! Every entry point returns a [`KlStatus`]; on failure the message is kept
//! per thread and can be copied out with [`kl_last_error`]. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use kraichnan_lab::experiments::{run_experiment, CriterionOutcome, ExperimentKind};
use kraichnan_lab::lagrangian::{simulate_limit_sde, InitialLaw, SdeConfig};
use kraichnan_lab::noise::NoiseBasis;
use kraichnan_lab::scalar::{ScalarRunConfig, ScalarScheme, ScalarSolver};
use kraichnan_lab::spectral::SpectralScalarField;
use kraichnan_lab::vlasov::{c_l, l_matrix};
use kraichnan_lab::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Config = 3,
    Stability = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> KlStatus {
    match e {
        Error::InvalidInput(_) | Error::LengthMismatch { .. } | Error::Contract(_) | Error::Resolution(_) => {
            KlStatus::InvalidInput
        }
        Error::Config(_) | Error::Json(_) => KlStatus::Config,
        Error::Stability(_) => KlStatus::Stability,
        Error::NoConvergence { .. } | Error::EmptyEnsemble => KlStatus::Numerical,
        Error::Io(_) => KlStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), KlStatus>) -> KlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KlStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside kraichnan_lab".into());
            KlStatus::Panic
        }
    }
}

fn fail(e: Error) -> KlStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null() -> KlStatus {
    set_error("null pointer argument".into());
    KlStatus::NullPointer
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn kl_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Limit stretching constant `c_L` for noise intensity `chi`.
#[no_mangle]
pub extern "C" fn kl_c_l(chi: f64) -> f64 {
    c_l(chi)
}

/// Writes the limit diffusion matrix `L(b)` in row-major order to `out[9]`.
///
/// # Safety
/// `b` must point to 3 doubles and `out` to 9.
#[no_mangle]
pub unsafe extern "C" fn kl_l_matrix(b: *const f64, chi: f64, out: *mut f64) -> KlStatus {
    if b.is_null() || out.is_null() {
        return null();
    }
    guard(|| {
        let b = [*b, *b.add(1), *b.add(2)];
        let m = l_matrix(b, chi);
        for i in 0..3 {
            for j in 0..3 {
                *out.add(3 * i + j) = m[(i, j)];
            }
        }
        Ok(())
    })
}

pub struct KlNoiseBasis(NoiseBasis);

/// Divergence-free vector noise on the shell `n <= |k| <= 2n`.
///
/// # Safety
/// `out` must be a valid pointer; on success it receives a new handle.
#[no_mangle]
pub unsafe extern "C" fn kl_noise_basis_new(n: u32, chi: f64, out: *mut *mut KlNoiseBasis) -> KlStatus {
    if out.is_null() {
        return null();
    }
    guard(|| {
        let basis = NoiseBasis::vector(n, chi).map_err(fail)?;
        *out = Box::into_raw(Box::new(KlNoiseBasis(basis)));
        Ok(())
    })
}

/// # Safety
/// `basis` must be null or a handle from [`kl_noise_basis_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn kl_noise_basis_free(basis: *mut KlNoiseBasis) {
    if !basis.is_null() {
        drop(Box::from_raw(basis));
    }
}

/// # Safety
/// `basis` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn kl_noise_basis_len(basis: *const KlNoiseBasis) -> usize {
    basis.as_ref().map_or(0, |b| b.0.len())
}

/// Writes the one-point covariance tensor row-major to `out[9]`.
///
/// # Safety
/// `basis` must be a live handle and `out` valid for 9 doubles.
#[no_mangle]
pub unsafe extern "C" fn kl_noise_basis_covariance(basis: *const KlNoiseBasis, out: *mut f64) -> KlStatus {
    let Some(basis) = basis.as_ref() else { return null() };
    if out.is_null() {
        return null();
    }
    guard(|| {
        for (i, row) in basis.0.covariance_tensor().iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                *out.add(3 * i + j) = *v;
            }
        }
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct KlScalarConfig {
    pub d: usize,
    pub n: u32,
    pub kappa_t: f64,
    pub k_max: u32,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
}

pub struct KlScalarSolver(ScalarSolver);

/// Midpoint spectral solver for the transported scalar.
///
/// # Safety
/// `cfg` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn kl_scalar_solver_new(cfg: *const KlScalarConfig, out: *mut *mut KlScalarSolver) -> KlStatus {
    let Some(c) = cfg.as_ref() else { return null() };
    if out.is_null() {
        return null();
    }
    guard(|| {
        let cfg = ScalarRunConfig {
            d: c.d,
            n: c.n,
            kappa_t: c.kappa_t,
            k_max: c.k_max,
            dt: c.dt,
            t_end: c.t_end,
            seed: c.seed,
            scheme: ScalarScheme::Midpoint,
        };
        let solver = ScalarSolver::new(cfg).map_err(fail)?;
        *out = Box::into_raw(Box::new(KlScalarSolver(solver)));
        Ok(())
    })
}

/// # Safety
/// `solver` must be null or a handle from [`kl_scalar_solver_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn kl_scalar_solver_free(solver: *mut KlScalarSolver) {
    if !solver.is_null() {
        drop(Box::from_raw(solver));
    }
}

/// Number of physical grid points (`N^d`); field buffers have this length.
///
/// # Safety
/// `solver` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn kl_scalar_solver_grid_len(solver: *const KlScalarSolver) -> usize {
    solver.as_ref().map_or(0, |s| s.0.grid().len())
}

/// Evolves physical values `theta0` along noise path `path` and writes the
/// final physical values to `out`. Both buffers hold `len` doubles.
///
/// # Safety
/// `solver` must be a live handle; `theta0` and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn kl_scalar_solver_run(
    solver: *const KlScalarSolver,
    theta0: *const f64,
    len: usize,
    path: u64,
    out: *mut f64,
) -> KlStatus {
    let Some(solver) = solver.as_ref() else { return null() };
    if theta0.is_null() || out.is_null() {
        return null();
    }
    guard(|| {
        let grid = solver.0.grid();
        if len != grid.len() {
            return Err(fail(Error::LengthMismatch { expected: grid.len(), got: len }));
        }
        let values = std::slice::from_raw_parts(theta0, len);
        let theta = SpectralScalarField::from_physical(grid, values);
        solver.0.check_initial(&theta).map_err(fail)?;
        let result = solver.0.run(&theta, path, |_, _, _| {}).map_err(fail)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&result.to_physical());
        Ok(())
    })
}

/// Monte Carlo estimate of `E|b_T|^2 / |b_0|^2` for the limit SDE started
/// at `b0` (Euler-Maruyama, calibrated diffusion).
///
/// # Safety
/// `b0` must point to 3 doubles; `mean` and `stderr` must be valid.
#[no_mangle]
pub unsafe extern "C" fn kl_limit_sde_growth(
    b0: *const f64,
    dt: f64,
    t_end: f64,
    paths: usize,
    seed: u64,
    mean: *mut f64,
    stderr: *mut f64,
) -> KlStatus {
    if b0.is_null() || mean.is_null() || stderr.is_null() {
        return null();
    }
    guard(|| {
        let b = [*b0, *b0.add(1), *b0.add(2)];
        let cfg = SdeConfig::new(dt, t_end, paths, seed);
        let ens = simulate_limit_sde(&InitialLaw::Point { b }, &cfg).map_err(fail)?;
        let est = ens.growth_ratio().map_err(fail)?;
        *mean = est.mean;
        *stderr = est.stderr;
        Ok(())
    })
}

pub struct KlExperimentResult(Vec<CriterionOutcome>);

/// Runs a named experiment (`"ln-converge"`, `"scalar-conserve"`, ...) with
/// JSON parameters (may be null for defaults).
///
/// # Safety
/// `name` must be a NUL-terminated string, `params_json` null or one, and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kl_experiment_run(
    name: *const c_char,
    params_json: *const c_char,
    seed: u64,
    out: *mut *mut KlExperimentResult,
) -> KlStatus {
    if name.is_null() || out.is_null() {
        return null();
    }
    guard(|| {
        let name = CStr::from_ptr(name).to_str().map_err(|_| fail(Error::InvalidInput("name is not UTF-8".into())))?;
        let kind: ExperimentKind = serde_json::from_value(serde_json::Value::String(name.into()))
            .map_err(|_| fail(Error::Config(format!("unknown experiment {name}"))))?;
        let params = if params_json.is_null() {
            serde_json::Value::Null
        } else {
            let text = CStr::from_ptr(params_json)
                .to_str()
                .map_err(|_| fail(Error::InvalidInput("parameters are not UTF-8".into())))?;
            serde_json::from_str(text).map_err(|e| fail(Error::Config(e.to_string())))?
        };
        let output = run_experiment(kind, &params, seed).map_err(fail)?;
        *out = Box::into_raw(Box::new(KlExperimentResult(output.outcomes)));
        Ok(())
    })
}

/// # Safety
/// `result` must be null or a handle from [`kl_experiment_run`], freed once.
#[no_mangle]
pub unsafe extern "C" fn kl_experiment_result_free(result: *mut KlExperimentResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn kl_experiment_result_len(result: *const KlExperimentResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.len())
}

/// Criterion id and verdict of entry `index`.
///
/// # Safety
/// `result` must be a live handle; `id` and `pass` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn kl_experiment_result_get(
    result: *const KlExperimentResult,
    index: usize,
    id: *mut u32,
    pass: *mut bool,
) -> KlStatus {
    let Some(result) = result.as_ref() else { return null() };
    if id.is_null() || pass.is_null() {
        return null();
    }
    match result.0.get(index) {
        Some(o) => {
            *id = o.id;
            *pass = o.pass;
            KlStatus::Ok
        }
        None => fail(Error::InvalidInput(format!("index {index} out of range"))),
    }
}
