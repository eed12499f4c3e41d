//! C ABI over the `mbprei` toolkit.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free` function. Every entry point returns an
//! [`MbpreiStatus`]; on failure the message is kept per thread and can be read
//! with [`mbprei_last_error`]. Panics are caught and reported as
//! [`MbpreiStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use mbprei::envspec::{sample_environment, validate_spec, EnvironmentSpec};
use mbprei::error::Error;
use mbprei::ranmat::{self, DirectionTable, KappaMode};
use mbprei::rng::{self, domain};
use mbprei::sim::{self, ImmigrationMode, TagMode, Trajectory};

/// Result codes of every `mbprei_*` call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MbpreiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Scenario = 3,
    Validation = 4,
    Numerical = 5,
    Precondition = 6,
    Io = 7,
    Panic = 8,
}

/// A parsed and validated environment specification.
pub struct MbpreiSpec {
    inner: Arc<EnvironmentSpec>,
}

/// Finite-horizon directions and pseudo spectral radii along one environment.
pub struct MbpreiDirections {
    inner: DirectionTable,
}

/// One simulated trajectory with origin tags.
pub struct MbpreiTrajectory {
    inner: Trajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MbpreiStatus {
    match err {
        Error::Scenario(_) | Error::Json(_) | Error::Csv(_) => MbpreiStatus::Scenario,
        Error::Io(_) => MbpreiStatus::Io,
        Error::Precondition(_) => MbpreiStatus::Precondition,
        e if e.is_numerical() => MbpreiStatus::Numerical,
        _ => MbpreiStatus::InvalidArgument,
    }
}

struct Fail(MbpreiStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> MbpreiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MbpreiStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("panic: {msg}"));
            MbpreiStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(MbpreiStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(MbpreiStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, need: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err(Fail(MbpreiStatus::InvalidArgument, format!("{what} holds {len} elements, {need} required")));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

fn checked_spec(spec: EnvironmentSpec) -> Result<Box<MbpreiSpec>, Fail> {
    let report = validate_spec(&spec);
    if let Some(v) = report.violations.first() {
        return Err(Fail(MbpreiStatus::Validation, format!("{} violation(s), first: {v}", report.violations.len())));
    }
    Ok(Box::new(MbpreiSpec { inner: Arc::new(spec) }))
}

/// Version string of the library; static, do not free.
#[no_mangle]
pub extern "C" fn mbprei_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Free with [`mbprei_string_free`].
#[no_mangle]
pub extern "C" fn mbprei_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mbprei_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a scenario from a JSON string.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mbprei_spec_from_json(json: *const c_char, out: *mut *mut MbpreiSpec) -> MbpreiStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let spec = EnvironmentSpec::from_json(c_str(json, "json")?)?;
        *out = Box::into_raw(checked_spec(spec)?);
        Ok(())
    })
}

/// Parses and validates a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mbprei_spec_from_path(path: *const c_char, out: *mut *mut MbpreiSpec) -> MbpreiStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let spec = EnvironmentSpec::from_path(c_str(path, "path")?)?;
        *out = Box::into_raw(checked_spec(spec)?);
        Ok(())
    })
}

/// # Safety
/// `spec` must come from `mbprei_spec_from_*` and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mbprei_spec_free(spec: *mut MbpreiSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mbprei_spec_dim(spec: *const MbpreiSpec, out: *mut usize) -> MbpreiStatus {
    guard(|| {
        *out_ref(out, "out")? = deref(spec, "spec")?.inner.d;
        Ok(())
    })
}

/// Number of environment states.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mbprei_spec_states(spec: *const MbpreiSpec, out: *mut usize) -> MbpreiStatus {
    guard(|| {
        *out_ref(out, "out")? = deref(spec, "spec")?.inner.states.len();
        Ok(())
    })
}

/// Mean matrix of `state`, row-major, into `out[0 .. d*d]`.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mbprei_spec_mean_matrix(
    spec: *const MbpreiSpec,
    state: usize,
    out: *mut f64,
    len: usize,
) -> MbpreiStatus {
    guard(|| {
        let spec = &deref(spec, "spec")?.inner;
        if state >= spec.states.len() {
            return Err(Fail(MbpreiStatus::InvalidArgument, format!("state {state} out of range")));
        }
        let m = spec.mean_matrices()?.swap_remove(state);
        out_slice(out, len, spec.d * spec.d, "out")?.copy_from_slice(m.entries());
        Ok(())
    })
}

/// Backward-sweep directions for an explicit matrix sequence.
///
/// `data` holds `count` row-major `d x d` matrices; the terminal vector is uniform.
///
/// # Safety
/// `data` must hold `count * d * d` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mbprei_directions_from_matrices(
    data: *const f64,
    d: usize,
    count: usize,
    out: *mut *mut MbpreiDirections,
) -> MbpreiStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        if data.is_null() {
            return Err(null("data"));
        }
        if d == 0 || count == 0 {
            return Err(Fail(MbpreiStatus::InvalidArgument, "d and count must be positive".into()));
        }
        let flat = std::slice::from_raw_parts(data, count * d * d);
        let mats = flat
            .chunks(d * d)
            .map(|c| ranmat::MeanMatrix::from_rows(c.chunks(d).map(<[f64]>::to_vec).collect()))
            .collect::<Result<Vec<_>, _>>()?;
        let table = ranmat::forward_directions(&mats, &ranmat::uniform_vector(d))?;
        *out = Box::into_raw(Box::new(MbpreiDirections { inner: table }));
        Ok(())
    })
}

/// Samples an environment of `n` steps plus a certified horizon and builds its directions.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mbprei_directions_sample(
    spec: *const MbpreiSpec,
    n: usize,
    tol: f64,
    horizon_cap: usize,
    seed: u64,
    out: *mut *mut MbpreiDirections,
) -> MbpreiStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let spec = &deref(spec, "spec")?.inner;
        let h = ranmat::choose_horizon(spec, tol, horizon_cap, seed)?;
        let env = sample_environment(spec, n + h.horizon, rng::derive_seed(seed, domain::ENVIRONMENT, 0))?;
        let table = ranmat::forward_directions(&env.mean_matrices()?, &ranmat::uniform_vector(spec.d))?;
        *out = Box::into_raw(Box::new(MbpreiDirections { inner: table }));
        Ok(())
    })
}

/// # Safety
/// `dirs` must come from `mbprei_directions_*` and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mbprei_directions_free(dirs: *mut MbpreiDirections) {
    if !dirs.is_null() {
        drop(Box::from_raw(dirs));
    }
}

/// Number of matrices `N` in the table.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mbprei_directions_horizon(dirs: *const MbpreiDirections, out: *mut usize) -> MbpreiStatus {
    guard(|| {
        *out_ref(out, "out")? = deref(dirs, "dirs")?.inner.horizon;
        Ok(())
    })
}

/// `lambda_hat[n]` for `n < N`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mbprei_directions_lambda(
    dirs: *const MbpreiDirections,
    n: usize,
    out: *mut f64,
) -> MbpreiStatus {
    guard(|| {
        let t = &deref(dirs, "dirs")?.inner;
        let value = *t
            .lambda_hat
            .get(n)
            .ok_or_else(|| Fail(MbpreiStatus::InvalidArgument, format!("n = {n} >= horizon {}", t.horizon)))?;
        *out_ref(out, "out")? = value;
        Ok(())
    })
}

/// `u_hat[n]` for `n <= N`, into `out[0 .. d]`.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mbprei_directions_u(
    dirs: *const MbpreiDirections,
    n: usize,
    out: *mut f64,
    len: usize,
) -> MbpreiStatus {
    guard(|| {
        let t = &deref(dirs, "dirs")?.inner;
        let u = t
            .u_hat
            .get(n)
            .ok_or_else(|| Fail(MbpreiStatus::InvalidArgument, format!("n = {n} > horizon {}", t.horizon)))?;
        out_slice(out, len, u.len(), "out")?.copy_from_slice(u);
        Ok(())
    })
}

/// Largest L1 residual of the eigen-relation over the table.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mbprei_directions_residual(dirs: *const MbpreiDirections, out: *mut f64) -> MbpreiStatus {
    guard(|| {
        *out_ref(out, "out")? = deref(dirs, "dirs")?.inner.residual();
        Ok(())
    })
}

/// Simulates `n` generations from one ancestor of `initial_type` in a sampled environment.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mbprei_trajectory_simulate(
    spec: *const MbpreiSpec,
    initial_type: usize,
    n: usize,
    immigration: bool,
    seed: u64,
    out: *mut *mut MbpreiTrajectory,
) -> MbpreiStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let spec = &deref(spec, "spec")?.inner;
        let env = sample_environment(spec, n.max(1), rng::derive_seed(seed, domain::ENVIRONMENT, 0))?;
        let mode = if immigration { ImmigrationMode::Sampled } else { ImmigrationMode::Disabled };
        let traj = sim::simulate_trajectory(
            &env,
            initial_type,
            n,
            rng::derive_seed(seed, domain::TRAJECTORY, 0),
            &mode,
            TagMode::PerImmigrant,
        )?;
        *out = Box::into_raw(Box::new(MbpreiTrajectory { inner: traj }));
        Ok(())
    })
}

/// # Safety
/// `traj` must come from `mbprei_trajectory_simulate` and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mbprei_trajectory_free(traj: *mut MbpreiTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of simulated generations `n` (the trajectory holds `n + 1` populations).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mbprei_trajectory_len(traj: *const MbpreiTrajectory, out: *mut usize) -> MbpreiStatus {
    guard(|| {
        *out_ref(out, "out")? = deref(traj, "traj")?.inner.len();
        Ok(())
    })
}

/// Total population of generation `generation`, into `out[0 .. d]`.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn mbprei_trajectory_total(
    traj: *const MbpreiTrajectory,
    generation: usize,
    out: *mut u64,
    len: usize,
) -> MbpreiStatus {
    guard(|| {
        let t = &deref(traj, "traj")?.inner;
        let g = t
            .generations
            .get(generation)
            .ok_or_else(|| Fail(MbpreiStatus::InvalidArgument, format!("generation {generation} > {}", t.len())))?;
        out_slice(out, len, g.total.0.len(), "out")?.copy_from_slice(&g.total.0);
        Ok(())
    })
}

/// Trajectory rows as CSV text. Free with [`mbprei_string_free`].
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mbprei_trajectory_csv(traj: *const MbpreiTrajectory, out: *mut *mut c_char) -> MbpreiStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let mut buf = Vec::new();
        sim::write_trajectory_csv(&deref(traj, "traj")?.inner, &mut buf)?;
        *out = into_c_string(String::from_utf8_lossy(&buf).into_owned());
        Ok(())
    })
}

/// Lyapunov exponent estimate and its standard error.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mbprei_estimate_gamma(
    spec: *const MbpreiSpec,
    n: usize,
    reps: usize,
    seed: u64,
    gamma: *mut f64,
    std_error: *mut f64,
) -> MbpreiStatus {
    guard(|| {
        let spec = &deref(spec, "spec")?.inner;
        let gamma = out_ref(gamma, "gamma")?;
        let std_error = out_ref(std_error, "std_error")?;
        let r = ranmat::lyapunov_estimate(spec, n, reps, seed)?;
        *gamma = r.gamma_hat;
        *std_error = r.std_error;
        Ok(())
    })
}

/// Moment-Lyapunov estimate at `s <= 0` from products of length `n`.
///
/// `reps == 0` selects exhaustive enumeration of environment words.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mbprei_estimate_kappa(
    spec: *const MbpreiSpec,
    s: f64,
    n: usize,
    reps: usize,
    seed: u64,
    kappa: *mut f64,
    ci_low: *mut f64,
    ci_high: *mut f64,
) -> MbpreiStatus {
    guard(|| {
        let spec = &deref(spec, "spec")?.inner;
        let kappa = out_ref(kappa, "kappa")?;
        let ci_low = out_ref(ci_low, "ci_low")?;
        let ci_high = out_ref(ci_high, "ci_high")?;
        let mode = if reps == 0 { KappaMode::Enumerate { max_words: 1 << 24 } } else { KappaMode::MonteCarlo { reps } };
        let r = ranmat::kappa_estimate(spec, s, &[n], mode, seed)?;
        *kappa = r.kappa_hat;
        *ci_low = r.ci_low;
        *ci_high = r.ci_high;
        Ok(())
    })
}

/// Runs the command-line front end in process and returns its exit status.
///
/// `argv[0]` is the program name, as for `main`.
///
/// # Safety
/// `argv` must hold `argc` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn mbprei_run(argc: c_int, argv: *const *const c_char) -> c_int {
    let args: Result<Vec<String>, Fail> = (|| {
        if argv.is_null() || argc < 0 {
            return Err(null("argv"));
        }
        (0..argc as usize).map(|i| c_str(*argv.add(i), "argv entry").map(str::to_owned)).collect()
    })();
    let args = match args {
        Ok(a) => a,
        Err(Fail(_, msg)) => {
            set_error(msg);
            return mbprei::harness::EXIT_FAILURE;
        }
    };
    catch_unwind(|| mbprei::harness::run(args)).unwrap_or_else(|_| {
        set_error("panic in command".into());
        mbprei::harness::EXIT_NUMERICAL
    })
}
