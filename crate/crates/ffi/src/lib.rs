//! C ABI for the reach-avoid ILQ solvers: opaque handles, integer status
//! codes, and a thread-local last-error message. The generated header lives
//! at `include/raig.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use raig_core::ilq::{ilq_solve, SolveStatus, Subroutine};
use raig_core::scenarios::{load_scenario, Scenario, ScenarioFile};

/// Status code returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaigStatus {
    Ok = 0,
    InvalidArgument = 1,
    ParseError = 2,
    SolveError = 3,
    BufferTooSmall = 4,
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap();
    });
}

/// Message describing the most recent error on this thread. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn raig_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Opaque scenario handle.
pub struct RaigScenario {
    inner: Scenario,
}

/// Opaque solve-result handle.
pub struct RaigSolution {
    objectives: Vec<f64>,
    iterations: usize,
    converged: bool,
    states: Vec<f64>,
    state_dim: usize,
    horizon: usize,
    trajectory_json: String,
}

/// Solver options. Obtain defaults from [`raig_solve_options_default`] and
/// override fields as needed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RaigSolveOptions {
    /// Nonzero selects the time-consistent subroutine; zero the pinch-point.
    pub time_consistent: i32,
    /// Control regularization weight; must be positive.
    pub eta: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the max state change between iterates.
    pub convergence_tolerance: f64,
    /// Nonzero stops as soon as every player's objective is nonpositive.
    pub early_stop: i32,
    /// Nonzero samples the initial state from the scenario's start region
    /// using `seed`; zero uses the nominal start.
    pub sample_start: i32,
    pub seed: u64,
}

#[no_mangle]
pub extern "C" fn raig_solve_options_default() -> RaigSolveOptions {
    let config = raig_core::ilq::SolverConfig::default();
    RaigSolveOptions {
        time_consistent: 1,
        eta: config.eta,
        max_iterations: config.max_iterations,
        convergence_tolerance: config.convergence_tolerance,
        early_stop: 0,
        sample_start: 0,
        seed: 0,
    }
}

unsafe fn cstr_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, RaigStatus> {
    if ptr.is_null() {
        set_error(&format!("{name} is null"));
        return Err(RaigStatus::InvalidArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{name} is not valid UTF-8"));
        RaigStatus::InvalidArgument
    })
}

fn guard<T>(out: *mut *mut T, body: impl FnOnce() -> Result<T, RaigStatus>) -> RaigStatus {
    if out.is_null() {
        set_error("output pointer is null");
        return RaigStatus::InvalidArgument;
    }
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(value)) => {
            unsafe { *out = Box::into_raw(Box::new(value)) };
            RaigStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic");
            RaigStatus::Panic
        }
    }
}

/// Build a scenario from a builtin id (`one-player`, `defensive-driving`,
/// `t-intersection`) or a path to a scenario JSON file.
///
/// # Safety
/// `spec` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn raig_scenario_create(
    spec: *const c_char,
    out: *mut *mut RaigScenario,
) -> RaigStatus {
    let spec = match cstr_arg(spec, "spec") {
        Ok(s) => s.to_owned(),
        Err(status) => return status,
    };
    guard(out, move || {
        load_scenario(&spec)
            .map(|inner| RaigScenario { inner })
            .map_err(|e| {
                set_error(&e.to_string());
                RaigStatus::ParseError
            })
    })
}

/// Build a scenario from a JSON document (same schema as scenario files).
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn raig_scenario_from_json(
    json: *const c_char,
    out: *mut *mut RaigScenario,
) -> RaigStatus {
    let json = match cstr_arg(json, "json") {
        Ok(s) => s.to_owned(),
        Err(status) => return status,
    };
    guard(out, move || {
        let file: ScenarioFile = serde_json::from_str(&json).map_err(|e| {
            set_error(&format!("invalid scenario json: {e}"));
            RaigStatus::ParseError
        })?;
        file.build().map(|inner| RaigScenario { inner }).map_err(|e| {
            set_error(&e.to_string());
            RaigStatus::ParseError
        })
    })
}

/// # Safety
/// `scenario` must be a pointer from `raig_scenario_create` (or null).
#[no_mangle]
pub unsafe extern "C" fn raig_scenario_free(scenario: *mut RaigScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// # Safety
/// `scenario` must be a valid scenario handle.
#[no_mangle]
pub unsafe extern "C" fn raig_scenario_num_players(scenario: *const RaigScenario) -> usize {
    scenario.as_ref().map_or(0, |s| s.inner.players.len())
}

/// # Safety
/// `scenario` must be a valid scenario handle.
#[no_mangle]
pub unsafe extern "C" fn raig_scenario_state_dim(scenario: *const RaigScenario) -> usize {
    scenario.as_ref().map_or(0, |s| s.inner.system.state_dim())
}

/// # Safety
/// `scenario` must be a valid scenario handle.
#[no_mangle]
pub unsafe extern "C" fn raig_scenario_horizon(scenario: *const RaigScenario) -> usize {
    scenario.as_ref().map_or(0, |s| s.inner.horizon)
}

/// Solve a scenario. On success the caller owns the returned solution and
/// must free it with [`raig_solution_free`].
///
/// # Safety
/// `scenario` must be a valid scenario handle; `options` may be null for
/// defaults; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn raig_solve(
    scenario: *const RaigScenario,
    options: *const RaigSolveOptions,
    out: *mut *mut RaigSolution,
) -> RaigStatus {
    let Some(handle) = scenario.as_ref() else {
        set_error("scenario is null");
        return RaigStatus::InvalidArgument;
    };
    let options = if options.is_null() {
        raig_solve_options_default()
    } else {
        *options
    };
    guard(out, move || {
        let eta_valid = options.eta.is_finite() && options.eta > 0.0;
        if !eta_valid || options.convergence_tolerance < 0.0 {
            set_error("eta must be positive and tolerance nonnegative");
            return Err(RaigStatus::InvalidArgument);
        }
        let subroutine = if options.time_consistent != 0 {
            Subroutine::TimeConsistent
        } else {
            Subroutine::PinchPoint
        };
        let mut scenario = handle.inner.clone();
        if options.sample_start != 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            let x0 = scenario.sample_start(&mut rng).map_err(|e| {
                set_error(&e.to_string());
                RaigStatus::SolveError
            })?;
            scenario = scenario.with_initial_state(x0);
        }
        let mut config = scenario.solver_config(subroutine);
        config.eta = options.eta;
        config.max_iterations = options.max_iterations;
        config.convergence_tolerance = options.convergence_tolerance;
        config.early_stop = options.early_stop != 0;

        let result = ilq_solve(&scenario, &config).map_err(|e| {
            set_error(&e.to_string());
            RaigStatus::SolveError
        })?;
        let traj = result.trajectory();
        let mut states = Vec::with_capacity(traj.states.len() * traj.state_dim());
        for x in &traj.states {
            states.extend_from_slice(x.as_slice());
        }
        let trajectory_json = traj.to_json().map_err(|e| {
            set_error(&e.to_string());
            RaigStatus::SolveError
        })?;
        Ok(RaigSolution {
            objectives: result.objectives.clone(),
            iterations: result.iterations(),
            converged: matches!(
                result.status,
                SolveStatus::Converged | SolveStatus::EarlyStopped
            ),
            states,
            state_dim: traj.state_dim(),
            horizon: traj.horizon(),
            trajectory_json,
        })
    })
}

/// # Safety
/// `solution` must be a pointer from `raig_solve` (or null).
#[no_mangle]
pub unsafe extern "C" fn raig_solution_free(solution: *mut RaigSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// 1 when the solve converged or stopped early at a satisfied objective.
///
/// # Safety
/// `solution` must be a valid solution handle.
#[no_mangle]
pub unsafe extern "C" fn raig_solution_converged(solution: *const RaigSolution) -> i32 {
    solution.as_ref().map_or(0, |s| s.converged as i32)
}

/// # Safety
/// `solution` must be a valid solution handle.
#[no_mangle]
pub unsafe extern "C" fn raig_solution_iterations(solution: *const RaigSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.iterations)
}

/// Final reach-avoid objective of one player; NaN for a bad index.
///
/// # Safety
/// `solution` must be a valid solution handle.
#[no_mangle]
pub unsafe extern "C" fn raig_solution_objective(
    solution: *const RaigSolution,
    player: usize,
) -> f64 {
    solution
        .as_ref()
        .and_then(|s| s.objectives.get(player).copied())
        .unwrap_or(f64::NAN)
}

/// Number of stored states (horizon + 1).
///
/// # Safety
/// `solution` must be a valid solution handle.
#[no_mangle]
pub unsafe extern "C" fn raig_solution_state_count(solution: *const RaigSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.horizon + 1)
}

/// # Safety
/// `solution` must be a valid solution handle.
#[no_mangle]
pub unsafe extern "C" fn raig_solution_state_dim(solution: *const RaigSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.state_dim)
}

/// Copy the trajectory states into `buffer` as row-major
/// `state_count x state_dim` doubles. `len` is the buffer capacity in
/// doubles.
///
/// # Safety
/// `solution` must be a valid solution handle and `buffer` must point to at
/// least `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn raig_solution_states(
    solution: *const RaigSolution,
    buffer: *mut f64,
    len: usize,
) -> RaigStatus {
    let Some(s) = solution.as_ref() else {
        set_error("solution is null");
        return RaigStatus::InvalidArgument;
    };
    if buffer.is_null() {
        set_error("buffer is null");
        return RaigStatus::InvalidArgument;
    }
    if len < s.states.len() {
        set_error(&format!(
            "buffer holds {len} doubles, need {}",
            s.states.len()
        ));
        return RaigStatus::BufferTooSmall;
    }
    std::ptr::copy_nonoverlapping(s.states.as_ptr(), buffer, s.states.len());
    RaigStatus::Ok
}

/// Trajectory as a JSON document. The returned string must be released with
/// [`raig_string_free`].
///
/// # Safety
/// `solution` must be a valid solution handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn raig_solution_trajectory_json(
    solution: *const RaigSolution,
    out: *mut *mut c_char,
) -> RaigStatus {
    let Some(s) = solution.as_ref() else {
        set_error("solution is null");
        return RaigStatus::InvalidArgument;
    };
    if out.is_null() {
        set_error("output pointer is null");
        return RaigStatus::InvalidArgument;
    }
    match CString::new(s.trajectory_json.clone()) {
        Ok(cstring) => {
            *out = cstring.into_raw();
            RaigStatus::Ok
        }
        Err(_) => {
            set_error("trajectory json contains a NUL byte");
            RaigStatus::SolveError
        }
    }
}

/// # Safety
/// `string` must come from this library (or be null).
#[no_mangle]
pub unsafe extern "C" fn raig_string_free(string: *mut c_char) {
    if !string.is_null() {
        drop(CString::from_raw(string));
    }
}
