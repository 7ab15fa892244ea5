//! Independent oracles and empirical probes: brute-force reach-avoid
//! evaluation, finite-difference derivative checks, a standalone affine LQR
//! recursion, and time-consistency / unilateral-deviation probes.
//!
//! Oracle code here deliberately avoids the solver's code paths: the
//! brute-force objective shares nothing with the backward recursion beyond
//! margin evaluation, and the LQR oracle uses the Schur-complement value
//! update rather than the closed-loop form.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ilq::{ilq_solve_from, rollout, SolverConfig};
use crate::margins::MarginFn;
use crate::reach_avoid::cost_to_go;
use crate::scenarios::Scenario;
use crate::types::{AffineStrategy, PlayerCost, Trajectory};

/// Direct evaluation of the reach-avoid objective-to-go from step `s`:
/// `min over t >= s of max(l_t(x_t), max over tau in [s, t] of g_tau(x_tau))`.
/// Naive O(T^2) double loop by construction.
pub fn brute_force_objective(
    traj: &Trajectory,
    target: &dyn MarginFn,
    failure: &dyn MarginFn,
    s: usize,
) -> f64 {
    let horizon = traj.horizon();
    assert!(s <= horizon);
    let mut best = f64::INFINITY;
    for t in s..=horizon {
        let mut worst_failure = f64::NEG_INFINITY;
        for tau in s..=t {
            worst_failure = worst_failure.max(failure.value(&traj.states[tau], tau));
        }
        let outcome = target.value(&traj.states[t], t).max(worst_failure);
        best = best.min(outcome);
    }
    best
}

/// Analytic Hessian callback, passed by reference so callers can hand in
/// `None` without naming a closure type.
pub type HessianFn<'a> = &'a dyn Fn(&DVector<f64>) -> DMatrix<f64>;

/// Max relative error between analytic derivatives and central finite
/// differences at one point. The gradient is checked against differences of
/// the value; the Hessian (when provided) against differences of the analytic
/// gradient. Relative error uses `max(1, |fd|)` in the denominator so tiny
/// derivatives are compared absolutely.
pub fn derivative_check(
    value: impl Fn(&DVector<f64>) -> f64,
    gradient: impl Fn(&DVector<f64>) -> DVector<f64>,
    hessian: Option<HessianFn<'_>>,
    point: &DVector<f64>,
    h: f64,
) -> f64 {
    assert!(h > 0.0);
    let n = point.len();
    let mut worst: f64 = 0.0;
    let analytic_grad = gradient(point);
    for i in 0..n {
        let mut plus = point.clone();
        plus[i] += h;
        let mut minus = point.clone();
        minus[i] -= h;
        let fd = (value(&plus) - value(&minus)) / (2.0 * h);
        worst = worst.max((analytic_grad[i] - fd).abs() / fd.abs().max(1.0));
    }
    if let Some(hess) = hessian {
        let analytic_hess = hess(point);
        for i in 0..n {
            let mut plus = point.clone();
            plus[i] += h;
            let mut minus = point.clone();
            minus[i] -= h;
            let fd_col = (gradient(&plus) - gradient(&minus)) / (2.0 * h);
            for j in 0..n {
                worst = worst
                    .max((analytic_hess[(j, i)] - fd_col[j]).abs() / fd_col[j].abs().max(1.0));
            }
        }
    }
    worst
}

/// Max relative error of analytic step Jacobians `(A, B_1..B_N)` against
/// central finite differences of `step` at `(x, controls)`.
pub fn jacobian_check(
    step: impl Fn(&DVector<f64>, &[DVector<f64>]) -> DVector<f64>,
    x: &DVector<f64>,
    controls: &[DVector<f64>],
    a: &DMatrix<f64>,
    bs: &[DMatrix<f64>],
    h: f64,
) -> f64 {
    let n = x.len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let mut plus = x.clone();
        plus[i] += h;
        let mut minus = x.clone();
        minus[i] -= h;
        let fd = (step(&plus, controls) - step(&minus, controls)) / (2.0 * h);
        for j in 0..n {
            worst = worst.max((a[(j, i)] - fd[j]).abs() / fd[j].abs().max(1.0));
        }
    }
    for (p, b) in bs.iter().enumerate() {
        for i in 0..controls[p].len() {
            let mut plus = controls.to_vec();
            plus[p][i] += h;
            let mut minus = controls.to_vec();
            minus[p][i] -= h;
            let fd = (step(x, &plus) - step(x, &minus)) / (2.0 * h);
            for j in 0..n {
                worst = worst.max((b[(j, i)] - fd[j]).abs() / fd[j].abs().max(1.0));
            }
        }
    }
    worst
}

/// Independent finite-horizon LQR for affine dynamics
/// `x' = A_t x + B_t u + c_t` with stage costs from `cost` (half-scaled
/// convention). Returns feedback gains and feedforwards `u = -K x - k`.
///
/// Uses the Schur-complement value update
/// `P <- Q + A'PA - Qux' Quu^{-1} Qux`, a different algebraic route from the
/// game solver's closed-loop form, so the two can cross-check each other.
pub fn affine_lqr(
    transitions: &[DMatrix<f64>],
    control_jacobians: &[DMatrix<f64>],
    drifts: &[DVector<f64>],
    cost: &PlayerCost,
) -> (Vec<DMatrix<f64>>, Vec<DVector<f64>>) {
    let horizon = transitions.len();
    let mut p_matrix = cost.state_hessians[horizon].clone();
    let mut p_vector = cost.state_gradients[horizon].clone();
    let mut gains = vec![DMatrix::zeros(0, 0); horizon];
    let mut feedforwards = vec![DVector::zeros(0); horizon];
    for t in (0..horizon).rev() {
        let a = &transitions[t];
        let b = &control_jacobians[t];
        let c = &drifts[t];
        let quu = &cost.control_hessians[t] + b.transpose() * &p_matrix * b;
        let qux = b.transpose() * &p_matrix * a;
        let qu = &cost.control_gradients[t] + b.transpose() * (&p_matrix * c + &p_vector);
        let lu = quu.lu();
        let k_mat = lu.solve(&qux).expect("LQR Quu must be invertible");
        let k_vec = lu.solve(&qu).expect("LQR Quu must be invertible");
        let p_new = &cost.state_hessians[t] + a.transpose() * &p_matrix * a
            - qux.transpose() * &k_mat;
        let p_vec_new = &cost.state_gradients[t]
            + a.transpose() * (&p_matrix * c + &p_vector)
            - qux.transpose() * &k_vec;
        p_matrix = (&p_new + p_new.transpose()) * 0.5;
        p_vector = p_vec_new;
        gains[t] = k_mat;
        feedforwards[t] = k_vec;
    }
    (gains, feedforwards)
}

/// Summary statistics over probe samples.
#[derive(Debug, Clone, Serialize)]
pub struct ExcessStats {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl ExcessStats {
    pub fn from_samples(mut samples: Vec<f64>) -> Option<ExcessStats> {
        if samples.is_empty() {
            return None;
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if samples.len() % 2 == 1 {
            samples[samples.len() / 2]
        } else {
            0.5 * (samples[samples.len() / 2 - 1] + samples[samples.len() / 2])
        };
        Some(ExcessStats {
            min: samples[0],
            median,
            max: *samples.last().unwrap(),
        })
    }
}

/// Per-player objectives of a trajectory under a scenario's margins.
fn scenario_objectives(scenario: &Scenario, traj: &Trajectory) -> Vec<f64> {
    scenario
        .players
        .iter()
        .map(|p| cost_to_go(traj, p.target.as_ref(), p.failure.as_ref()).initial())
        .collect()
}

/// Report of a time-consistency probe at one truncation time.
#[derive(Debug, Clone, Serialize)]
pub struct TimeConsistencyReport {
    pub truncation_time: usize,
    pub samples: usize,
    /// `excess[i]` holds player i's per-sample excess
    /// `J_s(truncated rollout) - J_s(re-solve)`.
    pub excess: Vec<Vec<f64>>,
    pub excess_stats: Vec<ExcessStats>,
    pub failures: usize,
}

/// Empirical probe of local strong time consistency: perturb the state at
/// step `s` within a ball of radius `delta_x`, roll out the truncated
/// strategy, and compare against re-solving the truncated problem from the
/// perturbed state with the same subroutine.
///
/// The re-solve is warm-started from the truncated strategy (so a converged
/// fixed point probed with `delta_x = 0` reports zero excess) and, when the
/// scenario carries pursuit goals, additionally from the crude goal-seeking
/// seed; each player's best re-solve objective is used. Positive excess is
/// falsification evidence: the truncated strategy left value on the table.
pub fn time_consistency_probe(
    scenario: &Scenario,
    strategy: &AffineStrategy,
    config: &SolverConfig,
    s: usize,
    delta_x: f64,
    n_samples: usize,
    seed: u64,
) -> TimeConsistencyReport {
    let num_players = scenario.players.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut excess: Vec<Vec<f64>> = vec![Vec::with_capacity(n_samples); num_players];
    let mut failures = 0;

    let mut resolve_config = config.clone();
    resolve_config.early_stop = false;

    let truncated_strategy = truncate_strategy(strategy, s);
    for _ in 0..n_samples {
        let x = sample_in_ball(&mut rng, &strategy.reference.states[s], delta_x);
        let sub_scenario = scenario.truncate(s, x.clone());

        // (a) roll the truncated strategy out from the perturbed state.
        let Ok(rolled) = rollout(&sub_scenario.system, &x, &truncated_strategy, 1.0) else {
            failures += 1;
            continue;
        };
        let j_rollout = scenario_objectives(&sub_scenario, &rolled);

        // (b) re-solve the truncated problem, warm-started at (a).
        let warm = AffineStrategy {
            gains: truncated_strategy.gains.clone(),
            feedforwards: truncated_strategy
                .feedforwards
                .iter()
                .map(|seq| seq.iter().map(|k| DVector::zeros(k.len())).collect())
                .collect(),
            reference: rolled,
        };
        let mut best: Option<Vec<f64>> = None;
        let mut inits = vec![warm];
        if sub_scenario.pursuit_goals.iter().any(|g| g.is_some()) {
            if let Ok(pursuit) = sub_scenario.pursuit_strategy() {
                inits.push(pursuit);
            }
        }
        for init in inits {
            match ilq_solve_from(&sub_scenario, &resolve_config, init) {
                Ok(result) => {
                    let objectives = result.objectives;
                    best = Some(match best {
                        None => objectives,
                        Some(prev) => prev
                            .iter()
                            .zip(objectives.iter())
                            .map(|(a, b)| a.min(*b))
                            .collect(),
                    });
                }
                Err(_) => failures += 1,
            }
        }
        let Some(j_resolve) = best else {
            continue;
        };
        for i in 0..num_players {
            excess[i].push(j_rollout[i] - j_resolve[i]);
        }
    }

    let excess_stats = excess
        .iter()
        .map(|per_player| {
            ExcessStats::from_samples(per_player.clone()).unwrap_or(ExcessStats {
                min: f64::NAN,
                median: f64::NAN,
                max: f64::NAN,
            })
        })
        .collect();
    TimeConsistencyReport {
        truncation_time: s,
        samples: n_samples,
        excess,
        excess_stats,
        failures,
    }
}

fn truncate_strategy(strategy: &AffineStrategy, s: usize) -> AffineStrategy {
    AffineStrategy {
        gains: strategy.gains.iter().map(|seq| seq[s..].to_vec()).collect(),
        feedforwards: strategy
            .feedforwards
            .iter()
            .map(|seq| seq[s..].to_vec())
            .collect(),
        reference: Trajectory {
            states: strategy.reference.states[s..].to_vec(),
            controls: strategy
                .reference
                .controls
                .iter()
                .map(|seq| seq[s..].to_vec())
                .collect(),
            dt: strategy.reference.dt,
        },
    }
}

/// Report of a unilateral-deviation probe for one player.
#[derive(Debug, Clone, Serialize)]
pub struct NashProbeReport {
    pub player: usize,
    pub samples: usize,
    /// Objective decrease achieved by each perturbed strategy (positive
    /// means the deviation improved on the equilibrium candidate).
    pub improvements: Vec<f64>,
    pub improvement_count: usize,
    pub tolerance: f64,
    pub failures: usize,
}

/// Perturb one player's gains and feedforwards entrywise by uniform noise in
/// `[-delta_gamma, delta_gamma]` and measure how often the player's exact
/// rollout objective improves by more than `tolerance`. The objective is the
/// regularized one the players optimize: `J_0 + eta * sum_t |u_t|^2`.
#[allow(clippy::too_many_arguments)]
pub fn nash_probe(
    scenario: &Scenario,
    strategy: &AffineStrategy,
    player: usize,
    eta: f64,
    delta_gamma: f64,
    n_samples: usize,
    seed: u64,
    tolerance: f64,
) -> NashProbeReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = &scenario.players[player];
    let regularized = |traj: &Trajectory| {
        cost_to_go(traj, p.target.as_ref(), p.failure.as_ref()).initial()
            + eta
                * traj.controls[player]
                    .iter()
                    .map(|u| u.norm_squared())
                    .sum::<f64>()
    };
    let base = regularized(&strategy.reference);
    let mut improvements = Vec::with_capacity(n_samples);
    let mut failures = 0;
    for _ in 0..n_samples {
        let mut perturbed = strategy.clone();
        for t in 0..perturbed.horizon() {
            perturbed.gains[player][t].apply(|v| {
                *v += rng.random_range(-delta_gamma..=delta_gamma);
            });
            perturbed.feedforwards[player][t].apply(|v| {
                *v += rng.random_range(-delta_gamma..=delta_gamma);
            });
        }
        match rollout(
            &scenario.system,
            &scenario.initial_state,
            &perturbed,
            1.0,
        ) {
            Ok(traj) => improvements.push(base - regularized(&traj)),
            Err(_) => failures += 1,
        }
    }
    let improvement_count = improvements.iter().filter(|&&d| d > tolerance).count();
    NashProbeReport {
        player,
        samples: n_samples,
        improvements,
        improvement_count,
        tolerance,
        failures,
    }
}

pub(crate) fn standard_normal(rng: &mut impl rand::Rng) -> f64 {
    // Box-Muller; the lower bound dodges ln(0).
    let u1: f64 = rng.random_range(1e-12..1.0);
    let u2: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos()
}

/// Uniform sample from the closed ball of `radius` around `center`.
pub fn sample_in_ball(
    rng: &mut impl rand::Rng,
    center: &DVector<f64>,
    radius: f64,
) -> DVector<f64> {
    let n = center.len();
    if radius == 0.0 {
        return center.clone();
    }
    let dir = DVector::from_fn(n, |_, _| standard_normal(rng));
    let norm = dir.norm();
    if norm == 0.0 {
        return center.clone();
    }
    let r = radius * rng.random_range(0.0f64..1.0).powf(1.0 / n as f64);
    center + dir * (r / norm)
}
