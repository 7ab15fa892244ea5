//! The outer iterative LQ game loop: rollout, LQ approximation about the
//! current iterate, subroutine dispatch, and a backtracking line search on
//! the feedforward scale.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::lq_game::{solve_standard, solve_time_consistent};
use crate::margins::{quadratize, MarginFn};
use crate::reach_avoid::critical_set;
use crate::scenarios::Scenario;
use crate::types::{AffineStrategy, CriticalEntry, CriticalSet, LqApprox, PlayerCost, Trajectory};
use crate::{Error, Result};

/// Which LQ solver runs inside each outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Subroutine {
    /// Quadratize only at each player's single pinch point; standard
    /// time-additive coupled Riccati solve.
    PinchPoint,
    /// Quadratize at every critical time and reset value functions there.
    TimeConsistent,
}

impl Subroutine {
    pub fn short_name(&self) -> &'static str {
        match self {
            Subroutine::PinchPoint => "pp",
            Subroutine::TimeConsistent => "tc",
        }
    }
}

impl std::str::FromStr for Subroutine {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pp" | "pinch-point" | "pinch_point" => Ok(Subroutine::PinchPoint),
            "tc" | "time-consistent" | "time_consistent" => Ok(Subroutine::TimeConsistent),
            other => Err(format!("unknown solver '{other}', expected 'pp' or 'tc'")),
        }
    }
}

/// Outer-loop configuration. All defaults are documented solver choices, not
/// values with any external provenance.
#[derive(Debug, Clone, Serialize)]
pub struct SolverConfig {
    pub subroutine: Subroutine,
    /// Control regularization weight (the objective gains `eta * |u|^2`).
    pub eta: f64,
    pub max_iterations: usize,
    /// Converged when the max componentwise state change between consecutive
    /// trajectory iterates drops below this (meters/radians mixed).
    pub convergence_tolerance: f64,
    /// Initial feedforward scale for the line search.
    pub initial_alpha: f64,
    /// Multiplicative backtracking factor in (0, 1).
    pub alpha_shrink: f64,
    pub max_backtracks: usize,
    /// Floor for the ridge added to quadratized Hessians.
    pub lambda_reg: f64,
    /// Initial ridge. The loop adapts the ridge between `lambda_reg` and
    /// `lambda_max` based on how far the line search had to backtrack,
    /// Levenberg-Marquardt style: full steps relax it, rejections grow it.
    pub lambda_init: f64,
    pub lambda_max: f64,
    /// Weight of the mean objective-to-go over suffixes in the
    /// time-consistent line-search merit (see [`merit`]).
    pub tc_suffix_weight: f64,
    /// Largest state deviation a fallback step may take when every
    /// backtracked step fails the merit test. In adversarial games the sum
    /// merit is near zero-sum, so progress happens through these bounded
    /// fallback steps.
    pub fallback_deviation_cap: f64,
    /// Stop as soon as every player's objective is nonpositive (the batch
    /// protocol for "target reached without previous violation").
    pub early_stop: bool,
    /// Merit increase tolerated when accepting a line-search step.
    pub merit_slack: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            subroutine: Subroutine::TimeConsistent,
            eta: 1e-2,
            max_iterations: 200,
            convergence_tolerance: 1e-3,
            initial_alpha: 1.0,
            alpha_shrink: 0.5,
            max_backtracks: 16,
            lambda_reg: 1e-4,
            lambda_init: 1.0,
            lambda_max: 1e3,
            tc_suffix_weight: 1.0,
            fallback_deviation_cap: 1.0,
            early_stop: false,
            merit_slack: 1e-9,
        }
    }
}

impl SolverConfig {
    pub fn with_subroutine(subroutine: Subroutine) -> Self {
        SolverConfig {
            subroutine,
            ..SolverConfig::default()
        }
    }
}

/// How a solve ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// Consecutive iterates differed by less than the tolerance.
    Converged,
    /// `early_stop` was set and every player's objective reached zero.
    EarlyStopped,
    MaxIterations,
    /// Every line-search rollout diverged; the last valid iterate is kept.
    LineSearchFailed,
}

/// One line of the iteration log.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    #[serde(rename = "iter")]
    pub iteration: usize,
    /// Each player's reach-avoid objective on the iterate the step started from.
    pub objectives: Vec<f64>,
    pub alpha: f64,
    pub max_deviation: f64,
    /// Quadratization ridge used this iteration.
    pub lambda: f64,
    pub critical_times: Vec<Vec<CriticalEntry>>,
}

/// Converged (or last) strategy plus diagnostics.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub strategy: AffineStrategy,
    /// Final per-player objectives on the returned trajectory.
    pub objectives: Vec<f64>,
    /// Final per-player critical sets.
    pub critical: Vec<CriticalSet>,
    pub log: Vec<IterationRecord>,
}

impl SolveResult {
    pub fn trajectory(&self) -> &Trajectory {
        &self.strategy.reference
    }

    pub fn iterations(&self) -> usize {
        self.log.len()
    }

    /// Iteration log as JSON lines.
    pub fn log_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.log {
            out.push_str(&serde_json::to_string(record).expect("log serializes"));
            out.push('\n');
        }
        out
    }
}

/// Forward-simulate a strategy from `x0` with feedforward scale `alpha`.
/// The control law is `u_i = u_ref_i - K_i (x - x_ref) - alpha * k_i`.
pub fn rollout(
    system: &crate::dynamics::MultiAgentSystem,
    x0: &DVector<f64>,
    strategy: &AffineStrategy,
    alpha: f64,
) -> Result<Trajectory> {
    let horizon = strategy.horizon();
    let num_players = strategy.num_players();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(horizon); num_players];
    let mut x = x0.clone();
    states.push(x.clone());
    for t in 0..horizon {
        let us: Vec<DVector<f64>> = (0..num_players)
            .map(|i| strategy.control(i, t, &x, alpha))
            .collect();
        let next = system.joint_step(&x, &us, t)?;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteRollout {
                time: t,
                controls: us.iter().map(|u| u.as_slice().to_vec()).collect(),
            });
        }
        for (i, u) in us.into_iter().enumerate() {
            controls[i].push(u);
        }
        states.push(next.clone());
        x = next;
    }
    Ok(Trajectory {
        states,
        controls,
        dt: system.dt(),
    })
}

/// Quadratize the game about `traj`: state costs appear only at the given
/// critical times (the active margin of each entry), control costs are the
/// expansion of `eta * |u|^2` about the reference controls at every step,
/// i.e. `R = 2 eta I`, `r = 2 eta u_ref`.
pub fn build_lq_approx(
    system: &crate::dynamics::MultiAgentSystem,
    traj: &Trajectory,
    targets: &[&dyn MarginFn],
    failures: &[&dyn MarginFn],
    critical: &[CriticalSet],
    eta: f64,
    lambda_reg: f64,
) -> LqApprox {
    let horizon = traj.horizon();
    let n = traj.state_dim();
    let num_players = targets.len();

    let mut transitions = Vec::with_capacity(horizon);
    let mut control_jacobians: Vec<Vec<DMatrix<f64>>> =
        vec![Vec::with_capacity(horizon); num_players];
    for t in 0..horizon {
        let us: Vec<DVector<f64>> = (0..num_players)
            .map(|i| traj.controls[i][t].clone())
            .collect();
        let (a, bs) = system.linearize(&traj.states[t], &us, t);
        transitions.push(a);
        for (i, b) in bs.into_iter().enumerate() {
            control_jacobians[i].push(b);
        }
    }

    let costs = (0..num_players)
        .map(|i| {
            let m = system.control_dims()[i];
            let mut state_hessians = vec![DMatrix::zeros(n, n); horizon + 1];
            let mut state_gradients = vec![DVector::zeros(n); horizon + 1];
            for entry in &critical[i].entries {
                let margin: &dyn MarginFn = match entry.kind {
                    crate::types::MarginKind::Target => targets[i],
                    crate::types::MarginKind::Failure => failures[i],
                };
                let quad = quadratize(margin, &traj.states[entry.time], entry.time, lambda_reg);
                state_hessians[entry.time] = quad.q_matrix;
                // Deviation coordinates: the linear term is the raw gradient.
                state_gradients[entry.time] = quad.gradient;
            }
            let control_hessians = (0..horizon)
                .map(|_| DMatrix::identity(m, m) * (2.0 * eta))
                .collect();
            let control_gradients = (0..horizon)
                .map(|t| 2.0 * eta * &traj.controls[i][t])
                .collect();
            PlayerCost {
                state_hessians,
                state_gradients,
                control_hessians,
                control_gradients,
            }
        })
        .collect();

    LqApprox {
        transitions,
        control_jacobians,
        costs,
    }
}

fn player_objectives(scenario: &Scenario, traj: &Trajectory) -> (Vec<f64>, Vec<CriticalSet>) {
    let mut objectives = Vec::with_capacity(scenario.players.len());
    let mut critical = Vec::with_capacity(scenario.players.len());
    for player in &scenario.players {
        let (set, ctg) = critical_set(traj, player.target.as_ref(), player.failure.as_ref());
        objectives.push(ctg.initial());
        critical.push(set);
    }
    (objectives, critical)
}

struct LineSearchOutcome {
    trajectory: Trajectory,
    alpha: f64,
    /// False when no step passed the merit test and the smallest finite
    /// rollout was taken instead.
    merit_accepted: bool,
}

/// The line-search merit, matched to what the subroutine optimizes.
///
/// Both variants add the control regularization `eta * sum_t |u_t|^2` per
/// player; bare reach-avoid objectives are flat once the target has been
/// entered, which otherwise admits accepted steps that cycle instead of
/// contracting. The pinch-point merit uses each player's `J_0` alone. The
/// time-consistent merit averages the objective-to-go over every suffix:
/// its subroutine shapes all of them at once, and a `J_0`-only merit would
/// veto exactly the tail-improving steps that make the method's strategies
/// meaningful after the first target entry.
pub fn merit(
    scenario: &Scenario,
    traj: &Trajectory,
    eta: f64,
    subroutine: Subroutine,
    suffix_weight: f64,
) -> f64 {
    let mut total = 0.0;
    for (i, p) in scenario.players.iter().enumerate() {
        let ctg = crate::reach_avoid::cost_to_go(traj, p.target.as_ref(), p.failure.as_ref());
        total += match subroutine {
            Subroutine::PinchPoint => ctg.initial(),
            Subroutine::TimeConsistent => {
                ctg.initial()
                    + suffix_weight * ctg.values.iter().sum::<f64>() / ctg.values.len() as f64
            }
        };
        total += eta
            * traj.controls[i]
                .iter()
                .map(|u| u.norm_squared())
                .sum::<f64>();
    }
    total
}

/// Backtrack over `alpha in {a0, a0*shrink, ...}`: accept the largest alpha
/// whose rollout stays finite and whose merit does not exceed the current
/// merit plus slack. When every step fails the merit test (typical in
/// adversarial phases, where one player's gain is another's loss), fall back
/// to the largest finite step whose state deviation stays under the
/// configured cap; failing even that, take the smallest finite step.
/// Progress is then not guaranteed and the ridge adaptation stiffens the
/// next model instead.
fn line_search(
    scenario: &Scenario,
    candidate: &AffineStrategy,
    reference: &Trajectory,
    current_merit: f64,
    config: &SolverConfig,
) -> Result<LineSearchOutcome> {
    let mut alpha = config.initial_alpha;
    let mut capped: Option<LineSearchOutcome> = None;
    let mut smallest: Option<LineSearchOutcome> = None;
    for _ in 0..=config.max_backtracks {
        match rollout(&scenario.system, &scenario.initial_state, candidate, alpha) {
            Ok(traj) => {
                if merit(scenario, &traj, config.eta, config.subroutine, config.tc_suffix_weight)
                    <= current_merit + config.merit_slack
                {
                    return Ok(LineSearchOutcome {
                        trajectory: traj,
                        alpha,
                        merit_accepted: true,
                    });
                }
                let outcome = LineSearchOutcome {
                    trajectory: traj,
                    alpha,
                    merit_accepted: false,
                };
                if capped.is_none()
                    && outcome.trajectory.max_state_deviation(reference)
                        <= config.fallback_deviation_cap
                {
                    capped = Some(outcome);
                } else if smallest.is_none() || alpha <= smallest.as_ref().unwrap().alpha {
                    smallest = Some(outcome);
                }
            }
            Err(Error::NonFiniteRollout { .. }) => {}
            Err(other) => return Err(other),
        }
        alpha *= config.alpha_shrink;
    }
    capped
        .or(smallest)
        .ok_or(Error::LineSearchFailed { iteration: 0 })
}

/// Solve a scenario from its default initialization (open-loop rollout of
/// the scenario's initial controls with zero gains).
pub fn ilq_solve(scenario: &Scenario, config: &SolverConfig) -> Result<SolveResult> {
    let initial = scenario.initial_strategy()?;
    ilq_solve_from(scenario, config, initial)
}

/// Solve a scenario starting from a caller-provided strategy (warm start).
pub fn ilq_solve_from(
    scenario: &Scenario,
    config: &SolverConfig,
    initial: AffineStrategy,
) -> Result<SolveResult> {
    let targets: Vec<&dyn MarginFn> = scenario.players.iter().map(|p| p.target.as_ref()).collect();
    let failures: Vec<&dyn MarginFn> =
        scenario.players.iter().map(|p| p.failure.as_ref()).collect();

    let mut strategy = initial;
    let mut log = Vec::new();
    let (mut objectives, mut critical) = player_objectives(scenario, &strategy.reference);
    let mut lambda = config.lambda_init.max(config.lambda_reg);

    for iteration in 0..config.max_iterations {
        if config.early_stop && objectives.iter().all(|&j| j <= 0.0) {
            return Ok(SolveResult {
                status: SolveStatus::EarlyStopped,
                strategy,
                objectives,
                critical,
                log,
            });
        }

        let solver_critical: Vec<CriticalSet> = match config.subroutine {
            Subroutine::TimeConsistent => critical.clone(),
            Subroutine::PinchPoint => critical
                .iter()
                .map(|set| CriticalSet {
                    entries: vec![set.entries[0]],
                })
                .collect(),
        };
        let lq = build_lq_approx(
            &scenario.system,
            &strategy.reference,
            &targets,
            &failures,
            &solver_critical,
            config.eta,
            lambda,
        );
        let solution = match config.subroutine {
            Subroutine::PinchPoint => solve_standard(&lq)?,
            Subroutine::TimeConsistent => solve_time_consistent(&lq, &solver_critical)?,
        };

        let candidate = AffineStrategy {
            gains: solution.gains,
            feedforwards: solution.feedforwards,
            reference: strategy.reference.clone(),
        };
        let current_merit = merit(
            scenario,
            &strategy.reference,
            config.eta,
            config.subroutine,
            config.tc_suffix_weight,
        );
        let outcome = match line_search(
            scenario,
            &candidate,
            &strategy.reference,
            current_merit,
            config,
        ) {
            Ok(outcome) => outcome,
            Err(Error::LineSearchFailed { .. }) => {
                return Ok(SolveResult {
                    status: SolveStatus::LineSearchFailed,
                    strategy,
                    objectives,
                    critical,
                    log,
                });
            }
            Err(other) => return Err(other),
        };

        let deviation = outcome.trajectory.max_state_deviation(&strategy.reference);
        log.push(IterationRecord {
            iteration,
            objectives: objectives.clone(),
            alpha: outcome.alpha,
            max_deviation: deviation,
            lambda,
            critical_times: critical.iter().map(|c| c.entries.clone()).collect(),
        });

        // Trust-region style ridge adaptation: near-full steps relax it,
        // heavy backtracking or a fallback step stiffens the next model.
        if outcome.merit_accepted && outcome.alpha >= 0.5 * config.initial_alpha {
            lambda = (lambda / 2.0).max(config.lambda_reg);
        } else if !outcome.merit_accepted || outcome.alpha <= config.initial_alpha / 16.0 {
            lambda = (lambda * 4.0).min(config.lambda_max);
        }

        // Re-anchor: the accepted rollout becomes the new reference and the
        // feedforward it consumed is folded into the reference controls.
        strategy = AffineStrategy {
            gains: candidate.gains,
            feedforwards: candidate
                .feedforwards
                .iter()
                .map(|seq| seq.iter().map(|k| DVector::zeros(k.len())).collect())
                .collect(),
            reference: outcome.trajectory,
        };
        let (new_objectives, new_critical) = player_objectives(scenario, &strategy.reference);
        objectives = new_objectives;
        critical = new_critical;

        // A fixed point must be reachable through an accepted step, not a
        // rejected-everything fallback that barely moved.
        if deviation < config.convergence_tolerance && outcome.merit_accepted {
            return Ok(SolveResult {
                status: SolveStatus::Converged,
                strategy,
                objectives,
                critical,
                log,
            });
        }
    }

    Ok(SolveResult {
        status: SolveStatus::MaxIterations,
        strategy,
        objectives,
        critical,
        log,
    })
}
