//! Batch experiments: many seeded starts, both solvers on identical start
//! sets, and summary statistics in the style of the solver-comparison table.

use rayon::prelude::*;
use serde::Serialize;

use crate::ilq::{ilq_solve, SolveStatus, SolverConfig, Subroutine};
use crate::scenarios::Scenario;
use crate::types::Trajectory;
use crate::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Outcome of one solver run from one sampled start.
#[derive(Debug, Clone, Serialize)]
pub struct StartRecord {
    pub start_index: usize,
    pub solver: Subroutine,
    pub initial_state: Vec<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub objectives: Vec<f64>,
    /// Player 0 reached its target with no prior failure.
    pub target_reached: bool,
    /// First step at which player 0's target margin was nonpositive.
    pub first_entry: Option<usize>,
    /// Reached, and never in the failure set from first entry onward.
    pub safe_after_target: bool,
    pub solve_ms: f64,
}

/// Aggregate over one solver's records. A pure function of the records so
/// tables can be recomputed from the records file.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BatchStats {
    pub solver: Subroutine,
    pub starts: usize,
    pub target_reached: usize,
    /// Mean/max iteration counts over runs that reached the target.
    pub mean_iterations: f64,
    pub max_iterations: usize,
    pub safe_after_target: usize,
    /// Runs that ended in a solver failure status.
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchResult {
    pub scenario: String,
    pub seed: u64,
    pub records: Vec<StartRecord>,
    pub stats: Vec<BatchStats>,
}

/// Sample `n_starts` initial states with per-start ChaCha8 substreams, so
/// start `i` is identical no matter the worker count or solver.
pub fn sample_starts(
    scenario: &Scenario,
    n_starts: usize,
    seed: u64,
) -> Result<Vec<nalgebra::DVector<f64>>> {
    (0..n_starts)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            scenario.sample_start(&mut rng)
        })
        .collect()
}

fn classify(
    scenario: &Scenario,
    traj: &Trajectory,
    objectives: &[f64],
) -> (bool, Option<usize>, bool) {
    let player = &scenario.players[0];
    let reached = objectives[0] <= 0.0;
    let first_entry =
        (0..=traj.horizon()).find(|&t| player.target.value(&traj.states[t], t) <= 0.0);
    let safe_after = match (reached, first_entry) {
        (true, Some(t0)) => {
            (t0..=traj.horizon()).all(|t| player.failure.value(&traj.states[t], t) <= 0.0)
        }
        _ => false,
    };
    (reached, first_entry, safe_after)
}

/// Run every solver over the same `n_starts` sampled initial states.
/// Starts execute concurrently (bounded by `workers` when given); records
/// are sorted by start index before aggregation so output is
/// order-independent.
pub fn run_batch(
    scenario: &Scenario,
    solvers: &[Subroutine],
    n_starts: usize,
    seed: u64,
    configure: impl Fn(&mut SolverConfig) + Sync,
    workers: Option<usize>,
) -> Result<BatchResult> {
    let starts = sample_starts(scenario, n_starts, seed)?;

    let run_all = || -> Vec<StartRecord> {
        let mut records: Vec<StartRecord> = solvers
            .par_iter()
            .flat_map_iter(|&solver| {
                let starts = &starts;
                (0..n_starts).map(move |i| (solver, i, starts[i].clone()))
            })
            .map(|(solver, start_index, x0)| {
                let sc = scenario.with_initial_state(x0.clone());
                let mut config = sc.solver_config(solver);
                configure(&mut config);
                let begin = std::time::Instant::now();
                match ilq_solve(&sc, &config) {
                    Ok(result) => {
                        let (reached, first_entry, safe_after) =
                            classify(&sc, result.trajectory(), &result.objectives);
                        StartRecord {
                            start_index,
                            solver,
                            initial_state: x0.as_slice().to_vec(),
                            status: result.status,
                            iterations: result.iterations(),
                            objectives: result.objectives,
                            target_reached: reached,
                            first_entry,
                            safe_after_target: safe_after,
                            solve_ms: begin.elapsed().as_secs_f64() * 1e3,
                        }
                    }
                    Err(_) => StartRecord {
                        start_index,
                        solver,
                        initial_state: x0.as_slice().to_vec(),
                        status: SolveStatus::LineSearchFailed,
                        iterations: 0,
                        objectives: Vec::new(),
                        target_reached: false,
                        first_entry: None,
                        safe_after_target: false,
                        solve_ms: begin.elapsed().as_secs_f64() * 1e3,
                    },
                }
            })
            .collect();
        records.sort_by_key(|r| (r.solver.short_name(), r.start_index));
        records
    };

    let records = match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("worker pool")
            .install(run_all),
        None => run_all(),
    };

    let stats = solvers.iter().map(|&s| aggregate(&records, s)).collect();
    Ok(BatchResult {
        scenario: scenario.name.clone(),
        seed,
        records,
        stats,
    })
}

/// Recompute summary statistics for one solver from raw records.
pub fn aggregate(records: &[StartRecord], solver: Subroutine) -> BatchStats {
    let mine: Vec<&StartRecord> = records.iter().filter(|r| r.solver == solver).collect();
    let reached: Vec<&&StartRecord> = mine.iter().filter(|r| r.target_reached).collect();
    let failures = mine
        .iter()
        .filter(|r| r.status == SolveStatus::LineSearchFailed)
        .count();
    BatchStats {
        solver,
        starts: mine.len(),
        target_reached: reached.len(),
        mean_iterations: if reached.is_empty() {
            0.0
        } else {
            reached.iter().map(|r| r.iterations as f64).sum::<f64>() / reached.len() as f64
        },
        max_iterations: reached.iter().map(|r| r.iterations).max().unwrap_or(0),
        safe_after_target: mine.iter().filter(|r| r.safe_after_target).count(),
        failures,
    }
}

impl BatchResult {
    /// Human-readable summary table.
    pub fn table(&self) -> String {
        let mut out = format!(
            "scenario: {} (seed {}, {} starts per solver)\n",
            self.scenario,
            self.seed,
            self.stats.first().map_or(0, |s| s.starts)
        );
        out.push_str("solver  reached  mean(max) iters  safe-after-target  failures\n");
        for s in &self.stats {
            out.push_str(&format!(
                "{:<6}  {:>7}  {:>6.2} ({:<4})    {:>17}  {:>8}\n",
                s.solver.short_name(),
                s.target_reached,
                s.mean_iterations,
                s.max_iterations,
                s.safe_after_target,
                s.failures
            ));
        }
        out
    }

    /// Stats as CSV, one row per solver.
    pub fn stats_csv(&self) -> String {
        let mut out = String::from(
            "solver,starts,target_reached,mean_iterations,max_iterations,safe_after_target,failures\n",
        );
        for s in &self.stats {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.solver.short_name(),
                s.starts,
                s.target_reached,
                s.mean_iterations,
                s.max_iterations,
                s.safe_after_target,
                s.failures
            ));
        }
        out
    }
}
