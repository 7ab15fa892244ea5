//! Command-line entry point: run scenarios, batch experiments, render
//! trajectory plots, and run verification probes.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use raig_core::batch::run_batch;
use raig_core::ilq::{ilq_solve, SolveStatus, Subroutine};
use raig_core::plot::render_svg;
use raig_core::scenarios::{load_scenario, Scenario};
use raig_core::types::Trajectory;
use raig_core::verification::{nash_probe, time_consistency_probe};

#[derive(Parser)]
#[command(
    name = "raig",
    about = "Iterative LQ solvers for multi-player reach-avoid games",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Builtin scenario id (one-player, defensive-driving, t-intersection)
    /// or a path to a scenario JSON file.
    #[arg(long)]
    scenario: String,
    /// LQ subroutine: pp (pinch point) or tc (time consistent).
    #[arg(long, default_value = "tc")]
    solver: Subroutine,
    /// Seed for sampled starts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the solver's iteration cap.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Stop as soon as every player's objective reaches zero.
    #[arg(long)]
    early_stop: bool,
    /// Output directory (falls back to $RAIG_OUT_DIR, then "out").
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl CommonArgs {
    fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| {
            std::env::var_os("RAIG_OUT_DIR")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("out"))
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario once and write trajectory, log, and plot artifacts.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        /// Sample the initial state from the scenario's start region instead
        /// of using the nominal start.
        #[arg(long)]
        sample_start: bool,
    },
    /// Run many seeded starts through one or both solvers and print the
    /// summary table.
    Batch {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 100)]
        num_starts: usize,
        /// Run both solvers on the identical start set.
        #[arg(long)]
        both: bool,
        /// Worker threads for concurrent starts.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Render trajectory files over a scenario's geometry.
    Plot {
        /// Scenario id or config path supplying the geometry.
        #[arg(long)]
        scenario: String,
        /// Trajectory JSON files.
        #[arg(long, required = true, num_args = 1..)]
        trajectory: Vec<PathBuf>,
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve, then run time-consistency and unilateral-deviation probes.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Truncation step for the time-consistency probe; defaults to ten
        /// steps after the first target entry.
        #[arg(long)]
        probe_time: Option<usize>,
        /// State-perturbation radius.
        #[arg(long, default_value_t = 0.1)]
        delta_x: f64,
        /// Strategy-perturbation magnitude for the deviation probe.
        #[arg(long, default_value_t = 1e-3)]
        delta_gamma: f64,
        #[arg(long, default_value_t = 10)]
        samples: usize,
    },
}

fn load(common: &CommonArgs) -> Result<Scenario, String> {
    load_scenario(&common.scenario).map_err(|e| format!("{e}"))
}

fn write(path: &Path, contents: &str) -> Result<(), String> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    }
    std::fs::write(path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn run_solve(common: &CommonArgs, sample_start: bool) -> Result<(), String> {
    let mut scenario = load(common)?;
    if sample_start {
        let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
        let x0 = scenario.sample_start(&mut rng).map_err(|e| format!("{e}"))?;
        scenario = scenario.with_initial_state(x0);
    }
    let mut config = scenario.solver_config(common.solver);
    if let Some(n) = common.max_iters {
        config.max_iterations = n;
    }
    config.early_stop |= common.early_stop;

    let result = ilq_solve(&scenario, &config).map_err(|e| format!("solver failed: {e}"))?;
    let dir = common.out_dir();
    let stem = format!("{}_{}", scenario.name, common.solver.short_name());
    let traj = result.trajectory();
    write(
        &dir.join(format!("{stem}_trajectory.json")),
        &traj.to_json().map_err(|e| format!("{e}"))?,
    )?;
    write(&dir.join(format!("{stem}_trajectory.csv")), &traj.to_csv())?;
    write(&dir.join(format!("{stem}_log.jsonl")), &result.log_jsonl())?;
    let svg = render_svg(&scenario.system, &scenario.geometry, &[traj]);
    write(&dir.join(format!("{stem}_plot.svg")), &svg)?;

    println!(
        "{}: {:?} after {} iterations; objectives {:?}",
        stem,
        result.status,
        result.iterations(),
        result.objectives
    );
    println!("artifacts in {}", dir.display());
    if result.status == SolveStatus::LineSearchFailed {
        return Err("line search failed; last iterate written".into());
    }
    Ok(())
}

fn run_batch_cmd(
    common: &CommonArgs,
    num_starts: usize,
    both: bool,
    workers: Option<usize>,
) -> Result<(), String> {
    if num_starts == 0 {
        return Err("--num-starts must be at least 1".into());
    }
    let scenario = load(common)?;
    let solvers: Vec<Subroutine> = if both {
        vec![Subroutine::PinchPoint, Subroutine::TimeConsistent]
    } else {
        vec![common.solver]
    };
    let early_stop = common.early_stop;
    let max_iters = common.max_iters;
    let result = run_batch(
        &scenario,
        &solvers,
        num_starts,
        common.seed,
        move |config| {
            config.early_stop |= early_stop;
            if let Some(n) = max_iters {
                config.max_iterations = n;
            }
        },
        workers,
    )
    .map_err(|e| format!("{e}"))?;

    let dir = common.out_dir();
    write(
        &dir.join(format!("{}_batch_records.json", scenario.name)),
        &serde_json::to_string_pretty(&result).map_err(|e| format!("{e}"))?,
    )?;
    write(
        &dir.join(format!("{}_batch_stats.csv", scenario.name)),
        &result.stats_csv(),
    )?;
    write(
        &dir.join(format!("{}_batch_stats.txt", scenario.name)),
        &result.table(),
    )?;
    print!("{}", result.table());
    Ok(())
}

fn run_plot(scenario: &str, files: &[PathBuf], out: &Path) -> Result<(), String> {
    let scenario = load_scenario(scenario).map_err(|e| format!("{e}"))?;
    let mut trajs = Vec::new();
    for file in files {
        let text = std::fs::read_to_string(file)
            .map_err(|e| format!("cannot read {}: {e}", file.display()))?;
        let traj =
            Trajectory::from_json(&text).map_err(|e| format!("{}: {e}", file.display()))?;
        if traj.state_dim() != scenario.system.state_dim() {
            return Err(format!(
                "{}: trajectory has state dim {}, scenario expects {}",
                file.display(),
                traj.state_dim(),
                scenario.system.state_dim()
            ));
        }
        trajs.push(traj);
    }
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let svg = render_svg(&scenario.system, &scenario.geometry, &refs);
    write(out, &svg)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run_verify(
    common: &CommonArgs,
    probe_time: Option<usize>,
    delta_x: f64,
    delta_gamma: f64,
    samples: usize,
) -> Result<(), String> {
    let scenario = load(common)?;
    let config = scenario.solver_config(common.solver);
    let result = ilq_solve(&scenario, &config).map_err(|e| format!("solver failed: {e}"))?;
    let traj = result.trajectory();
    let player = &scenario.players[0];
    let s = probe_time.unwrap_or_else(|| {
        let entry = (0..=traj.horizon())
            .find(|&t| player.target.value(&traj.states[t], t) <= 0.0)
            .unwrap_or(0);
        (entry + 10).min(scenario.horizon.saturating_sub(1))
    });
    let tc_report =
        time_consistency_probe(&scenario, &result.strategy, &config, s, delta_x, samples, common.seed);
    let nash_reports: Vec<_> = (0..scenario.players.len())
        .map(|i| {
            nash_probe(
                &scenario,
                &result.strategy,
                i,
                config.eta,
                delta_gamma,
                samples,
                common.seed.wrapping_add(i as u64),
                1e-7,
            )
        })
        .collect();

    let report = serde_json::json!({
        "scenario": scenario.name,
        "solver": common.solver.short_name(),
        "status": result.status,
        "objectives": result.objectives,
        "time_consistency": tc_report,
        "unilateral_deviation": nash_reports,
    });
    let dir = common.out_dir();
    let path = dir.join(format!(
        "{}_{}_verify.json",
        scenario.name,
        common.solver.short_name()
    ));
    write(&path, &serde_json::to_string_pretty(&report).map_err(|e| format!("{e}"))?)?;
    println!(
        "probe at s={}: median excess {:?}; deviation improvements {:?}",
        s,
        tc_report.excess_stats.iter().map(|e| e.median).collect::<Vec<_>>(),
        nash_reports.iter().map(|r| r.improvement_count).collect::<Vec<_>>()
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Solve { common, sample_start } => run_solve(common, *sample_start),
        Command::Batch { common, num_starts, both, workers } => {
            run_batch_cmd(common, *num_starts, *both, *workers)
        }
        Command::Plot { scenario, trajectory, out } => run_plot(scenario, trajectory, out),
        Command::Verify { common, probe_time, delta_x, delta_gamma, samples } => {
            run_verify(common, *probe_time, *delta_x, *delta_gamma, *samples)
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
