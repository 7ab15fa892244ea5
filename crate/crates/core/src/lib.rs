//! Iterative linear-quadratic (ILQ) solvers for multi-player reach-avoid
//! dynamic games.
//!
//! Each player tries to drive the joint state into its own target set at some
//! time while never having entered its failure set beforehand. Both sets are
//! encoded by signed margin functions, and the game is solved to a local
//! feedback Nash equilibrium by repeatedly forming a linear-quadratic
//! approximation about the current trajectory iterate.
//!
//! Two LQ subroutines are provided:
//! - [`ilq::Subroutine::PinchPoint`]: quadratizes each player's objective at
//!   the single time step that determines its value, producing a standard
//!   time-additive LQ game. Fast, but the resulting strategies ignore
//!   everything that happens after the pinch time.
//! - [`ilq::Subroutine::TimeConsistent`]: quadratizes at every critical time
//!   of the backward reach-avoid recursion and resets the value function
//!   there, so later-stage feedback remains meaningful even after earlier
//!   deviations.
//!
//! The crate ships three driving-style scenarios, a batch experiment runner,
//! SVG trajectory plots, and empirical probes for time consistency and
//! unilateral-deviation (Nash) checks.

pub mod batch;
pub mod dynamics;
pub mod ilq;
pub mod lq_game;
pub mod margins;
pub mod plot;
pub mod reach_avoid;
pub mod scenarios;
pub mod types;
pub mod verification;

use thiserror::Error;

/// Errors shared across the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("stacked gain system is singular at time step {time}")]
    SingularLq { time: usize },

    #[error("rollout produced a non-finite state at time step {time} (player controls: {controls:?})")]
    NonFiniteRollout { time: usize, controls: Vec<Vec<f64>> },

    #[error("every line-search rollout diverged at iteration {iteration}")]
    LineSearchFailed { iteration: usize },

    #[error("invalid scenario config: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
