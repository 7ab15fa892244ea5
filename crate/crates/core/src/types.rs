//! Shared domain types: trajectories, affine feedback strategies, LQ game
//! data, and critical-time sets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use crate::dynamics::MultiAgentSystem;

/// Which side of a reach-avoid objective a margin encodes.
///
/// `Target` margins are nonpositive inside the target set; `Failure` margins
/// are positive inside the failure set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MarginKind {
    Target,
    Failure,
}

impl fmt::Display for MarginKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarginKind::Target => write!(f, "target"),
            MarginKind::Failure => write!(f, "failure"),
        }
    }
}

/// A time-indexed joint-state and per-player control record.
///
/// `states` has length `T + 1` and `controls[i]` has length `T` for every
/// player `i`. The joint state is the concatenation of per-agent states in
/// agent-index order; controls stay per player so that time-varying control
/// allocation can reassign who owns which input columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    /// Outer index: player. Inner index: time step.
    pub controls: Vec<Vec<DVector<f64>>>,
    pub dt: f64,
}

impl Trajectory {
    /// Number of control steps `T`.
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn num_players(&self) -> usize {
        self.controls.len()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, |x| x.len())
    }

    /// A zero-control trajectory holding `x0` for `horizon` steps. Useful as
    /// a solver seed before the first rollout.
    pub fn constant(x0: DVector<f64>, control_dims: &[usize], horizon: usize, dt: f64) -> Self {
        Trajectory {
            states: vec![x0; horizon + 1],
            controls: control_dims
                .iter()
                .map(|&m| vec![DVector::zeros(m); horizon])
                .collect(),
            dt,
        }
    }

    /// Largest componentwise state difference against another trajectory of
    /// the same shape. Used as the solver convergence metric.
    pub fn max_state_deviation(&self, other: &Trajectory) -> f64 {
        self.states
            .iter()
            .zip(other.states.iter())
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().all(|x| x.iter().all(|v| v.is_finite()))
            && self
                .controls
                .iter()
                .flatten()
                .all(|u| u.iter().all(|v| v.is_finite()))
    }
}

/// True iff the trajectory's shapes all match the system specification:
/// every state has dimension `n`, every control of player `i` has dimension
/// `m_i`, and there is exactly one more state than control steps.
pub fn validate_dimensions(traj: &Trajectory, system: &MultiAgentSystem) -> bool {
    let n = system.state_dim();
    let dims = system.control_dims();
    if traj.controls.len() != dims.len() {
        return false;
    }
    let horizon = match traj.states.len().checked_sub(1) {
        Some(t) => t,
        None => return false,
    };
    if !traj.states.iter().all(|x| x.len() == n) {
        return false;
    }
    traj.controls
        .iter()
        .zip(dims.iter())
        .all(|(seq, &m)| seq.len() == horizon && seq.iter().all(|u| u.len() == m))
}

/// Per-player affine feedback strategies about a reference trajectory.
///
/// The control law at step `t` is
/// `u_i(t) = u_ref_i(t) - K_i(t) (x(t) - x_ref(t)) - alpha * k_i(t)`
/// with step scale `alpha` in `(0, 1]`.
#[derive(Debug, Clone)]
pub struct AffineStrategy {
    /// `gains[i][t]`: `m_i x n` feedback matrix.
    pub gains: Vec<Vec<DMatrix<f64>>>,
    /// `feedforwards[i][t]`: `m_i` vector.
    pub feedforwards: Vec<Vec<DVector<f64>>>,
    pub reference: Trajectory,
}

impl AffineStrategy {
    /// Zero gains and feedforwards about `reference`: rolling this out at any
    /// alpha reproduces the reference controls open-loop.
    pub fn open_loop(reference: Trajectory) -> Self {
        let n = reference.state_dim();
        let horizon = reference.horizon();
        let gains = reference
            .controls
            .iter()
            .map(|seq| seq.iter().map(|u| DMatrix::zeros(u.len(), n)).collect())
            .collect();
        let feedforwards = reference
            .controls
            .iter()
            .map(|seq| {
                seq.iter()
                    .map(|u| DVector::zeros(u.len()))
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>();
        debug_assert!(reference.controls.iter().all(|s| s.len() == horizon));
        AffineStrategy {
            gains,
            feedforwards,
            reference,
        }
    }

    /// Evaluate the control law for player `i` at step `t` and state `x`.
    pub fn control(&self, player: usize, t: usize, x: &DVector<f64>, alpha: f64) -> DVector<f64> {
        let dx = x - &self.reference.states[t];
        &self.reference.controls[player][t]
            - &self.gains[player][t] * dx
            - alpha * &self.feedforwards[player][t]
    }

    pub fn num_players(&self) -> usize {
        self.gains.len()
    }

    pub fn horizon(&self) -> usize {
        self.reference.horizon()
    }
}

/// Quadratic state cost and control cost data for one player over a horizon.
///
/// Stage costs follow the half-scaled convention: the state contribution at
/// `t` is `0.5 dx' Q[t] dx + q[t]' dx`, and the control contribution is
/// `0.5 du' R[t] du + r[t]' du`, both expressed in deviations from the
/// reference trajectory. `state_hessians`/`state_gradients` run over
/// `t = 0..=T` (the last entry is the terminal cost);
/// `control_hessians`/`control_gradients` run over `t = 0..T`.
#[derive(Debug, Clone)]
pub struct PlayerCost {
    pub state_hessians: Vec<DMatrix<f64>>,
    pub state_gradients: Vec<DVector<f64>>,
    pub control_hessians: Vec<DMatrix<f64>>,
    pub control_gradients: Vec<DVector<f64>>,
}

/// Time-indexed linearized dynamics and quadratized per-player costs: one LQ
/// game ready for a backward Riccati sweep.
#[derive(Debug, Clone)]
pub struct LqApprox {
    /// `transitions[t]`: `n x n` state Jacobian, `t = 0..T`.
    pub transitions: Vec<DMatrix<f64>>,
    /// `control_jacobians[i][t]`: `n x m_i` input Jacobian.
    pub control_jacobians: Vec<Vec<DMatrix<f64>>>,
    pub costs: Vec<PlayerCost>,
}

impl LqApprox {
    pub fn horizon(&self) -> usize {
        self.transitions.len()
    }

    pub fn num_players(&self) -> usize {
        self.costs.len()
    }

    pub fn state_dim(&self) -> usize {
        self.transitions.first().map_or(0, |a| a.nrows())
    }

    /// Restrict the LQ data to time steps `s..=T`, re-indexed from zero.
    pub fn truncate(&self, s: usize) -> LqApprox {
        LqApprox {
            transitions: self.transitions[s..].to_vec(),
            control_jacobians: self
                .control_jacobians
                .iter()
                .map(|seq| seq[s..].to_vec())
                .collect(),
            costs: self
                .costs
                .iter()
                .map(|c| PlayerCost {
                    state_hessians: c.state_hessians[s..].to_vec(),
                    state_gradients: c.state_gradients[s..].to_vec(),
                    control_hessians: c.control_hessians[s..].to_vec(),
                    control_gradients: c.control_gradients[s..].to_vec(),
                })
                .collect(),
        }
    }
}

/// One time step at which the backward reach-avoid recursion pinned the
/// objective to an instantaneous margin value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticalEntry {
    pub time: usize,
    pub kind: MarginKind,
}

/// Per-player ordered list of critical times. Entries are strictly
/// increasing in time; the first entry is the pinch point.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CriticalSet {
    pub entries: Vec<CriticalEntry>,
}

impl CriticalSet {
    pub fn times(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.time)
    }

    pub fn contains_time(&self, t: usize) -> bool {
        self.entries.binary_search_by_key(&t, |e| e.time).is_ok()
    }

    /// Entries at or after `s`, with times re-indexed to start at zero.
    pub fn truncate(&self, s: usize) -> CriticalSet {
        CriticalSet {
            entries: self
                .entries
                .iter()
                .filter(|e| e.time >= s)
                .map(|e| CriticalEntry {
                    time: e.time - s,
                    kind: e.kind,
                })
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TrajectoryFile {
    dt: f64,
    states: Vec<Vec<f64>>,
    controls: BTreeMap<String, Vec<Vec<f64>>>,
}

impl Trajectory {
    /// JSON object `{"dt": .., "states": [[..]], "controls": {"player_0": [[..]], ..}}`.
    /// Finite values round-trip bit-identically.
    pub fn to_json(&self) -> serde_json::Result<String> {
        let file = TrajectoryFile {
            dt: self.dt,
            states: self.states.iter().map(|x| x.as_slice().to_vec()).collect(),
            controls: self
                .controls
                .iter()
                .enumerate()
                .map(|(i, seq)| {
                    (
                        format!("player_{i}"),
                        seq.iter().map(|u| u.as_slice().to_vec()).collect(),
                    )
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file)
    }

    pub fn from_json(text: &str) -> crate::Result<Trajectory> {
        let file: TrajectoryFile = serde_json::from_str(text)?;
        let mut controls = Vec::new();
        for i in 0..file.controls.len() {
            let key = format!("player_{i}");
            let seq = file.controls.get(&key).ok_or_else(|| {
                crate::Error::Config(format!("trajectory json missing key {key}"))
            })?;
            controls.push(seq.iter().map(|u| DVector::from_row_slice(u)).collect());
        }
        Ok(Trajectory {
            dt: file.dt,
            states: file
                .states
                .iter()
                .map(|x| DVector::from_row_slice(x))
                .collect(),
            controls,
        })
    }

    /// Flat CSV: one row per time step with labeled columns. Control cells on
    /// the final row are empty (there are `T` controls for `T + 1` states).
    pub fn to_csv(&self) -> String {
        let n = self.state_dim();
        let mut header = vec!["step".to_string(), "time".to_string()];
        header.extend((0..n).map(|j| format!("x{j}")));
        for (i, seq) in self.controls.iter().enumerate() {
            let m = seq.first().map_or(0, |u| u.len());
            header.extend((0..m).map(|j| format!("p{i}_u{j}")));
        }
        let mut out = header.join(",");
        out.push('\n');
        for (t, x) in self.states.iter().enumerate() {
            let mut row = vec![t.to_string(), format!("{}", t as f64 * self.dt)];
            row.extend(x.iter().map(|v| format!("{v}")));
            for seq in &self.controls {
                if let Some(u) = seq.get(t) {
                    row.extend(u.iter().map(|v| format!("{v}")));
                } else {
                    let m = seq.first().map_or(0, |u| u.len());
                    row.extend(std::iter::repeat_n(String::new(), m));
                }
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}
