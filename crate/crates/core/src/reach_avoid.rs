//! Backward reach-avoid recursion: objective-to-go values, the single
//! cost-determining pinch point, and the full critical-time set.
//!
//! For a trajectory with target margin `l` and failure margin `g`, the
//! objective-to-go satisfies `J_t = max(g_t(x_t), min(J_{t+1}, l_t(x_t)))`
//! with the sentinel `J_{T+1} = +inf`. Whenever `J_t` equals one of the two
//! instantaneous margins, `t` is a critical time; between critical times the
//! value simply carries over.

use crate::margins::MarginFn;
use crate::types::{CriticalEntry, CriticalSet, MarginKind, Trajectory};

/// Objective-to-go values `J_t` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostToGo {
    pub values: Vec<f64>,
}

impl CostToGo {
    pub fn initial(&self) -> f64 {
        self.values[0]
    }
}

fn backward_scan(
    traj: &Trajectory,
    target: &dyn MarginFn,
    failure: &dyn MarginFn,
    mut on_assign: impl FnMut(usize, MarginKind),
) -> CostToGo {
    let horizon = traj.horizon();
    let mut values = vec![0.0; horizon + 1];
    let mut next = f64::INFINITY;
    for t in (0..=horizon).rev() {
        let x = &traj.states[t];
        let g = failure.value(x, t);
        let l = target.value(x, t);
        let j = g.max(next.min(l));
        // Case order matters for floating-point ties: failure wins, then
        // target, otherwise the value carried over from t + 1.
        if j == g {
            on_assign(t, MarginKind::Failure);
        } else if j == l {
            on_assign(t, MarginKind::Target);
        }
        values[t] = j;
        next = j;
    }
    CostToGo { values }
}

/// Full vector of objective-to-go values along the trajectory.
pub fn cost_to_go(traj: &Trajectory, target: &dyn MarginFn, failure: &dyn MarginFn) -> CostToGo {
    backward_scan(traj, target, failure, |_, _| {})
}

/// The single critical pair left after the backward scan: the last (i.e.
/// smallest-time) assignment, which is the pair determining `J_0`.
pub fn pinch_point(
    traj: &Trajectory,
    target: &dyn MarginFn,
    failure: &dyn MarginFn,
) -> (CriticalEntry, CostToGo) {
    let mut last: Option<CriticalEntry> = None;
    let ctg = backward_scan(traj, target, failure, |time, kind| {
        last = Some(CriticalEntry { time, kind });
    });
    // The scan always assigns at t = T: J_T = max(g_T, l_T) equals one of them.
    (last.expect("backward scan assigns at the final step"), ctg)
}

/// Every time step at which the backward scan assigned, in increasing time
/// order, together with the objective-to-go values.
pub fn critical_set(
    traj: &Trajectory,
    target: &dyn MarginFn,
    failure: &dyn MarginFn,
) -> (CriticalSet, CostToGo) {
    let mut entries = Vec::new();
    let ctg = backward_scan(traj, target, failure, |time, kind| {
        entries.push(CriticalEntry { time, kind });
    });
    entries.reverse();
    (CriticalSet { entries }, ctg)
}
