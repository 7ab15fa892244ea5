//! Finite-horizon N-player linear-quadratic feedback Nash solvers.
//!
//! Both solvers run the same backward sweep: at each step the players'
//! first-order conditions couple through the closed-loop dynamics, giving one
//! stacked linear system for all feedback gains at that step. They differ in
//! how the per-player value function evolves:
//!
//! - [`solve_standard`] accumulates stage costs time-additively (the classic
//!   coupled Riccati recursion).
//! - [`solve_time_consistent`] resets a player's value pair to its stage
//!   quadratization at each of that player's critical times, discarding
//!   everything later; between critical times only control costs accumulate.

use nalgebra::{DMatrix, DVector};

use crate::types::{CriticalSet, LqApprox};
use crate::{Error, Result};

/// Quadratic/linear pair representing one player's cost-to-go
/// `0.5 dx' Z dx + z' dx` in deviation coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuePair {
    pub z_matrix: DMatrix<f64>,
    pub z_vector: DVector<f64>,
}

/// Gains, feedforwards, and value pairs from a backward LQ sweep.
///
/// `gains[i][t]` is `m_i x n`, `feedforwards[i][t]` is `m_i`, both over
/// `t = 0..T`; `values[i][t]` runs over `t = 0..=T`.
#[derive(Debug, Clone)]
pub struct LqSolution {
    pub gains: Vec<Vec<DMatrix<f64>>>,
    pub feedforwards: Vec<Vec<DVector<f64>>>,
    pub values: Vec<Vec<ValuePair>>,
}

/// Per-player gain matrices and feedforward vectors at one time step.
pub type StepGains = (Vec<DMatrix<f64>>, Vec<DVector<f64>>);

/// Solve the stacked first-order conditions at one step:
/// for each player `i`,
/// `(R_i + B_i' Z_i B_i) K_i + B_i' Z_i sum_{j != i} B_j K_j = B_i' Z_i A`
/// and the analogous affine system for `k_i` with right-hand side
/// `B_i' z_i + r_i`.
pub fn riccati_gains(
    transition: &DMatrix<f64>,
    control_jacobians: &[&DMatrix<f64>],
    values_next: &[&ValuePair],
    control_hessians: &[&DMatrix<f64>],
    control_gradients: &[&DVector<f64>],
    time: usize,
) -> Result<StepGains> {
    let n = transition.nrows();
    let num_players = control_jacobians.len();
    let dims: Vec<usize> = control_jacobians.iter().map(|b| b.ncols()).collect();
    let m_total: usize = dims.iter().sum();
    let offsets: Vec<usize> = dims
        .iter()
        .scan(0, |acc, &m| {
            let o = *acc;
            *acc += m;
            Some(o)
        })
        .collect();

    let mut stacked = DMatrix::zeros(m_total, m_total);
    // Right-hand sides for K (n columns) and k (last column) solved together.
    let mut rhs = DMatrix::zeros(m_total, n + 1);
    for i in 0..num_players {
        let bt_z = control_jacobians[i].transpose() * &values_next[i].z_matrix;
        for j in 0..num_players {
            let mut block = &bt_z * control_jacobians[j];
            if i == j {
                block += control_hessians[i];
            }
            stacked
                .view_mut((offsets[i], offsets[j]), (dims[i], dims[j]))
                .copy_from(&block);
        }
        rhs.view_mut((offsets[i], 0), (dims[i], n))
            .copy_from(&(&bt_z * transition));
        let affine =
            control_jacobians[i].transpose() * &values_next[i].z_vector + control_gradients[i];
        rhs.view_mut((offsets[i], n), (dims[i], 1)).copy_from(&affine);
    }

    let solution = stacked
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularLq { time })?;

    let mut gains = Vec::with_capacity(num_players);
    let mut feedforwards = Vec::with_capacity(num_players);
    for i in 0..num_players {
        gains.push(solution.view((offsets[i], 0), (dims[i], n)).into_owned());
        feedforwards.push(solution.column(n).rows(offsets[i], dims[i]).into_owned());
    }
    Ok((gains, feedforwards))
}

/// Standard closed-loop value update for one player given everyone's gains:
/// with `F = A - sum_j B_j K_j` and `beta = -sum_j B_j k_j`,
/// `Z <- Q + K' R K + F' Z' F` (symmetrized) and
/// `z <- q + K'(R k - r) + F'(Z' beta + z')`.
#[allow(clippy::too_many_arguments)]
fn closed_loop_update(
    closed_loop: &DMatrix<f64>,
    offset: &DVector<f64>,
    gain: &DMatrix<f64>,
    feedforward: &DVector<f64>,
    value_next: &ValuePair,
    state_hessian: &DMatrix<f64>,
    state_gradient: &DVector<f64>,
    control_hessian: &DMatrix<f64>,
    control_gradient: &DVector<f64>,
) -> ValuePair {
    let ktr = gain.transpose() * control_hessian;
    let mut z_matrix = state_hessian
        + &ktr * gain
        + closed_loop.transpose() * &value_next.z_matrix * closed_loop;
    z_matrix = (&z_matrix + z_matrix.transpose()) * 0.5;
    let z_vector = state_gradient
        + &ktr * feedforward
        - gain.transpose() * control_gradient
        + closed_loop.transpose() * (&value_next.z_matrix * offset + &value_next.z_vector);
    ValuePair { z_matrix, z_vector }
}

/// One full backward step: gains from the stacked solve, then the standard
/// value update for every player.
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
pub fn riccati_step(
    transition: &DMatrix<f64>,
    control_jacobians: &[&DMatrix<f64>],
    values_next: &[&ValuePair],
    state_hessians: &[&DMatrix<f64>],
    state_gradients: &[&DVector<f64>],
    control_hessians: &[&DMatrix<f64>],
    control_gradients: &[&DVector<f64>],
    time: usize,
) -> Result<(Vec<DMatrix<f64>>, Vec<DVector<f64>>, Vec<ValuePair>)> {
    let (gains, feedforwards) = riccati_gains(
        transition,
        control_jacobians,
        values_next,
        control_hessians,
        control_gradients,
        time,
    )?;
    let (closed_loop, offset) = close_loop(transition, control_jacobians, &gains, &feedforwards);
    let values = (0..control_jacobians.len())
        .map(|i| {
            closed_loop_update(
                &closed_loop,
                &offset,
                &gains[i],
                &feedforwards[i],
                values_next[i],
                state_hessians[i],
                state_gradients[i],
                control_hessians[i],
                control_gradients[i],
            )
        })
        .collect();
    Ok((gains, feedforwards, values))
}

fn close_loop(
    transition: &DMatrix<f64>,
    control_jacobians: &[&DMatrix<f64>],
    gains: &[DMatrix<f64>],
    feedforwards: &[DVector<f64>],
) -> (DMatrix<f64>, DVector<f64>) {
    let mut closed = transition.clone();
    let mut offset = DVector::zeros(transition.nrows());
    for (b, (k_mat, k_vec)) in control_jacobians
        .iter()
        .zip(gains.iter().zip(feedforwards.iter()))
    {
        closed -= *b * k_mat;
        offset -= *b * k_vec;
    }
    (closed, offset)
}

enum ValueRule<'a> {
    TimeAdditive,
    ResetAtCritical(&'a [CriticalSet]),
}

fn backward_sweep(lq: &LqApprox, rule: ValueRule<'_>) -> Result<LqSolution> {
    let horizon = lq.horizon();
    let num_players = lq.num_players();

    let mut values: Vec<Vec<ValuePair>> = lq
        .costs
        .iter()
        .map(|cost| {
            let mut per_time = vec![
                ValuePair {
                    z_matrix: DMatrix::zeros(0, 0),
                    z_vector: DVector::zeros(0),
                };
                horizon + 1
            ];
            per_time[horizon] = ValuePair {
                z_matrix: cost.state_hessians[horizon].clone(),
                z_vector: cost.state_gradients[horizon].clone(),
            };
            per_time
        })
        .collect();

    let mut gains: Vec<Vec<DMatrix<f64>>> = vec![Vec::with_capacity(horizon); num_players];
    let mut feedforwards: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(horizon); num_players];

    for t in (0..horizon).rev() {
        let bs: Vec<&DMatrix<f64>> = lq.control_jacobians.iter().map(|seq| &seq[t]).collect();
        let next: Vec<&ValuePair> = values.iter().map(|v| &v[t + 1]).collect();
        let r: Vec<&DMatrix<f64>> = lq.costs.iter().map(|c| &c.control_hessians[t]).collect();
        let rv: Vec<&DVector<f64>> = lq.costs.iter().map(|c| &c.control_gradients[t]).collect();
        let (k_mats, k_vecs) =
            riccati_gains(&lq.transitions[t], &bs, &next, &r, &rv, t)?;

        let (closed_loop, offset) = close_loop(&lq.transitions[t], &bs, &k_mats, &k_vecs);
        for i in 0..num_players {
            let reset = match rule {
                ValueRule::TimeAdditive => false,
                ValueRule::ResetAtCritical(critical) => critical[i].contains_time(t),
            };
            values[i][t] = if reset {
                // Critical time: the cost-to-go is exactly the stage
                // quadratization; everything after t is ignored.
                ValuePair {
                    z_matrix: lq.costs[i].state_hessians[t].clone(),
                    z_vector: lq.costs[i].state_gradients[t].clone(),
                }
            } else {
                closed_loop_update(
                    &closed_loop,
                    &offset,
                    &k_mats[i],
                    &k_vecs[i],
                    &values[i][t + 1],
                    &lq.costs[i].state_hessians[t],
                    &lq.costs[i].state_gradients[t],
                    &lq.costs[i].control_hessians[t],
                    &lq.costs[i].control_gradients[t],
                )
            };
        }
        for i in 0..num_players {
            gains[i].push(k_mats[i].clone());
            feedforwards[i].push(k_vecs[i].clone());
        }
    }

    for i in 0..num_players {
        gains[i].reverse();
        feedforwards[i].reverse();
    }
    Ok(LqSolution {
        gains,
        feedforwards,
        values,
    })
}

/// Feedback Nash equilibrium of the time-additive LQ game. Stage costs
/// accumulate backward from the terminal entries of `lq`.
pub fn solve_standard(lq: &LqApprox) -> Result<LqSolution> {
    backward_sweep(lq, ValueRule::TimeAdditive)
}

/// Time-consistent variant: after computing gains at step `t`, each player
/// whose critical set contains `t` has its value pair reset to the stage
/// quadratization `(Q_t, q_t)`; other players get the standard update.
/// Stage state costs are expected to be zero away from critical times, while
/// control costs apply everywhere.
pub fn solve_time_consistent(lq: &LqApprox, critical: &[CriticalSet]) -> Result<LqSolution> {
    assert_eq!(critical.len(), lq.num_players());
    backward_sweep(lq, ValueRule::ResetAtCritical(critical))
}

/// Exact cost of each player under affine feedback `du_i = -K_i dx - k_i`
/// applied to the LQ game from initial deviation `dx0`:
/// `sum_t (0.5 dx' Q dx + q' dx + 0.5 du' R du + r' du)` plus the terminal
/// state cost. Used by Nash-deviation checks.
pub fn closed_loop_cost(
    lq: &LqApprox,
    gains: &[Vec<DMatrix<f64>>],
    feedforwards: &[Vec<DVector<f64>>],
    dx0: &DVector<f64>,
) -> Vec<f64> {
    let horizon = lq.horizon();
    let num_players = lq.num_players();
    let mut costs = vec![0.0; num_players];
    let mut dx = dx0.clone();
    for t in 0..horizon {
        let mut next = &lq.transitions[t] * &dx;
        for i in 0..num_players {
            let du = -(&gains[i][t] * &dx) - &feedforwards[i][t];
            let c = &lq.costs[i];
            costs[i] += 0.5 * (&c.state_hessians[t] * &dx).dot(&dx)
                + c.state_gradients[t].dot(&dx)
                + 0.5 * (&c.control_hessians[t] * &du).dot(&du)
                + c.control_gradients[t].dot(&du);
            next += &lq.control_jacobians[i][t] * du;
        }
        dx = next;
    }
    for (cost, c) in costs.iter_mut().zip(lq.costs.iter()) {
        *cost += 0.5 * (&c.state_hessians[horizon] * &dx).dot(&dx)
            + c.state_gradients[horizon].dot(&dx);
    }
    costs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{CriticalEntry, MarginKind, PlayerCost};
    use crate::verification::affine_lqr;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn value(n: usize) -> ValuePair {
        ValuePair {
            z_matrix: DMatrix::zeros(n, n),
            z_vector: DVector::zeros(n),
        }
    }

    pub(crate) fn random_lq(
        rng: &mut ChaCha8Rng,
        n: usize,
        dims: &[usize],
        horizon: usize,
    ) -> LqApprox {
        let rand_mat = |rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64| {
            DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
        };
        let psd = |rng: &mut ChaCha8Rng, d: usize, ridge: f64| {
            let m = rand_mat(rng, d, d, 1.0);
            &m * m.transpose() + DMatrix::identity(d, d) * ridge
        };
        let transitions: Vec<_> = (0..horizon)
            .map(|_| {
                let a = rand_mat(rng, n, n, 1.0);
                // Tame the spectral radius so rollouts stay bounded.
                &a / a.amax().max(1.0) + DMatrix::identity(n, n) * 0.1
            })
            .collect();
        let control_jacobians: Vec<Vec<_>> = dims
            .iter()
            .map(|&m| (0..horizon).map(|_| rand_mat(rng, n, m, 0.6)).collect())
            .collect();
        let costs: Vec<PlayerCost> = dims
            .iter()
            .map(|&m| PlayerCost {
                state_hessians: (0..=horizon).map(|_| psd(rng, n, 0.0) * 0.2).collect(),
                state_gradients: (0..=horizon)
                    .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5)))
                    .collect(),
                control_hessians: (0..horizon).map(|_| psd(rng, m, 0.5)).collect(),
                control_gradients: (0..horizon)
                    .map(|_| DVector::from_fn(m, |_, _| rng.random_range(-0.5..0.5)))
                    .collect(),
            })
            .collect();
        LqApprox {
            transitions,
            control_jacobians,
            costs,
        }
    }

    #[test]
    fn costless_game_yields_zero_gains() {
        let n = 3;
        let a = DMatrix::identity(n, n);
        let b1 = DMatrix::from_fn(n, 2, |i, j| (i + j) as f64 * 0.1);
        let b2 = DMatrix::from_fn(n, 1, |i, _| i as f64 * 0.2);
        let r1 = DMatrix::identity(2, 2);
        let r2 = DMatrix::identity(1, 1);
        let rv1 = DVector::zeros(2);
        let rv2 = DVector::zeros(1);
        let next = [value(n), value(n)];
        let (gains, ffs) = riccati_gains(
            &a,
            &[&b1, &b2],
            &[&next[0], &next[1]],
            &[&r1, &r2],
            &[&rv1, &rv2],
            0,
        )
        .unwrap();
        assert_eq!(gains[0].amax(), 0.0);
        assert_eq!(gains[1].amax(), 0.0);
        assert_eq!(ffs[0].amax(), 0.0);
        assert_eq!(ffs[1].amax(), 0.0);
    }

    #[test]
    fn scalar_lqr_riccati_step() {
        // K = (R + B Z B)^{-1} B Z A = (1 + 1)^{-1} * 1 * 1 * 1 = 0.5.
        let a = DMatrix::from_element(1, 1, 1.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        let z = ValuePair {
            z_matrix: DMatrix::from_element(1, 1, 1.0),
            z_vector: DVector::zeros(1),
        };
        let r = DMatrix::from_element(1, 1, 1.0);
        let rv = DVector::zeros(1);
        let (gains, _) = riccati_gains(&a, &[&b], &[&z], &[&r], &[&rv], 0).unwrap();
        assert_relative_eq!(gains[0][(0, 0)], 0.5);

        // Full step including the value update: with stage Q = 1 the new
        // value is Q + K R K + (A - B K) Z (A - B K) = 1 + 0.25 + 0.25.
        let q = DMatrix::from_element(1, 1, 1.0);
        let qv = DVector::zeros(1);
        let (gains, ffs, values) =
            riccati_step(&a, &[&b], &[&z], &[&q], &[&qv], &[&r], &[&rv], 0).unwrap();
        assert_relative_eq!(gains[0][(0, 0)], 0.5);
        assert_eq!(ffs[0].amax(), 0.0);
        assert_relative_eq!(values[0].z_matrix[(0, 0)], 1.5);
        assert_eq!(values[0].z_vector.amax(), 0.0);
    }

    #[test]
    fn single_player_matches_independent_lqr() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let n = rng.random_range(1..=6);
            let m = rng.random_range(1..=3);
            let horizon = rng.random_range(1..=20);
            let lq = random_lq(&mut rng, n, &[m], horizon);
            let sol = solve_standard(&lq).unwrap();
            let (k_oracle, ff_oracle) = affine_lqr(
                &lq.transitions,
                &lq.control_jacobians[0],
                &vec![DVector::zeros(n); horizon],
                &lq.costs[0],
            );
            for t in 0..horizon {
                let dk = (&sol.gains[0][t] - &k_oracle[t]).amax();
                let dff = (&sol.feedforwards[0][t] - &ff_oracle[t]).amax();
                assert!(dk < 1e-9 && dff < 1e-9, "t={t} dk={dk} dff={dff}");
            }
        }
    }

    #[test]
    fn decoupled_players_reduce_to_independent_lqr() {
        // Block-diagonal dynamics, each player's cost only touches its block.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let horizon = 10;
        let sub: Vec<LqApprox> = (0..2).map(|_| random_lq(&mut rng, 2, &[1], horizon)).collect();
        let mut transitions = Vec::new();
        for t in 0..horizon {
            let mut a = DMatrix::zeros(4, 4);
            a.view_mut((0, 0), (2, 2)).copy_from(&sub[0].transitions[t]);
            a.view_mut((2, 2), (2, 2)).copy_from(&sub[1].transitions[t]);
            transitions.push(a);
        }
        let control_jacobians: Vec<Vec<DMatrix<f64>>> = (0..2)
            .map(|i| {
                (0..horizon)
                    .map(|t| {
                        let mut b = DMatrix::zeros(4, 1);
                        b.view_mut((2 * i, 0), (2, 1))
                            .copy_from(&sub[i].control_jacobians[0][t]);
                        b
                    })
                    .collect()
            })
            .collect();
        let costs: Vec<PlayerCost> = (0..2)
            .map(|i| PlayerCost {
                state_hessians: (0..=horizon)
                    .map(|t| {
                        let mut q = DMatrix::zeros(4, 4);
                        q.view_mut((2 * i, 2 * i), (2, 2))
                            .copy_from(&sub[i].costs[0].state_hessians[t]);
                        q
                    })
                    .collect(),
                state_gradients: (0..=horizon)
                    .map(|t| {
                        let mut q = DVector::zeros(4);
                        q.rows_mut(2 * i, 2)
                            .copy_from(&sub[i].costs[0].state_gradients[t]);
                        q
                    })
                    .collect(),
                control_hessians: sub[i].costs[0].control_hessians.clone(),
                control_gradients: sub[i].costs[0].control_gradients.clone(),
            })
            .collect();
        let joint = LqApprox {
            transitions,
            control_jacobians,
            costs,
        };
        let sol = solve_standard(&joint).unwrap();
        #[allow(clippy::needless_range_loop)]
        for i in 0..2 {
            let isolated = solve_standard(&sub[i]).unwrap();
            for t in 0..horizon {
                let block = sol.gains[i][t].view((0, 2 * i), (1, 2)).into_owned();
                assert_relative_eq!(
                    (block - &isolated.gains[0][t]).amax(),
                    0.0,
                    epsilon = 1e-10
                );
                let off_block = sol.gains[i][t]
                    .view((0, 2 * (1 - i)), (1, 2))
                    .amax();
                assert!(off_block < 1e-10);
            }
        }
    }

    #[test]
    fn one_step_game_solves_the_static_foc() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lq = random_lq(&mut rng, 3, &[2, 2], 1);
        let sol = solve_standard(&lq).unwrap();
        // Directly verify the first-order conditions at t = 0.
        for i in 0..2 {
            let b_i = &lq.control_jacobians[i][0];
            let z_t = &lq.costs[i].state_hessians[1];
            let mut residual = (&lq.costs[i].control_hessians[0]
                + b_i.transpose() * z_t * b_i)
                * &sol.gains[i][0]
                - b_i.transpose() * z_t * &lq.transitions[0];
            residual += b_i.transpose()
                * z_t
                * &lq.control_jacobians[1 - i][0]
                * &sol.gains[1 - i][0];
            assert!(residual.amax() < 1e-10, "player {i}: {}", residual.amax());
        }
    }

    #[test]
    fn two_player_gains_are_best_response_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let n = rng.random_range(2..=4);
            let horizon = rng.random_range(2..=10);
            let lq = random_lq(&mut rng, n, &[2, 1], horizon);
            let sol = solve_standard(&lq).unwrap();
            for i in 0..2 {
                let (k_br, ff_br) = best_response(&lq, &sol, i);
                for t in 0..horizon {
                    let dk = (&sol.gains[i][t] - &k_br[t]).amax();
                    let dff = (&sol.feedforwards[i][t] - &ff_br[t]).amax();
                    assert!(dk < 1e-8 && dff < 1e-8, "player {i} t={t}: {dk} {dff}");
                }
            }
        }
    }

    /// Single-player affine LQR against the closed loop formed by the other
    /// players' fixed strategies.
    pub(crate) fn best_response(
        lq: &LqApprox,
        sol: &LqSolution,
        player: usize,
    ) -> (Vec<DMatrix<f64>>, Vec<DVector<f64>>) {
        let horizon = lq.horizon();
        let n = lq.state_dim();
        let mut transitions = Vec::with_capacity(horizon);
        let mut drifts = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let mut a = lq.transitions[t].clone();
            let mut c = DVector::zeros(n);
            for j in 0..lq.num_players() {
                if j != player {
                    a -= &lq.control_jacobians[j][t] * &sol.gains[j][t];
                    c -= &lq.control_jacobians[j][t] * &sol.feedforwards[j][t];
                }
            }
            transitions.push(a);
            drifts.push(c);
        }
        affine_lqr(
            &transitions,
            &lq.control_jacobians[player],
            &drifts,
            &lq.costs[player],
        )
    }

    #[test]
    fn unilateral_gain_perturbations_never_improve() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let n = 3;
            let horizon = 8;
            let lq = random_lq(&mut rng, n, &[2, 2], horizon);
            let sol = solve_standard(&lq).unwrap();
            let dx0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let base = closed_loop_cost(&lq, &sol.gains, &sol.feedforwards, &dx0);
            for _ in 0..20 {
                let player = rng.random_range(0..2);
                let mut gains = sol.gains.clone();
                let mut ffs = sol.feedforwards.clone();
                for t in 0..horizon {
                    gains[player][t] += DMatrix::from_fn(2, n, |_, _| {
                        rng.random_range(-1e-3..1e-3)
                    });
                    ffs[player][t] +=
                        DVector::from_fn(2, |_, _| rng.random_range(-1e-3..1e-3));
                }
                let perturbed = closed_loop_cost(&lq, &gains, &ffs, &dx0);
                assert!(
                    perturbed[player] >= base[player] - 1e-9,
                    "improved by {}",
                    base[player] - perturbed[player]
                );
            }
        }
    }

    fn zero_stage_state_costs(lq: &mut LqApprox, keep_terminal: bool) {
        let horizon = lq.horizon();
        for cost in &mut lq.costs {
            let end = if keep_terminal { horizon } else { horizon + 1 };
            for t in 0..end {
                cost.state_hessians[t].fill(0.0);
                cost.state_gradients[t].fill(0.0);
            }
        }
    }

    #[test]
    fn terminal_only_critical_set_matches_standard() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let horizon = 12;
        let mut lq = random_lq(&mut rng, 3, &[2, 1], horizon);
        zero_stage_state_costs(&mut lq, true);
        let critical = vec![
            CriticalSet {
                entries: vec![CriticalEntry { time: horizon, kind: MarginKind::Target }],
            };
            2
        ];
        let tc = solve_time_consistent(&lq, &critical).unwrap();
        let std = solve_standard(&lq).unwrap();
        for i in 0..2 {
            for t in 0..horizon {
                assert_eq!(tc.gains[i][t], std.gains[i][t]);
                assert_eq!(tc.feedforwards[i][t], std.feedforwards[i][t]);
            }
        }
    }

    #[test]
    fn value_resets_to_stage_quadratization_at_critical_times() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let horizon = 10;
        let lq = random_lq(&mut rng, 3, &[2, 2], horizon);
        let critical = vec![
            CriticalSet {
                entries: vec![
                    CriticalEntry { time: 4, kind: MarginKind::Target },
                    CriticalEntry { time: horizon, kind: MarginKind::Target },
                ],
            },
            CriticalSet {
                entries: vec![
                    CriticalEntry { time: 7, kind: MarginKind::Failure },
                    CriticalEntry { time: horizon, kind: MarginKind::Target },
                ],
            },
        ];
        let sol = solve_time_consistent(&lq, &critical).unwrap();
        // Bit-exact equality, not approximate.
        assert_eq!(sol.values[0][4].z_matrix, lq.costs[0].state_hessians[4]);
        assert_eq!(sol.values[0][4].z_vector, lq.costs[0].state_gradients[4]);
        assert_eq!(sol.values[1][7].z_matrix, lq.costs[1].state_hessians[7]);
        assert_eq!(sol.values[1][7].z_vector, lq.costs[1].state_gradients[7]);
    }

    #[test]
    fn segment_decomposition_single_player() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let horizon = 12;
        let tau = 5;
        let mut lq = random_lq(&mut rng, 3, &[2], horizon);
        zero_stage_state_costs(&mut lq, true);
        // Stage quadratization at the interior critical time.
        let q_tau = {
            let m = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            &m * m.transpose()
        };
        let qv_tau = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        lq.costs[0].state_hessians[tau] = q_tau.clone();
        lq.costs[0].state_gradients[tau] = qv_tau.clone();
        let critical = vec![CriticalSet {
            entries: vec![
                CriticalEntry { time: tau, kind: MarginKind::Target },
                CriticalEntry { time: horizon, kind: MarginKind::Target },
            ],
        }];
        let tc = solve_time_consistent(&lq, &critical).unwrap();

        // Late segment: standard solve of [tau, T] with terminal cost at T.
        let mut late = lq.truncate(tau);
        late.costs[0].state_hessians[0].fill(0.0);
        late.costs[0].state_gradients[0].fill(0.0);
        let late_sol = solve_standard(&late).unwrap();
        for t in tau..horizon {
            assert_eq!(tc.gains[0][t], late_sol.gains[0][t - tau]);
        }

        // Early segment: standard solve of [0, tau] with terminal (Q_tau, q_tau).
        let mut early = lq.clone();
        early.transitions.truncate(tau);
        early.control_jacobians[0].truncate(tau);
        early.costs[0].state_hessians.truncate(tau + 1);
        early.costs[0].state_gradients.truncate(tau + 1);
        early.costs[0].control_hessians.truncate(tau);
        early.costs[0].control_gradients.truncate(tau);
        let early_sol = solve_standard(&early).unwrap();
        for t in 0..tau {
            assert_eq!(tc.gains[0][t], early_sol.gains[0][t]);
        }
    }

    #[test]
    fn gains_invariant_under_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let horizon = 15;
        let lq = random_lq(&mut rng, 4, &[2, 2], horizon);
        let critical = vec![
            CriticalSet {
                entries: vec![
                    CriticalEntry { time: 3, kind: MarginKind::Failure },
                    CriticalEntry { time: 9, kind: MarginKind::Target },
                    CriticalEntry { time: horizon, kind: MarginKind::Target },
                ],
            },
            CriticalSet {
                entries: vec![
                    CriticalEntry { time: 6, kind: MarginKind::Target },
                    CriticalEntry { time: horizon, kind: MarginKind::Target },
                ],
            },
        ];
        let full = solve_time_consistent(&lq, &critical).unwrap();
        for s in [2usize, 6, 10] {
            let trunc_lq = lq.truncate(s);
            let trunc_crit: Vec<CriticalSet> = critical.iter().map(|c| c.truncate(s)).collect();
            let trunc = solve_time_consistent(&trunc_lq, &trunc_crit).unwrap();
            for i in 0..2 {
                for t in s..horizon {
                    assert_eq!(full.gains[i][t], trunc.gains[i][t - s], "s={s} i={i} t={t}");
                    assert_eq!(full.feedforwards[i][t], trunc.feedforwards[i][t - s]);
                }
            }
        }
    }

    #[test]
    fn standard_gains_depend_only_on_later_data() {
        // Feedback gains at time t use only dynamics and costs from t on, so
        // re-solving the truncated problem reproduces them bit-identically.
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let horizon = 14;
        let lq = random_lq(&mut rng, 3, &[2, 1], horizon);
        let full = solve_standard(&lq).unwrap();
        for s in [3usize, 8] {
            let trunc = solve_standard(&lq.truncate(s)).unwrap();
            for i in 0..2 {
                for t in s..horizon {
                    assert_eq!(full.gains[i][t], trunc.gains[i][t - s]);
                    assert_eq!(full.feedforwards[i][t], trunc.feedforwards[i][t - s]);
                }
            }
        }
    }

    #[test]
    fn value_matrices_stay_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let lq = random_lq(&mut rng, 4, &[2, 2], 20);
        let sol = solve_standard(&lq).unwrap();
        for per_player in &sol.values {
            for v in per_player {
                let asym = (&v.z_matrix - v.z_matrix.transpose()).amax();
                assert!(asym <= 1e-12);
            }
        }
    }
}
