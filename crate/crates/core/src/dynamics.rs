//! Discrete-time multi-agent dynamics: forward-Euler agent models, joint
//! stepping, analytic linearization, and time-varying control allocation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Kinematic state of one bicycle-model vehicle.
///
/// Position is the center of the rear axle in meters, heading and front wheel
/// angle in radians, speed in m/s. The front wheel angle is only meaningful
/// in (-pi/2, pi/2); the step does not clamp it, a steering-limit failure
/// margin is expected to keep iterates away from the singularity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BicycleState {
    pub px: f64,
    pub py: f64,
    pub heading: f64,
    pub wheel_angle: f64,
    pub speed: f64,
}

/// One forward-Euler step of the kinematic bicycle:
/// `x + dt * (v cos h, v sin h, v tan(phi) / wheelbase, wheel_rate, accel)`.
pub fn bicycle_step(
    state: BicycleState,
    wheel_rate: f64,
    accel: f64,
    dt: f64,
    wheelbase: f64,
) -> BicycleState {
    BicycleState {
        px: state.px + dt * state.speed * state.heading.cos(),
        py: state.py + dt * state.speed * state.heading.sin(),
        heading: state.heading + dt * state.speed * state.wheel_angle.tan() / wheelbase,
        wheel_angle: state.wheel_angle + dt * wheel_rate,
        speed: state.speed + dt * accel,
    }
}

/// One forward-Euler step of a velocity-controlled point: `p + dt * u` with
/// the input clamped componentwise to `[-speed_bound, speed_bound]`.
pub fn pedestrian_step(pos: (f64, f64), input: (f64, f64), dt: f64, speed_bound: f64) -> (f64, f64) {
    let clamp = |v: f64| v.clamp(-speed_bound, speed_bound);
    (pos.0 + dt * clamp(input.0), pos.1 + dt * clamp(input.1))
}

/// Subsystem models composing a joint multi-agent system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum AgentModel {
    Bicycle { wheelbase: f64 },
    Pedestrian { speed_bound: f64 },
}

impl AgentModel {
    pub fn state_dim(&self) -> usize {
        match self {
            AgentModel::Bicycle { .. } => 5,
            AgentModel::Pedestrian { .. } => 2,
        }
    }

    pub fn input_dim(&self) -> usize {
        2
    }

    fn step(&self, x: &[f64], u: &[f64], dt: f64) -> Vec<f64> {
        match *self {
            AgentModel::Bicycle { wheelbase } => {
                let s = BicycleState {
                    px: x[0],
                    py: x[1],
                    heading: x[2],
                    wheel_angle: x[3],
                    speed: x[4],
                };
                let next = bicycle_step(s, u[0], u[1], dt, wheelbase);
                vec![next.px, next.py, next.heading, next.wheel_angle, next.speed]
            }
            AgentModel::Pedestrian { speed_bound } => {
                let next = pedestrian_step((x[0], x[1]), (u[0], u[1]), dt, speed_bound);
                vec![next.0, next.1]
            }
        }
    }

    /// Analytic Jacobians of `step` with respect to the subsystem state and
    /// input: `(I + dt df/dx, dt df/du)`.
    fn jacobians(&self, x: &[f64], u: &[f64], dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        match *self {
            AgentModel::Bicycle { wheelbase } => {
                let (heading, phi, v) = (x[2], x[3], x[4]);
                let mut a = DMatrix::identity(5, 5);
                a[(0, 2)] = -dt * v * heading.sin();
                a[(0, 4)] = dt * heading.cos();
                a[(1, 2)] = dt * v * heading.cos();
                a[(1, 4)] = dt * heading.sin();
                let sec2 = 1.0 / (phi.cos() * phi.cos());
                a[(2, 3)] = dt * v * sec2 / wheelbase;
                a[(2, 4)] = dt * phi.tan() / wheelbase;
                let mut b = DMatrix::zeros(5, 2);
                b[(3, 0)] = dt;
                b[(4, 1)] = dt;
                (a, b)
            }
            AgentModel::Pedestrian { speed_bound } => {
                let a = DMatrix::identity(2, 2);
                let mut b = DMatrix::zeros(2, 2);
                // Saturated channels contribute nothing to the Jacobian.
                for j in 0..2 {
                    if u[j].abs() < speed_bound {
                        b[(j, j)] = dt;
                    }
                }
                (a, b)
            }
        }
    }
}

/// Wiring of one subsystem's input channels to a slice of one player's
/// control vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSource {
    pub player: usize,
    /// Start index into the player's control vector.
    pub offset: usize,
}

/// Piecewise-constant control allocation over the horizon. Each phase maps
/// every subsystem to the player (and control-vector offset) driving it from
/// `from_step` onward. Subsystems left unmapped in a phase receive zero
/// input, and the corresponding Jacobian columns are exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationSchedule {
    phases: Vec<(usize, Vec<Option<InputSource>>)>,
}

impl AllocationSchedule {
    /// Single-phase schedule: subsystem `i` is driven by player `i` at offset 0.
    pub fn identity(num_agents: usize) -> Self {
        AllocationSchedule {
            phases: vec![(
                0,
                (0..num_agents)
                    .map(|i| Some(InputSource { player: i, offset: 0 }))
                    .collect(),
            )],
        }
    }

    /// Schedule with explicit phases; `phases` must be sorted by start step
    /// and begin at step 0.
    pub fn phased(phases: Vec<(usize, Vec<Option<InputSource>>)>) -> Self {
        assert!(!phases.is_empty() && phases[0].0 == 0, "first phase must start at 0");
        assert!(phases.windows(2).all(|w| w[0].0 < w[1].0), "phases must be sorted");
        AllocationSchedule { phases }
    }

    pub fn at(&self, t: usize) -> &[Option<InputSource>] {
        let idx = self
            .phases
            .iter()
            .rposition(|(start, _)| *start <= t)
            .expect("phase list starts at step 0");
        &self.phases[idx].1
    }

    /// Shift the schedule so absolute step `s` becomes step 0.
    pub fn truncate(&self, s: usize) -> AllocationSchedule {
        let mut phases: Vec<(usize, Vec<Option<InputSource>>)> = Vec::new();
        for (start, sources) in &self.phases {
            let shifted = start.saturating_sub(s);
            if let Some(last) = phases.last_mut() {
                if last.0 == shifted {
                    last.1 = sources.clone();
                    continue;
                }
            }
            phases.push((shifted, sources.clone()));
        }
        AllocationSchedule { phases }
    }
}

/// A joint discrete-time system: concatenated subsystem states, per-player
/// control vectors, and a control-allocation schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiAgentSystem {
    agents: Vec<AgentModel>,
    control_dims: Vec<usize>,
    dt: f64,
    schedule: AllocationSchedule,
    state_offsets: Vec<usize>,
}

impl MultiAgentSystem {
    /// One player per agent, each controlling its own subsystem for the whole
    /// horizon.
    pub fn homogeneous(agents: Vec<AgentModel>, dt: f64) -> Self {
        let control_dims = agents.iter().map(|a| a.input_dim()).collect();
        let schedule = AllocationSchedule::identity(agents.len());
        Self::new(agents, control_dims, dt, schedule)
    }

    pub fn new(
        agents: Vec<AgentModel>,
        control_dims: Vec<usize>,
        dt: f64,
        schedule: AllocationSchedule,
    ) -> Self {
        assert!(dt > 0.0, "dt must be positive");
        let mut state_offsets = Vec::with_capacity(agents.len());
        let mut acc = 0;
        for a in &agents {
            state_offsets.push(acc);
            acc += a.state_dim();
        }
        MultiAgentSystem {
            agents,
            control_dims,
            dt,
            schedule,
            state_offsets,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_offsets.last().map_or(0, |&o| o)
            + self.agents.last().map_or(0, |a| a.state_dim())
    }

    pub fn control_dims(&self) -> &[usize] {
        &self.control_dims
    }

    pub fn num_players(&self) -> usize {
        self.control_dims.len()
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn agents(&self) -> &[AgentModel] {
        &self.agents
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn schedule(&self) -> &AllocationSchedule {
        &self.schedule
    }

    /// Start index of agent `i`'s block in the joint state.
    pub fn state_offset(&self, agent: usize) -> usize {
        self.state_offsets[agent]
    }

    /// Planar position indices of agent `i` in the joint state. Both models
    /// store position in their first two components.
    pub fn position_indices(&self, agent: usize) -> (usize, usize) {
        let o = self.state_offsets[agent];
        (o, o + 1)
    }

    /// Advance the joint state one step, honoring the allocation schedule at
    /// step `t`.
    pub fn joint_step(
        &self,
        x: &DVector<f64>,
        controls: &[DVector<f64>],
        t: usize,
    ) -> crate::Result<DVector<f64>> {
        self.check_dims(x, controls)?;
        let sources = self.schedule.at(t);
        let mut next = DVector::zeros(self.state_dim());
        for (i, agent) in self.agents.iter().enumerate() {
            let o = self.state_offsets[i];
            let d = agent.state_dim();
            let xs = x.as_slice()[o..o + d].to_vec();
            let u = match sources[i] {
                Some(src) => {
                    let slice = &controls[src.player].as_slice()
                        [src.offset..src.offset + agent.input_dim()];
                    slice.to_vec()
                }
                None => vec![0.0; agent.input_dim()],
            };
            let stepped = agent.step(&xs, &u, self.dt);
            next.as_mut_slice()[o..o + d].copy_from_slice(&stepped);
        }
        Ok(next)
    }

    /// Analytic linearization about `(x, controls)` at step `t`:
    /// block-diagonal `A` and per-player `B_i` with zero columns for control
    /// coordinates not wired to any subsystem at `t`.
    pub fn linearize(
        &self,
        x: &DVector<f64>,
        controls: &[DVector<f64>],
        t: usize,
    ) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let n = self.state_dim();
        let sources = self.schedule.at(t);
        let mut a = DMatrix::zeros(n, n);
        let mut bs: Vec<DMatrix<f64>> = self
            .control_dims
            .iter()
            .map(|&m| DMatrix::zeros(n, m))
            .collect();
        for (i, agent) in self.agents.iter().enumerate() {
            let o = self.state_offsets[i];
            let d = agent.state_dim();
            let xs = &x.as_slice()[o..o + d];
            let u = match sources[i] {
                Some(src) => controls[src.player].as_slice()
                    [src.offset..src.offset + agent.input_dim()]
                    .to_vec(),
                None => vec![0.0; agent.input_dim()],
            };
            let (ai, bi) = agent.jacobians(xs, &u, self.dt);
            a.view_mut((o, o), (d, d)).copy_from(&ai);
            if let Some(src) = sources[i] {
                bs[src.player]
                    .view_mut((o, src.offset), (d, agent.input_dim()))
                    .copy_from(&bi);
            }
        }
        (a, bs)
    }

    /// Same system with the allocation schedule shifted so absolute step `s`
    /// becomes step 0. Used when truncating a problem to a sub-horizon.
    pub fn truncate_schedule(&self, s: usize) -> MultiAgentSystem {
        MultiAgentSystem {
            schedule: self.schedule.truncate(s),
            ..self.clone()
        }
    }

    fn check_dims(&self, x: &DVector<f64>, controls: &[DVector<f64>]) -> crate::Result<()> {
        if x.len() != self.state_dim() {
            return Err(crate::Error::DimensionMismatch(format!(
                "joint state has dim {}, system expects {}",
                x.len(),
                self.state_dim()
            )));
        }
        if controls.len() != self.control_dims.len() {
            return Err(crate::Error::DimensionMismatch(format!(
                "{} control vectors for {} players",
                controls.len(),
                self.control_dims.len()
            )));
        }
        for (i, (u, &m)) in controls.iter().zip(self.control_dims.iter()).enumerate() {
            if u.len() != m {
                return Err(crate::Error::DimensionMismatch(format!(
                    "player {i} control has dim {}, expected {m}",
                    u.len()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn bicycle_straight_line_step() {
        let s = BicycleState { px: 0.0, py: 0.0, heading: 0.0, wheel_angle: 0.0, speed: 1.0 };
        let next = bicycle_step(s, 0.0, 0.0, 0.1, 4.0);
        assert_relative_eq!(next.px, 0.1);
        assert_eq!(next.py, 0.0);
        assert_eq!(next.heading, 0.0);
        assert_eq!(next.speed, 1.0);
    }

    #[test]
    fn bicycle_zero_speed_fixed_point() {
        let s = BicycleState { px: 2.0, py: -1.0, heading: 0.4, wheel_angle: 0.1, speed: 0.0 };
        let next = bicycle_step(s, 0.0, 0.0, 0.1, 4.0);
        assert_eq!(next, s);
    }

    #[test]
    fn bicycle_heading_up_moves_along_y() {
        let s = BicycleState { px: 0.0, py: 0.0, heading: FRAC_PI_2, wheel_angle: 0.0, speed: 2.0 };
        let next = bicycle_step(s, 0.0, 0.0, 0.1, 4.0);
        assert_relative_eq!(next.px, 0.0, epsilon = 1e-15);
        assert_relative_eq!(next.py, 0.2);
    }

    #[test]
    fn pedestrian_integrates_and_clamps() {
        assert_eq!(pedestrian_step((0.0, 0.0), (1.0, 0.0), 0.1, 2.0), (0.1, 0.0));
        assert_eq!(pedestrian_step((1.0, 1.0), (0.0, 0.0), 0.1, 2.0), (1.0, 1.0));
        // Brute-force bound projection: min(10, 2) = 2, then integrate.
        assert_eq!(pedestrian_step((0.0, 0.0), (10.0, 0.0), 0.1, 2.0), (0.2, 0.0));
    }

    fn two_bicycles() -> MultiAgentSystem {
        MultiAgentSystem::homogeneous(
            vec![
                AgentModel::Bicycle { wheelbase: 4.0 },
                AgentModel::Bicycle { wheelbase: 4.0 },
            ],
            0.1,
        )
    }

    #[test]
    fn joint_step_zero_speed_unchanged() {
        let sys = two_bicycles();
        let x = DVector::zeros(10);
        let u = vec![DVector::zeros(2), DVector::zeros(2)];
        let next = sys.joint_step(&x, &u, 0).unwrap();
        assert_eq!(next, x);
    }

    #[test]
    fn joint_step_rejects_bad_dims() {
        let sys = two_bicycles();
        let x = DVector::zeros(9);
        let u = vec![DVector::zeros(2), DVector::zeros(2)];
        assert!(sys.joint_step(&x, &u, 0).is_err());
    }

    /// Role-switching schedule: player 0 owns both cars from `t_react` on.
    fn defensive_system(t_react: usize) -> MultiAgentSystem {
        let agents = vec![
            AgentModel::Bicycle { wheelbase: 4.0 },
            AgentModel::Bicycle { wheelbase: 4.0 },
        ];
        let schedule = AllocationSchedule::phased(vec![
            (0, vec![
                Some(InputSource { player: 0, offset: 0 }),
                Some(InputSource { player: 1, offset: 0 }),
            ]),
            (t_react, vec![
                Some(InputSource { player: 0, offset: 0 }),
                Some(InputSource { player: 0, offset: 2 }),
            ]),
        ]);
        MultiAgentSystem::new(agents, vec![4, 2], 0.1, schedule)
    }

    #[test]
    fn allocation_switches_who_drives_the_second_car() {
        let sys = defensive_system(10);
        let mut x = DVector::zeros(10);
        x[9] = 1.0; // second car speed so accel shows up against a moving baseline
        let ego = DVector::from_row_slice(&[0.0, 0.0, 0.0, 5.0]);
        let onc = DVector::from_row_slice(&[0.0, 5.0]);
        let u = vec![ego.clone(), onc.clone()];

        // Before t_react the oncoming player's accel (5.0) drives car 2.
        let before = sys.joint_step(&x, &u, 9).unwrap();
        assert_relative_eq!(before[9], 1.0 + 0.1 * 5.0);

        // After t_react the ego's tail inputs drive car 2; oncoming is ignored.
        let after = sys.joint_step(&x, &u, 10).unwrap();
        assert_relative_eq!(after[9], 1.0 + 0.1 * 5.0);
        let u_zero_tail = vec![DVector::from_row_slice(&[0.0, 0.0, 0.0, 0.0]), onc];
        let after_zero = sys.joint_step(&x, &u_zero_tail, 10).unwrap();
        assert_relative_eq!(after_zero[9], 1.0);
    }

    #[test]
    fn allocation_zeroes_unowned_jacobian_columns() {
        let sys = defensive_system(10);
        let mut x = DVector::zeros(10);
        x[4] = 1.0;
        x[9] = 1.0;
        let u = vec![DVector::zeros(4), DVector::zeros(2)];

        let (_, bs_before) = sys.linearize(&x, &u, 0);
        assert!(bs_before[1].amax() > 0.0);
        assert_eq!(bs_before[0].view((0, 2), (10, 2)).amax(), 0.0);

        let (_, bs_after) = sys.linearize(&x, &u, 10);
        assert_eq!(bs_after[1].amax(), 0.0);
        assert!(bs_after[0].view((0, 2), (10, 2)).amax() > 0.0);
    }

    #[test]
    fn pedestrian_linearization_is_exact() {
        let sys = MultiAgentSystem::homogeneous(
            vec![AgentModel::Pedestrian { speed_bound: 2.0 }],
            0.1,
        );
        let (a, bs) = sys.linearize(
            &DVector::zeros(2),
            &[DVector::from_row_slice(&[0.5, -0.5])],
            0,
        );
        assert_eq!(a, DMatrix::identity(2, 2));
        assert_eq!(bs[0], DMatrix::identity(2, 2) * 0.1);
    }

    #[test]
    fn bicycle_jacobian_matches_finite_differences() {
        let sys = two_bicycles();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x = DVector::from_fn(10, |i, _| match i % 5 {
                3 => rng.random_range(-0.4..0.4),
                _ => rng.random_range(-3.0..3.0),
            });
            let u: Vec<DVector<f64>> = (0..2)
                .map(|_| DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            let (a, bs) = sys.linearize(&x, &u, 0);
            let err = crate::verification::jacobian_check(
                |x, u| sys.joint_step(x, u, 0).unwrap(),
                &x,
                &u,
                &a,
                &bs,
                1e-5,
            );
            assert!(err < 1e-5, "jacobian error {err}");
        }
    }

    #[test]
    fn spot_check_bicycle_velocity_column() {
        // d(px')/dv = dt * cos(heading); at heading 0, dt 0.1 this is 0.1.
        let sys = MultiAgentSystem::homogeneous(vec![AgentModel::Bicycle { wheelbase: 4.0 }], 0.1);
        let (a, _) = sys.linearize(&DVector::zeros(5), &[DVector::zeros(2)], 0);
        assert_relative_eq!(a[(0, 4)], 0.1);
    }

    #[test]
    fn schedule_truncation_shifts_phases() {
        let sys = defensive_system(10);
        let truncated = sys.schedule().truncate(4);
        assert_eq!(truncated.at(5), sys.schedule().at(9));
        assert_eq!(truncated.at(6), sys.schedule().at(10));
        let fully = sys.schedule().truncate(15);
        assert_eq!(fully.at(0), sys.schedule().at(15));
    }
}
