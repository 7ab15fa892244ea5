//! Scenario constructors and JSON config ingestion for the three shipped
//! experiments: one-player reach-avoid, two-player defensive driving, and a
//! three-player T-intersection.
//!
//! Geometry values (obstacle layouts, road widths, goal boxes, speed bounds,
//! collision clearances) are documented defaults chosen so the experiments
//! behave qualitatively as intended; they are ordinary config parameters and
//! can all be overridden from a JSON file.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{AgentModel, AllocationSchedule, InputSource, MultiAgentSystem};
use crate::ilq::{SolverConfig, Subroutine};
use crate::margins::{self, Margin, MarginFn, PlanarRef};
use crate::types::{AffineStrategy, MarginKind, Trajectory};
use crate::{Error, Result};

/// One player's identity and reach-avoid margins over the joint state.
#[derive(Clone)]
pub struct PlayerSpec {
    pub name: String,
    pub target: Arc<dyn MarginFn>,
    pub failure: Arc<dyn MarginFn>,
}

/// Overlay element for trajectory plots.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum GeometryElement {
    Circle { cx: f64, cy: f64, r: f64, role: GeomRole },
    Rect { cx: f64, cy: f64, half_w: f64, half_h: f64, role: GeomRole },
    Segment { x1: f64, y1: f64, x2: f64, y2: f64, role: GeomRole },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeomRole {
    Target,
    Failure,
    Guide,
}

/// Initial-state sampling region for batch experiments.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StartRegion {
    /// Place one vehicle agent uniformly on an annulus around `focus`, with
    /// heading drawn as bearing-to-focus plus uniform noise in
    /// `[-heading_spread, heading_spread]`, zero wheel angle, fixed speed.
    VehicleAnnulus {
        agent: usize,
        focus: [f64; 2],
        r_min: f64,
        r_max: f64,
        heading_spread: f64,
        speed: f64,
    },
}

/// A fully built game: system, players, horizon, initial condition, and
/// plotting/sampling metadata. Immutable after construction; shareable
/// across concurrent solves.
#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub system: MultiAgentSystem,
    pub players: Vec<PlayerSpec>,
    pub horizon: usize,
    pub initial_state: DVector<f64>,
    /// Constant per-player controls applied at every step to build the
    /// initial open-loop strategy.
    pub init_controls: Vec<DVector<f64>>,
    /// Per-agent goal points, used to build crude goal-seeking seed
    /// strategies (bicycle agents steer toward the point at held speed).
    /// The verification probes use these as an alternative warm start when
    /// re-solving truncated problems.
    pub pursuit_goals: Vec<Option<(f64, f64)>>,
    /// Use the pursuit controls (rather than `init_controls`) for the main
    /// solve's initial strategy.
    pub pursuit_init: bool,
    /// Standoff distance for the main solve's pursuit init: the seed aims at
    /// a point this far from the goal (toward the vehicle), so it orbits
    /// nearby instead of solving the problem outright. The probes' escape
    /// seeds always aim directly at the goal.
    pub pursuit_standoff: f64,
    pub start_region: Option<StartRegion>,
    pub geometry: Vec<GeometryElement>,
    pub solver_overrides: Option<SolverOverrides>,
}

impl Scenario {
    /// Open-loop rollout of the initialization policy with zero gains.
    pub fn initial_strategy(&self) -> Result<AffineStrategy> {
        self.open_loop_strategy(self.pursuit_init, self.pursuit_standoff)
    }

    /// Crude goal-seeking seed: bicycle agents with pursuit goals steer
    /// straight toward them, everyone else applies the constant init
    /// controls.
    pub fn pursuit_strategy(&self) -> Result<AffineStrategy> {
        self.open_loop_strategy(true, 0.0)
    }

    fn open_loop_strategy(&self, pursue: bool, standoff: f64) -> Result<AffineStrategy> {
        let mut states = Vec::with_capacity(self.horizon + 1);
        let mut controls: Vec<Vec<DVector<f64>>> =
            vec![Vec::with_capacity(self.horizon); self.players.len()];
        let mut x = self.initial_state.clone();
        states.push(x.clone());
        for t in 0..self.horizon {
            let mut us: Vec<DVector<f64>> = self.init_controls.to_vec();
            if pursue {
                self.apply_pursuit_controls(&x, t, standoff, &mut us);
            }
            let next = self.system.joint_step(&x, &us, t)?;
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
        Ok(AffineStrategy::open_loop(Trajectory {
            states,
            controls,
            dt: self.system.dt(),
        }))
    }

    /// Proportional steering toward each agent's pursuit goal; writes into
    /// the owning player's control slice per the allocation schedule.
    fn apply_pursuit_controls(&self, x: &DVector<f64>, t: usize, standoff: f64, us: &mut [DVector<f64>]) {
        let sources = self.system.schedule().at(t);
        for (agent, goal) in self.pursuit_goals.iter().enumerate() {
            let (Some((gx, gy)), AgentModel::Bicycle { .. }) = (goal, self.system.agents()[agent])
            else {
                continue;
            };
            let Some(src) = sources[agent] else { continue };
            let o = self.system.state_offset(agent);
            let (px, py, heading, wheel) = (x[o], x[o + 1], x[o + 2], x[o + 3]);
            // Aim at the standoff point on the vehicle's side of the goal.
            let (dx, dy) = (px - gx, py - gy);
            let dist = dx.hypot(dy).max(1e-9);
            let (gx, gy) = (gx + standoff * dx / dist, gy + standoff * dy / dist);
            let bearing = (gy - py).atan2(gx - px);
            let mut err = bearing - heading;
            while err > PI {
                err -= 2.0 * PI;
            }
            while err < -PI {
                err += 2.0 * PI;
            }
            let desired_wheel = (1.2 * err).clamp(-0.45, 0.45);
            let wheel_rate = (6.0 * (desired_wheel - wheel)).clamp(-2.0, 2.0);
            us[src.player][src.offset] = wheel_rate;
            us[src.player][src.offset + 1] = 0.0;
        }
    }

    /// Same scenario with a start override.
    pub fn with_initial_state(&self, x0: DVector<f64>) -> Scenario {
        Scenario {
            initial_state: x0,
            ..self.clone()
        }
    }

    /// Sub-problem on `[s, T]` from state `x`: margins see absolute time,
    /// the allocation schedule is shifted, and the horizon shrinks.
    pub fn truncate(&self, s: usize, x: DVector<f64>) -> Scenario {
        assert!(s <= self.horizon);
        Scenario {
            name: format!("{}+{}", self.name, s),
            system: self.system.truncate_schedule(s),
            players: self
                .players
                .iter()
                .map(|p| PlayerSpec {
                    name: p.name.clone(),
                    target: Arc::from(margins::shift_time(s, p.target.clone())),
                    failure: Arc::from(margins::shift_time(s, p.failure.clone())),
                })
                .collect(),
            horizon: self.horizon - s,
            initial_state: x,
            init_controls: self.init_controls.clone(),
            pursuit_goals: self.pursuit_goals.clone(),
            pursuit_init: self.pursuit_init,
            pursuit_standoff: self.pursuit_standoff,
            start_region: None,
            geometry: self.geometry.clone(),
            solver_overrides: self.solver_overrides.clone(),
        }
    }

    /// Draw an initial state from the start region, rejecting samples that
    /// begin inside any player's failure set. Scenarios without a region
    /// return the nominal initial state.
    pub fn sample_start(&self, rng: &mut impl Rng) -> Result<DVector<f64>> {
        let Some(region) = &self.start_region else {
            return Ok(self.initial_state.clone());
        };
        for _ in 0..1000 {
            let candidate = match *region {
                StartRegion::VehicleAnnulus {
                    agent,
                    focus,
                    r_min,
                    r_max,
                    heading_spread,
                    speed,
                } => {
                    let mut x = self.initial_state.clone();
                    let u: f64 = rng.random_range(0.0..1.0);
                    let radius = (r_min * r_min + u * (r_max * r_max - r_min * r_min)).sqrt();
                    let angle = rng.random_range(-PI..PI);
                    let px = focus[0] + radius * angle.cos();
                    let py = focus[1] + radius * angle.sin();
                    let bearing = (focus[1] - py).atan2(focus[0] - px);
                    let heading = bearing + rng.random_range(-heading_spread..heading_spread);
                    let o = self.system.state_offset(agent);
                    x[o] = px;
                    x[o + 1] = py;
                    x[o + 2] = heading;
                    x[o + 3] = 0.0;
                    x[o + 4] = speed;
                    x
                }
            };
            let safe = self
                .players
                .iter()
                .all(|p| p.failure.value(&candidate, 0) <= 0.0);
            if safe {
                return Ok(candidate);
            }
        }
        Err(Error::Config(
            "start sampling rejected 1000 consecutive draws".into(),
        ))
    }

    /// Solver config with this scenario's overrides applied on top of the
    /// given base subroutine.
    pub fn solver_config(&self, subroutine: Subroutine) -> SolverConfig {
        let mut config = SolverConfig::with_subroutine(subroutine);
        if let Some(over) = &self.solver_overrides {
            over.apply(&mut config);
        }
        config
    }
}

/// Optional per-scenario solver parameter overrides (mirrors
/// [`SolverConfig`] field for field).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    pub eta: Option<f64>,
    pub max_iterations: Option<usize>,
    pub convergence_tolerance: Option<f64>,
    pub initial_alpha: Option<f64>,
    pub alpha_shrink: Option<f64>,
    pub max_backtracks: Option<usize>,
    pub lambda_reg: Option<f64>,
    pub early_stop: Option<bool>,
}

impl SolverOverrides {
    pub fn apply(&self, config: &mut SolverConfig) {
        if let Some(v) = self.eta {
            config.eta = v;
        }
        if let Some(v) = self.max_iterations {
            config.max_iterations = v;
        }
        if let Some(v) = self.convergence_tolerance {
            config.convergence_tolerance = v;
        }
        if let Some(v) = self.initial_alpha {
            config.initial_alpha = v;
        }
        if let Some(v) = self.alpha_shrink {
            config.alpha_shrink = v;
        }
        if let Some(v) = self.max_backtracks {
            config.max_backtracks = v;
        }
        if let Some(v) = self.lambda_reg {
            config.lambda_reg = v;
        }
        if let Some(v) = self.early_stop {
            config.early_stop = v;
        }
    }
}

// ---------------------------------------------------------------------------
// One-player reach-avoid
// ---------------------------------------------------------------------------

/// Parameters of the single-vehicle reach-avoid benchmark. Defaults place a
/// small target disk at the origin ringed by three obstacle disks, with
/// starts sampled on an annulus outside the obstacles.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnePlayerParams {
    pub dt: f64,
    pub horizon: usize,
    pub wheelbase: f64,
    pub target_center: [f64; 2],
    pub target_radius: f64,
    pub obstacles: Vec<Disk>,
    /// Steering-angle limit in radians; `None` drops the constraint.
    pub steering_limit: Option<f64>,
    pub start_r_min: f64,
    pub start_r_max: f64,
    pub start_heading_spread: f64,
    pub start_speed: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Disk {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Default for OnePlayerParams {
    fn default() -> Self {
        let ring = |deg: f64| {
            let rad = deg.to_radians();
            Disk {
                center: [5.4 * rad.cos(), 5.4 * rad.sin()],
                radius: 1.8,
            }
        };
        OnePlayerParams {
            dt: 0.1,
            horizon: 100,
            wheelbase: 0.5,
            target_center: [0.0, 0.0],
            target_radius: 1.0,
            obstacles: (0..6).map(|k| ring(30.0 + 60.0 * k as f64)).collect(),
            steering_limit: None,
            start_r_min: 7.5,
            start_r_max: 10.5,
            start_heading_spread: FRAC_PI_2,
            start_speed: 2.0,
        }
    }
}

/// Single kinematic bicycle reaching a disk while avoiding obstacle disks
/// (and optionally a steering-angle interval).
pub fn one_player_reach_avoid(params: &OnePlayerParams) -> Result<Scenario> {
    if params.target_radius <= 0.0 || params.horizon == 0 {
        return Err(Error::Config("target radius and horizon must be positive".into()));
    }
    let system = MultiAgentSystem::homogeneous(
        vec![AgentModel::Bicycle { wheelbase: params.wheelbase }],
        params.dt,
    );
    let pos = PlanarRef { x: 0, y: 1 };
    let target = margins::disk_target(
        (params.target_center[0], params.target_center[1]),
        params.target_radius,
        pos,
    );
    let mut failures: Vec<Margin> = params
        .obstacles
        .iter()
        .map(|d| margins::disk_failure((d.center[0], d.center[1]), d.radius, pos))
        .collect();
    if let Some(limit) = params.steering_limit {
        failures.push(margins::box_interval_failure(3, -limit, limit));
    }
    let failure = if failures.is_empty() {
        margins::constant(MarginKind::Failure, margins::NO_FAILURE)
    } else {
        margins::combine_max(failures)
    };

    let mut geometry = vec![GeometryElement::Circle {
        cx: params.target_center[0],
        cy: params.target_center[1],
        r: params.target_radius,
        role: GeomRole::Target,
    }];
    geometry.extend(params.obstacles.iter().map(|d| GeometryElement::Circle {
        cx: d.center[0],
        cy: d.center[1],
        r: d.radius,
        role: GeomRole::Failure,
    }));

    // Nominal start: due east of the focus, facing it.
    let r0 = 0.5 * (params.start_r_min + params.start_r_max);
    let initial_state = nalgebra::dvector![
        params.target_center[0] + r0,
        params.target_center[1],
        PI,
        0.0,
        params.start_speed
    ];

    Ok(Scenario {
        name: "one_player".into(),
        system,
        players: vec![PlayerSpec {
            name: "vehicle".into(),
            target: Arc::from(target),
            failure: Arc::from(failure),
        }],
        horizon: params.horizon,
        initial_state,
        init_controls: vec![DVector::zeros(2)],
        pursuit_goals: vec![Some((params.target_center[0], params.target_center[1]))],
        pursuit_init: true,
        pursuit_standoff: 2.2 * params.target_radius,
        start_region: Some(StartRegion::VehicleAnnulus {
            agent: 0,
            focus: params.target_center,
            r_min: params.start_r_min,
            r_max: params.start_r_max,
            heading_spread: params.start_heading_spread,
            speed: params.start_speed,
        }),
        geometry,
        solver_overrides: Some(SolverOverrides {
            initial_alpha: Some(0.35),
            ..SolverOverrides::default()
        }),
    })
}

// ---------------------------------------------------------------------------
// Two-player defensive driving
// ---------------------------------------------------------------------------

/// Parameters of the defensive-driving game: an ego car passing an oncoming
/// car on a two-lane road. The oncoming driver behaves adversarially until
/// `t_react`, after which the ego player controls both vehicles.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefensiveDrivingParams {
    pub dt: f64,
    pub horizon: usize,
    pub wheelbase: f64,
    /// Step at which control of the oncoming car transfers to the ego player.
    pub t_react: usize,
    /// Road occupies `0 <= y <= road_width`.
    pub road_width: f64,
    /// Margin each car must keep from the road edges.
    pub edge_margin: f64,
    /// Center-to-center collision clearance.
    pub clearance: f64,
    pub steering_limit: f64,
    pub ego_start: [f64; 2],
    pub ego_speed: f64,
    pub oncoming_start: [f64; 2],
    pub oncoming_speed: f64,
    pub goal_center: [f64; 2],
    pub goal_half_extents: [f64; 2],
}

impl Default for DefensiveDrivingParams {
    fn default() -> Self {
        DefensiveDrivingParams {
            dt: 0.1,
            horizon: 50,
            wheelbase: 4.0,
            t_react: 10,
            road_width: 7.0,
            edge_margin: 1.0,
            clearance: 3.0,
            steering_limit: FRAC_PI_6,
            ego_start: [0.0, 1.75],
            ego_speed: 5.0,
            oncoming_start: [25.0, 5.25],
            oncoming_speed: 5.0,
            goal_center: [28.0, 1.75],
            goal_half_extents: [4.0, 1.25],
        }
    }
}

fn road_edge_failures(pos: PlanarRef, road_width: f64, edge_margin: f64) -> Vec<Margin> {
    vec![
        // Below the lower edge: positive when p_y < edge_margin.
        margins::halfplane_failure((0.0, -1.0), -edge_margin, pos),
        // Above the upper edge.
        margins::halfplane_failure((0.0, 1.0), road_width - edge_margin, pos),
    ]
}

/// Two bicycles on a two-lane road; control of the oncoming car switches to
/// the ego player at `t_react`.
pub fn defensive_driving(params: &DefensiveDrivingParams) -> Result<Scenario> {
    if params.t_react == 0 || params.t_react >= params.horizon {
        return Err(Error::Config(format!(
            "t_react must lie strictly inside the horizon (got {} of {})",
            params.t_react, params.horizon
        )));
    }
    let agents = vec![
        AgentModel::Bicycle { wheelbase: params.wheelbase },
        AgentModel::Bicycle { wheelbase: params.wheelbase },
    ];
    // Ego owns four control coordinates for the whole horizon so LQ data has
    // uniform shape; the schedule wires its tail pair to the oncoming car
    // only after t_react.
    let schedule = AllocationSchedule::phased(vec![
        (0, vec![
            Some(InputSource { player: 0, offset: 0 }),
            Some(InputSource { player: 1, offset: 0 }),
        ]),
        (params.t_react, vec![
            Some(InputSource { player: 0, offset: 0 }),
            Some(InputSource { player: 0, offset: 2 }),
        ]),
    ]);
    let system = MultiAgentSystem::new(agents, vec![4, 2], params.dt, schedule);
    let ego_pos = PlanarRef { x: 0, y: 1 };
    let onc_pos = PlanarRef { x: 5, y: 6 };

    let collision = || margins::pairwise_distance_failure(ego_pos, onc_pos, params.clearance);

    // Ego failure: collision, own road edges and steering limit, and (once it
    // controls the oncoming car) the oncoming car's analogous constraints.
    let mut ego_failures: Vec<Margin> = vec![collision()];
    ego_failures.extend(road_edge_failures(ego_pos, params.road_width, params.edge_margin));
    ego_failures.push(margins::box_interval_failure(
        3,
        -params.steering_limit,
        params.steering_limit,
    ));
    let mut onc_constraints: Vec<Margin> =
        road_edge_failures(onc_pos, params.road_width, params.edge_margin);
    onc_constraints.push(margins::box_interval_failure(
        8,
        -params.steering_limit,
        params.steering_limit,
    ));
    ego_failures.push(margins::active_from(
        params.t_react + 1,
        margins::NO_FAILURE,
        margins::combine_max(onc_constraints),
    ));
    let ego_failure = margins::combine_max(ego_failures);

    let ego_target = margins::box_target(
        (params.goal_center[0], params.goal_center[1]),
        (params.goal_half_extents[0], params.goal_half_extents[1]),
        ego_pos,
    );

    // Oncoming target: the negation of the max of (a) inter-vehicle signed
    // distance and (b) the ego's road-edge margins, so it is nonpositive
    // exactly when the ego is in collision or off the road.
    let mut ego_unsafe: Vec<Margin> = vec![collision()];
    ego_unsafe.extend(road_edge_failures(ego_pos, params.road_width, params.edge_margin));
    let onc_target = margins::negate(margins::combine_max(ego_unsafe));
    let onc_failure = margins::combine_max(road_edge_failures(
        onc_pos,
        params.road_width,
        params.edge_margin,
    ));

    let geometry = vec![
        GeometryElement::Segment {
            x1: params.ego_start[0] - 5.0,
            y1: 0.0,
            x2: params.goal_center[0] + 10.0,
            y2: 0.0,
            role: GeomRole::Failure,
        },
        GeometryElement::Segment {
            x1: params.ego_start[0] - 5.0,
            y1: params.road_width,
            x2: params.goal_center[0] + 10.0,
            y2: params.road_width,
            role: GeomRole::Failure,
        },
        GeometryElement::Segment {
            x1: params.ego_start[0] - 5.0,
            y1: params.road_width / 2.0,
            x2: params.goal_center[0] + 10.0,
            y2: params.road_width / 2.0,
            role: GeomRole::Guide,
        },
        GeometryElement::Rect {
            cx: params.goal_center[0],
            cy: params.goal_center[1],
            half_w: params.goal_half_extents[0],
            half_h: params.goal_half_extents[1],
            role: GeomRole::Target,
        },
    ];

    let initial_state = nalgebra::dvector![
        params.ego_start[0],
        params.ego_start[1],
        0.0,
        0.0,
        params.ego_speed,
        params.oncoming_start[0],
        params.oncoming_start[1],
        PI,
        0.0,
        params.oncoming_speed
    ];

    Ok(Scenario {
        name: "defensive_driving".into(),
        system,
        players: vec![
            PlayerSpec {
                name: "ego".into(),
                target: Arc::from(ego_target),
                failure: Arc::from(ego_failure),
            },
            PlayerSpec {
                name: "oncoming".into(),
                target: Arc::from(onc_target),
                failure: Arc::from(onc_failure),
            },
        ],
        horizon: params.horizon,
        initial_state,
        init_controls: vec![DVector::zeros(4), DVector::zeros(2)],
        pursuit_goals: vec![None, None],
        pursuit_init: false,
        pursuit_standoff: 0.0,
        start_region: None,
        geometry,
        solver_overrides: None,
    })
}

// ---------------------------------------------------------------------------
// Three-player T-intersection
// ---------------------------------------------------------------------------

/// Parameters of the T-intersection game: one car drives straight through,
/// one turns left from the side road, and a pedestrian crosses at a
/// crosswalk east of the junction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TIntersectionParams {
    pub dt: f64,
    pub horizon: usize,
    pub wheelbase: f64,
    pub pedestrian_speed_bound: f64,
    pub car_clearance: f64,
    pub pedestrian_clearance: f64,
    pub steering_limit: f64,
    /// Main road occupies `0 <= y <= road_width`, side road
    /// `side_x_min <= x <= side_x_min + road_width` heading south.
    pub road_width: f64,
    pub side_x_min: f64,
    pub straight_start: [f64; 2],
    pub straight_speed: f64,
    pub straight_goal: [f64; 2],
    pub turner_start_y: f64,
    pub turner_speed: f64,
    pub turner_goal: [f64; 2],
    pub crosswalk_x: f64,
    pub ped_start_y: f64,
    pub ped_goal_y: f64,
    pub goal_half_extents: [f64; 2],
}

impl Default for TIntersectionParams {
    fn default() -> Self {
        TIntersectionParams {
            dt: 0.1,
            horizon: 80,
            wheelbase: 2.5,
            pedestrian_speed_bound: 1.5,
            car_clearance: 3.0,
            pedestrian_clearance: 1.5,
            steering_limit: FRAC_PI_6,
            road_width: 7.0,
            side_x_min: 0.0,
            straight_start: [-14.0, 1.75],
            straight_speed: 3.3,
            straight_goal: [13.0, 1.75],
            turner_start_y: -10.0,
            turner_speed: 4.0,
            turner_goal: [-10.0, 5.25],
            crosswalk_x: 9.0,
            ped_start_y: 8.5,
            ped_goal_y: -1.5,
            goal_half_extents: [2.0, 1.5],
        }
    }
}

/// Two bicycles and one velocity-bounded pedestrian crossing a T-junction.
pub fn t_intersection(params: &TIntersectionParams) -> Result<Scenario> {
    if params.horizon == 0 {
        return Err(Error::Config("horizon must be positive".into()));
    }
    let agents = vec![
        AgentModel::Bicycle { wheelbase: params.wheelbase },
        AgentModel::Bicycle { wheelbase: params.wheelbase },
        AgentModel::Pedestrian { speed_bound: params.pedestrian_speed_bound },
    ];
    let system = MultiAgentSystem::homogeneous(agents, params.dt);
    let a_pos = PlanarRef { x: 0, y: 1 };
    let b_pos = PlanarRef { x: 5, y: 6 };
    let p_pos = PlanarRef { x: 10, y: 11 };

    let w = params.road_width;
    let side_cx = params.side_x_min + 0.75 * w; // northbound lane center
    let lane_half = 0.25 * w;

    // Straight car: eastbound lower lane of the main road.
    let a_lane = margins::box_region_failure(
        (0.5 * (params.straight_start[0] + params.straight_goal[0] + 6.0), 0.25 * w),
        (0.5 * (params.straight_goal[0] - params.straight_start[0]) + 5.0, 0.25 * w),
        a_pos,
    );
    // Turner: union of its northbound approach lane and the whole main road,
    // entered via the junction.
    let b_corridor = margins::combine_min(vec![
        margins::box_region_failure(
            (side_cx, 0.5 * (params.turner_start_y - 3.0 + w)),
            (lane_half, 0.5 * (w - params.turner_start_y + 3.0)),
            b_pos,
        ),
        margins::box_region_failure(
            (0.5 * (params.turner_goal[0] - 20.0 + params.side_x_min + w), 0.75 * w),
            (0.5 * (params.side_x_min + w - params.turner_goal[0] + 20.0), 0.25 * w),
            b_pos,
        ),
    ]);

    let car_pair = margins::pairwise_distance_failure(a_pos, b_pos, params.car_clearance);
    let a_ped = margins::pairwise_distance_failure(a_pos, p_pos, params.pedestrian_clearance);
    let b_ped = margins::pairwise_distance_failure(b_pos, p_pos, params.pedestrian_clearance);

    let a_failure = margins::combine_max(vec![
        margins::pairwise_distance_failure(a_pos, b_pos, params.car_clearance),
        margins::pairwise_distance_failure(a_pos, p_pos, params.pedestrian_clearance),
        a_lane,
        margins::box_interval_failure(3, -params.steering_limit, params.steering_limit),
    ]);
    let b_failure = margins::combine_max(vec![
        car_pair,
        b_ped,
        b_corridor,
        margins::box_interval_failure(8, -params.steering_limit, params.steering_limit),
    ]);
    // The pedestrian has no lane constraints, only collision avoidance.
    let p_failure = margins::combine_max(vec![
        a_ped,
        margins::pairwise_distance_failure(b_pos, p_pos, params.pedestrian_clearance),
    ]);

    // Targets are "position beyond a threshold, inside the lane": half-band
    // boxes stretched along the travel direction so an agent that has
    // arrived stays in its target set instead of being rewarded for
    // overshooting a small box at speed.
    let half = (params.goal_half_extents[0], params.goal_half_extents[1]);
    let a_target = margins::box_target(
        (params.straight_goal[0] + 15.0 - half.0, params.straight_goal[1]),
        (15.0, half.1),
        a_pos,
    );
    let b_target = margins::box_target(
        (params.turner_goal[0] - 15.0 + half.0, params.turner_goal[1]),
        (15.0, half.1),
        b_pos,
    );
    let p_target = margins::box_target(
        (params.crosswalk_x, params.ped_goal_y - 6.0 + half.1),
        (half.0, 6.0),
        p_pos,
    );

    let x_min = params.straight_start[0] - 4.0;
    let x_max = params.straight_goal[0] + 4.0;
    let geometry = vec![
        GeometryElement::Segment { x1: x_min, y1: 0.0, x2: params.side_x_min, y2: 0.0, role: GeomRole::Failure },
        GeometryElement::Segment {
            x1: params.side_x_min + w,
            y1: 0.0,
            x2: x_max,
            y2: 0.0,
            role: GeomRole::Failure,
        },
        GeometryElement::Segment { x1: x_min, y1: w, x2: x_max, y2: w, role: GeomRole::Failure },
        GeometryElement::Segment {
            x1: params.side_x_min,
            y1: 0.0,
            x2: params.side_x_min,
            y2: params.turner_start_y - 3.0,
            role: GeomRole::Failure,
        },
        GeometryElement::Segment {
            x1: params.side_x_min + w,
            y1: 0.0,
            x2: params.side_x_min + w,
            y2: params.turner_start_y - 3.0,
            role: GeomRole::Failure,
        },
        GeometryElement::Rect {
            cx: params.straight_goal[0],
            cy: params.straight_goal[1],
            half_w: half.0,
            half_h: half.1,
            role: GeomRole::Target,
        },
        GeometryElement::Rect {
            cx: params.turner_goal[0],
            cy: params.turner_goal[1],
            half_w: half.0,
            half_h: half.1,
            role: GeomRole::Target,
        },
        GeometryElement::Rect {
            cx: params.crosswalk_x,
            cy: params.ped_goal_y,
            half_w: half.0,
            half_h: half.1,
            role: GeomRole::Target,
        },
    ];

    let initial_state = nalgebra::dvector![
        params.straight_start[0],
        params.straight_start[1],
        0.0,
        0.0,
        params.straight_speed,
        side_cx,
        params.turner_start_y,
        FRAC_PI_2,
        0.0,
        params.turner_speed,
        params.crosswalk_x,
        params.ped_start_y
    ];

    Ok(Scenario {
        name: "t_intersection".into(),
        system,
        players: vec![
            PlayerSpec {
                name: "straight_car".into(),
                target: Arc::from(a_target),
                failure: Arc::from(a_failure),
            },
            PlayerSpec {
                name: "turning_car".into(),
                target: Arc::from(b_target),
                failure: Arc::from(b_failure),
            },
            PlayerSpec {
                name: "pedestrian".into(),
                target: Arc::from(p_target),
                failure: Arc::from(p_failure),
            },
        ],
        horizon: params.horizon,
        initial_state,
        init_controls: vec![DVector::zeros(2), DVector::zeros(2), DVector::zeros(2)],
        pursuit_goals: vec![None, None, None],
        pursuit_init: false,
        pursuit_standoff: 0.0,
        start_region: None,
        geometry,
        solver_overrides: None,
    })
}

// ---------------------------------------------------------------------------
// Config files
// ---------------------------------------------------------------------------

/// Top-level scenario file. Either one of the named experiments with its
/// parameters, or a fully custom game described margin by margin.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioFile {
    OnePlayer(OnePlayerParams),
    DefensiveDriving(DefensiveDrivingParams),
    TIntersection(TIntersectionParams),
    Custom(Box<CustomScenario>),
}

/// Generic scenario schema: system, players, per-player margins, horizon,
/// initial states, and optional solver overrides. Multiple failure entries
/// per player are combined with a pointwise max.
#[derive(Serialize, Deserialize)]
pub struct CustomScenario {
    pub name: String,
    pub system: SystemConfig,
    pub players: Vec<PlayerConfig>,
    pub margins: Vec<PlayerMargins>,
    pub horizon: usize,
    pub initial_states: InitialStates,
    #[serde(default)]
    pub init_controls: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub solver_overrides: Option<SolverOverrides>,
    #[serde(default)]
    pub geometry: Vec<GeometryElement>,
}

#[derive(Serialize, Deserialize)]
pub struct SystemConfig {
    pub dt: f64,
    pub agents: Vec<AgentModel>,
    /// Per-player control dimensions; defaults to one player per agent.
    #[serde(default)]
    pub control_dims: Option<Vec<usize>>,
    /// Allocation phases `(from_step, per-agent source)`; defaults to agent
    /// `i` driven by player `i`.
    #[serde(default)]
    pub allocation: Option<Vec<AllocationPhaseConfig>>,
}

#[derive(Serialize, Deserialize)]
pub struct AllocationPhaseConfig {
    pub from_step: usize,
    pub assignments: Vec<Option<InputSource>>,
}

#[derive(Serialize, Deserialize)]
pub struct PlayerConfig {
    pub name: String,
}

#[derive(Serialize, Deserialize)]
pub struct PlayerMargins {
    pub target: MarginConfig,
    pub failures: Vec<MarginConfig>,
}

#[derive(Serialize, Deserialize)]
pub struct InitialStates {
    pub nominal: Vec<f64>,
    #[serde(default)]
    pub start_region: Option<StartRegion>,
}

/// Declarative margin description. `agent` indices refer to subsystems; the
/// planar constructors resolve them to joint-state coordinates.
#[derive(Serialize, Deserialize, Clone, Debug)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MarginConfig {
    DiskTarget { agent: usize, center: [f64; 2], radius: f64 },
    DiskFailure { agent: usize, center: [f64; 2], radius: f64 },
    Halfplane { agent: usize, normal: [f64; 2], offset: f64 },
    PairDistance { agent_a: usize, agent_b: usize, clearance: f64 },
    /// Interval constraint on one coordinate of an agent's state block.
    Interval { agent: usize, state_index: usize, lower: f64, upper: f64 },
    BoxTarget { agent: usize, center: [f64; 2], half_extents: [f64; 2] },
    /// Positive outside the box; use under `min` for unions of boxes.
    BoxExit { agent: usize, center: [f64; 2], half_extents: [f64; 2] },
    Max { parts: Vec<MarginConfig> },
    Min { parts: Vec<MarginConfig> },
    Negate { inner: Box<MarginConfig> },
    ActiveFrom { start: usize, inactive_value: f64, inner: Box<MarginConfig> },
    Constant { value: f64 },
}

impl MarginConfig {
    /// Build the margin over the joint state of `system`. `kind` tags the
    /// root; primitive constructors keep their natural kinds. Malformed
    /// parameters surface as config errors rather than panics.
    pub fn build(&self, system: &MultiAgentSystem, kind: MarginKind) -> Result<Margin> {
        let planar = |agent: usize| -> Result<PlanarRef> {
            if agent >= system.num_agents() {
                return Err(Error::Config(format!("agent index {agent} out of range")));
            }
            let (x, y) = system.position_indices(agent);
            Ok(PlanarRef { x, y })
        };
        let positive = |value: f64, what: &str| -> Result<f64> {
            if value > 0.0 && value.is_finite() {
                Ok(value)
            } else {
                Err(Error::Config(format!("{what} must be positive, got {value}")))
            }
        };
        Ok(match self {
            MarginConfig::DiskTarget { agent, center, radius } => margins::disk_target(
                (center[0], center[1]),
                positive(*radius, "disk radius")?,
                planar(*agent)?,
            ),
            MarginConfig::DiskFailure { agent, center, radius } => margins::disk_failure(
                (center[0], center[1]),
                positive(*radius, "disk radius")?,
                planar(*agent)?,
            ),
            MarginConfig::Halfplane { agent, normal, offset } => {
                let norm = normal[0].hypot(normal[1]);
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(Error::Config(format!(
                        "halfplane normal must be a unit vector (|n| = {norm})"
                    )));
                }
                margins::halfplane_failure((normal[0], normal[1]), *offset, planar(*agent)?)
            }
            MarginConfig::PairDistance { agent_a, agent_b, clearance } => {
                margins::pairwise_distance_failure(
                    planar(*agent_a)?,
                    planar(*agent_b)?,
                    positive(*clearance, "clearance")?,
                )
            }
            MarginConfig::Interval { agent, state_index, lower, upper } => {
                let offset = system.state_offset(*agent);
                if state_index + offset >= system.state_dim() {
                    return Err(Error::Config(format!(
                        "state index {state_index} out of range for agent {agent}"
                    )));
                }
                if lower >= upper {
                    return Err(Error::Config(format!(
                        "interval bounds must satisfy lower < upper ({lower} >= {upper})"
                    )));
                }
                margins::box_interval_failure(offset + state_index, *lower, *upper)
            }
            MarginConfig::BoxTarget { agent, center, half_extents } => margins::box_target(
                (center[0], center[1]),
                (
                    positive(half_extents[0], "box half extent")?,
                    positive(half_extents[1], "box half extent")?,
                ),
                planar(*agent)?,
            ),
            MarginConfig::BoxExit { agent, center, half_extents } => margins::box_region_failure(
                (center[0], center[1]),
                (
                    positive(half_extents[0], "box half extent")?,
                    positive(half_extents[1], "box half extent")?,
                ),
                planar(*agent)?,
            ),
            MarginConfig::Max { parts } | MarginConfig::Min { parts } => {
                if parts.is_empty() {
                    return Err(Error::Config("max/min needs at least one margin".into()));
                }
                let built = parts
                    .iter()
                    .map(|p| p.build(system, kind))
                    .collect::<Result<Vec<_>>>()?;
                match self {
                    MarginConfig::Max { .. } => margins::combine_max(built),
                    _ => margins::combine_min(built),
                }
            }
            MarginConfig::Negate { inner } => margins::negate(inner.build(system, kind)?),
            MarginConfig::ActiveFrom { start, inactive_value, inner } => {
                margins::active_from(*start, *inactive_value, inner.build(system, kind)?)
            }
            MarginConfig::Constant { value } => margins::constant(kind, *value),
        })
    }
}

impl CustomScenario {
    pub fn build(&self) -> Result<Scenario> {
        if self.players.len() != self.margins.len() {
            return Err(Error::Config(format!(
                "{} players but {} margin sections",
                self.players.len(),
                self.margins.len()
            )));
        }
        let num_agents = self.system.agents.len();
        let control_dims = self
            .system
            .control_dims
            .clone()
            .unwrap_or_else(|| self.system.agents.iter().map(|a| a.input_dim()).collect());
        if control_dims.len() != self.players.len() {
            return Err(Error::Config(format!(
                "{} control dims for {} players",
                control_dims.len(),
                self.players.len()
            )));
        }
        let schedule = match &self.system.allocation {
            None => AllocationSchedule::identity(num_agents),
            Some(phases) => {
                let sorted = phases.windows(2).all(|w| w[0].from_step < w[1].from_step);
                if phases.is_empty() || phases[0].from_step != 0 || !sorted {
                    return Err(Error::Config(
                        "allocation phases must start at step 0 and be strictly increasing".into(),
                    ));
                }
                for phase in phases {
                    if phase.assignments.len() != num_agents {
                        return Err(Error::Config(format!(
                            "allocation phase at step {} lists {} agents, system has {num_agents}",
                            phase.from_step,
                            phase.assignments.len()
                        )));
                    }
                    for source in phase.assignments.iter().flatten() {
                        let dims = self
                            .system
                            .control_dims
                            .clone()
                            .unwrap_or_else(|| {
                                self.system.agents.iter().map(|a| a.input_dim()).collect()
                            });
                        if source.player >= dims.len() {
                            return Err(Error::Config(format!(
                                "allocation references player {} of {}",
                                source.player,
                                dims.len()
                            )));
                        }
                    }
                }
                AllocationSchedule::phased(
                    phases
                        .iter()
                        .map(|p| (p.from_step, p.assignments.clone()))
                        .collect(),
                )
            }
        };
        let system =
            MultiAgentSystem::new(self.system.agents.clone(), control_dims.clone(), self.system.dt, schedule);
        if self.initial_states.nominal.len() != system.state_dim() {
            return Err(Error::Config(format!(
                "initial state has dim {}, system expects {}",
                self.initial_states.nominal.len(),
                system.state_dim()
            )));
        }

        let players = self
            .players
            .iter()
            .zip(self.margins.iter())
            .map(|(p, m)| {
                let target = m.target.build(&system, MarginKind::Target)?;
                let failure = if m.failures.is_empty() {
                    margins::constant(MarginKind::Failure, margins::NO_FAILURE)
                } else {
                    margins::combine_max(
                        m.failures
                            .iter()
                            .map(|f| f.build(&system, MarginKind::Failure))
                            .collect::<Result<Vec<_>>>()?,
                    )
                };
                Ok(PlayerSpec {
                    name: p.name.clone(),
                    target: Arc::from(target),
                    failure: Arc::from(failure),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let init_controls = match &self.init_controls {
            None => control_dims.iter().map(|&m| DVector::zeros(m)).collect(),
            Some(raw) => {
                if raw.len() != control_dims.len()
                    || raw.iter().zip(&control_dims).any(|(u, &m)| u.len() != m)
                {
                    return Err(Error::Config("init_controls shape mismatch".into()));
                }
                raw.iter().map(|u| DVector::from_row_slice(u)).collect()
            }
        };

        Ok(Scenario {
            name: self.name.clone(),
            system,
            players,
            horizon: self.horizon,
            initial_state: DVector::from_row_slice(&self.initial_states.nominal),
            init_controls,
            pursuit_goals: vec![None; num_agents],
            pursuit_init: false,
            pursuit_standoff: 0.0,
            start_region: self.initial_states.start_region.clone(),
            geometry: self.geometry.clone(),
            solver_overrides: self.solver_overrides.clone(),
        })
    }
}

impl ScenarioFile {
    pub fn build(&self) -> Result<Scenario> {
        match self {
            ScenarioFile::OnePlayer(p) => one_player_reach_avoid(p),
            ScenarioFile::DefensiveDriving(p) => defensive_driving(p),
            ScenarioFile::TIntersection(p) => t_intersection(p),
            ScenarioFile::Custom(c) => c.build(),
        }
    }
}

/// Resolve a CLI scenario argument: a builtin id (`one-player`,
/// `defensive-driving`, `t-intersection`) or a path to a scenario JSON file.
pub fn load_scenario(spec: &str) -> Result<Scenario> {
    match spec {
        "one-player" | "one_player" => one_player_reach_avoid(&OnePlayerParams::default()),
        "defensive-driving" | "defensive_driving" => {
            defensive_driving(&DefensiveDrivingParams::default())
        }
        "t-intersection" | "t_intersection" => t_intersection(&TIntersectionParams::default()),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read scenario file '{path}': {e}"))
            })?;
            let file: ScenarioFile = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("invalid scenario file '{path}': {e}")))?;
            file.build()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_player_sign_conventions() {
        let scenario = one_player_reach_avoid(&OnePlayerParams::default()).unwrap();
        let player = &scenario.players[0];
        // Inside an obstacle: failure positive.
        let obstacle = OnePlayerParams::default().obstacles[0];
        let mut x = scenario.initial_state.clone();
        x[0] = obstacle.center[0];
        x[1] = obstacle.center[1];
        assert!(player.failure.value(&x, 0) > 0.0);
        // At the target center: target negative.
        x[0] = 0.0;
        x[1] = 0.0;
        assert!(player.target.value(&x, 0) < 0.0);
    }

    #[test]
    fn one_player_start_sampling_respects_region_and_obstacles() {
        let params = OnePlayerParams::default();
        let scenario = one_player_reach_avoid(&params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let x = scenario.sample_start(&mut rng).unwrap();
            let r = x[0].hypot(x[1]);
            assert!(r >= params.start_r_min - 1e-9 && r <= params.start_r_max + 1e-9);
            assert!(scenario.players[0].failure.value(&x, 0) <= 0.0);
        }
    }

    #[test]
    fn start_sampling_is_seed_deterministic() {
        let scenario = one_player_reach_avoid(&OnePlayerParams::default()).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(
            scenario.sample_start(&mut a).unwrap(),
            scenario.sample_start(&mut b).unwrap()
        );
    }

    #[test]
    fn defensive_driving_rejects_bad_t_react() {
        let mut params = DefensiveDrivingParams::default();
        params.t_react = params.horizon;
        assert!(defensive_driving(&params).is_err());
        params.t_react = 0;
        assert!(defensive_driving(&params).is_err());
    }

    #[test]
    fn defensive_driving_allocation_switches_at_t_react() {
        let params = DefensiveDrivingParams::default();
        let scenario = defensive_driving(&params).unwrap();
        let x = scenario.initial_state.clone();
        let us = vec![DVector::zeros(4), DVector::zeros(2)];
        let (_, bs) = scenario.system.linearize(&x, &us, params.t_react - 1);
        assert!(bs[1].amax() > 0.0);
        let (_, bs) = scenario.system.linearize(&x, &us, params.t_react);
        assert_eq!(bs[1].amax(), 0.0);
        assert!(bs[0].view((5, 2), (5, 2)).amax() > 0.0);
    }

    #[test]
    fn defensive_driving_oncoming_target_tracks_ego_safety() {
        let scenario = defensive_driving(&DefensiveDrivingParams::default()).unwrap();
        let onc = &scenario.players[1];
        // Far apart and on-road: ego safe, so the oncoming target is positive.
        assert!(onc.target.value(&scenario.initial_state, 0) > 0.0);
        // Collision: target nonpositive (achieved).
        let mut x = scenario.initial_state.clone();
        x[5] = x[0];
        x[6] = x[1];
        assert!(onc.target.value(&x, 0) <= 0.0);
    }

    #[test]
    fn t_intersection_dimensions_and_margins() {
        let scenario = t_intersection(&TIntersectionParams::default()).unwrap();
        assert_eq!(scenario.system.state_dim(), 12);
        assert_eq!(scenario.players.len(), 3);
        // All margins evaluate finitely at the initial state.
        for p in &scenario.players {
            assert!(p.target.value(&scenario.initial_state, 0).is_finite());
            assert!(p.failure.value(&scenario.initial_state, 0).is_finite());
        }
        // The pedestrian's failure only reacts to relative positions, not
        // lane geometry: moving it far off-road must not trigger failure.
        let mut x = scenario.initial_state.clone();
        x[10] = 100.0;
        x[11] = 100.0;
        assert!(scenario.players[2].failure.value(&x, 0) <= 0.0);
    }

    #[test]
    fn margins_finite_along_initial_rollouts() {
        for scenario in [
            one_player_reach_avoid(&OnePlayerParams::default()).unwrap(),
            defensive_driving(&DefensiveDrivingParams::default()).unwrap(),
            t_intersection(&TIntersectionParams::default()).unwrap(),
        ] {
            let strategy = scenario.initial_strategy().unwrap();
            for (t, x) in strategy.reference.states.iter().enumerate() {
                for p in &scenario.players {
                    assert!(p.target.value(x, t).is_finite());
                    assert!(p.failure.value(x, t).is_finite());
                }
            }
        }
    }

    #[test]
    fn custom_scenario_round_trip() {
        let json = r#"{
            "kind": "custom",
            "name": "toy",
            "system": {"dt": 0.1, "agents": [{"model": "pedestrian", "speed_bound": 2.0}]},
            "players": [{"name": "walker"}],
            "margins": [{
                "target": {"type": "disk_target", "agent": 0, "center": [0, 0], "radius": 0.5},
                "failures": [{"type": "disk_failure", "agent": 0, "center": [2, 0], "radius": 1.0}]
            }],
            "horizon": 20,
            "initial_states": {"nominal": [4.0, 0.5]}
        }"#;
        let file: ScenarioFile = serde_json::from_str(json).unwrap();
        let scenario = file.build().unwrap();
        assert_eq!(scenario.horizon, 20);
        assert_eq!(scenario.players[0].name, "walker");
        assert!(scenario.players[0].failure.value(&nalgebra::dvector![2.0, 0.0], 0) > 0.0);
    }

    #[test]
    fn malformed_configs_error_instead_of_panicking() {
        let cases = [
            // Empty max combinator.
            r#"{"kind":"custom","name":"x","system":{"dt":0.1,"agents":[{"model":"pedestrian","speed_bound":1.0}]},
                "players":[{"name":"p"}],
                "margins":[{"target":{"type":"max","parts":[]},"failures":[]}],
                "horizon":5,"initial_states":{"nominal":[0,0]}}"#,
            // Non-unit halfplane normal.
            r#"{"kind":"custom","name":"x","system":{"dt":0.1,"agents":[{"model":"pedestrian","speed_bound":1.0}]},
                "players":[{"name":"p"}],
                "margins":[{"target":{"type":"constant","value":1.0},
                            "failures":[{"type":"halfplane","agent":0,"normal":[2.0,0.0],"offset":0.0}]}],
                "horizon":5,"initial_states":{"nominal":[0,0]}}"#,
            // Negative disk radius.
            r#"{"kind":"custom","name":"x","system":{"dt":0.1,"agents":[{"model":"pedestrian","speed_bound":1.0}]},
                "players":[{"name":"p"}],
                "margins":[{"target":{"type":"disk_target","agent":0,"center":[0,0],"radius":-1.0},"failures":[]}],
                "horizon":5,"initial_states":{"nominal":[0,0]}}"#,
            // Allocation phases out of order.
            r#"{"kind":"custom","name":"x",
                "system":{"dt":0.1,"agents":[{"model":"pedestrian","speed_bound":1.0}],
                          "allocation":[{"from_step":5,"assignments":[{"player":0,"offset":0}]},
                                        {"from_step":1,"assignments":[{"player":0,"offset":0}]}]},
                "players":[{"name":"p"}],
                "margins":[{"target":{"type":"constant","value":1.0},"failures":[]}],
                "horizon":5,"initial_states":{"nominal":[0,0]}}"#,
        ];
        for case in cases {
            let file: ScenarioFile = serde_json::from_str(case).unwrap();
            assert!(matches!(file.build(), Err(crate::Error::Config(_))), "{case}");
        }
    }

    #[test]
    fn load_scenario_reports_missing_path() {
        let msg = match load_scenario("/nonexistent/path.json") {
            Err(e) => format!("{e}"),
            Ok(_) => panic!("expected an error"),
        };
        assert!(msg.contains("/nonexistent/path.json"), "{msg}");
    }

    #[test]
    fn truncation_shifts_margin_time() {
        let params = DefensiveDrivingParams::default();
        let scenario = defensive_driving(&params).unwrap();
        let sub = scenario.truncate(params.t_react + 1, scenario.initial_state.clone());
        assert_eq!(sub.horizon, params.horizon - params.t_react - 1);
        // In the truncated problem the post-t_react constraints are active
        // from local step 0: push the oncoming car off-road and the ego's
        // failure margin must see it immediately.
        let mut x = scenario.initial_state.clone();
        x[6] = params.road_width + 2.0;
        assert!(scenario.players[0].failure.value(&x, 0) <= 0.0);
        assert!(sub.players[0].failure.value(&x, 0) > 0.0);
    }
}
