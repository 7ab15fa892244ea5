//! Deterministic SVG rendering of planar trajectories with target/failure
//! geometry overlays. Same inputs produce byte-identical output.

use std::fmt::Write as _;

use crate::dynamics::MultiAgentSystem;
use crate::scenarios::{GeomRole, GeometryElement};
use crate::types::Trajectory;

const AGENT_COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn fmt(v: f64) -> String {
    // Fixed precision keeps the output stable and compact.
    format!("{v:.3}")
}

struct Bounds {
    min_x: f64,
    min_y: f64,
    max_x: f64,
    max_y: f64,
}

impl Bounds {
    fn new() -> Bounds {
        Bounds {
            min_x: f64::INFINITY,
            min_y: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            max_y: f64::NEG_INFINITY,
        }
    }

    fn include(&mut self, x: f64, y: f64) {
        self.min_x = self.min_x.min(x);
        self.min_y = self.min_y.min(y);
        self.max_x = self.max_x.max(x);
        self.max_y = self.max_y.max(y);
    }

    fn pad(&mut self, m: f64) {
        if self.min_x > self.max_x {
            // Nothing included; pick a unit box.
            *self = Bounds { min_x: -1.0, min_y: -1.0, max_x: 1.0, max_y: 1.0 };
        }
        self.min_x -= m;
        self.min_y -= m;
        self.max_x += m;
        self.max_y += m;
    }
}

fn role_style(role: GeomRole) -> (&'static str, &'static str) {
    // (fill, stroke)
    match role {
        GeomRole::Target => ("#e377c2", "#b05098"),
        GeomRole::Failure => ("#444444", "#222222"),
        GeomRole::Guide => ("none", "#999999"),
    }
}

/// One close approach: time step and the two agents' positions there.
type CloseApproach = (usize, (f64, f64), (f64, f64));

/// Pairwise close approaches: for each agent pair, the step of minimum
/// distance plus the positions there. Only pairs closer than `threshold`
/// are reported.
fn close_approaches(
    system: &MultiAgentSystem,
    traj: &Trajectory,
    threshold: f64,
) -> Vec<CloseApproach> {
    let n = system.num_agents();
    let mut out = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            let (ax, ay) = system.position_indices(a);
            let (bx, by) = system.position_indices(b);
            let mut best = (0usize, f64::INFINITY);
            for t in 0..=traj.horizon() {
                let x = &traj.states[t];
                let d = (x[ax] - x[bx]).hypot(x[ay] - x[by]);
                if d < best.1 {
                    best = (t, d);
                }
            }
            if best.1 <= threshold {
                let x = &traj.states[best.0];
                out.push((best.0, (x[ax], x[ay]), (x[bx], x[by])));
            }
        }
    }
    out
}

/// Render trajectories over scenario geometry as a standalone SVG document.
/// Missing geometry simply renders paths alone. Multi-agent plots annotate
/// the closest approach between each pair of agents with a dashed segment
/// and the time stamp.
pub fn render_svg(
    system: &MultiAgentSystem,
    geometry: &[GeometryElement],
    trajectories: &[&Trajectory],
) -> String {
    let mut bounds = Bounds::new();
    for g in geometry {
        match *g {
            GeometryElement::Circle { cx, cy, r, .. } => {
                bounds.include(cx - r, cy - r);
                bounds.include(cx + r, cy + r);
            }
            GeometryElement::Rect { cx, cy, half_w, half_h, .. } => {
                bounds.include(cx - half_w, cy - half_h);
                bounds.include(cx + half_w, cy + half_h);
            }
            GeometryElement::Segment { x1, y1, x2, y2, .. } => {
                bounds.include(x1, y1);
                bounds.include(x2, y2);
            }
        }
    }
    for traj in trajectories {
        for agent in 0..system.num_agents() {
            let (ix, iy) = system.position_indices(agent);
            for x in &traj.states {
                bounds.include(x[ix], x[iy]);
            }
        }
    }
    bounds.pad(1.0);

    let scale = 40.0;
    let width = (bounds.max_x - bounds.min_x) * scale;
    let height = (bounds.max_y - bounds.min_y) * scale;
    // World-to-screen: y flips so +y points up.
    let sx = |x: f64| (x - bounds.min_x) * scale;
    let sy = |y: f64| (bounds.max_y - y) * scale;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">",
        fmt(width),
        fmt(height),
        fmt(width),
        fmt(height)
    );
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    for g in geometry {
        match *g {
            GeometryElement::Circle { cx, cy, r, role } => {
                let (fill, stroke) = role_style(role);
                let _ = writeln!(
                    svg,
                    "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"{}\" fill-opacity=\"0.55\" stroke=\"{}\"/>",
                    fmt(sx(cx)),
                    fmt(sy(cy)),
                    fmt(r * scale),
                    fill,
                    stroke
                );
            }
            GeometryElement::Rect { cx, cy, half_w, half_h, role } => {
                let (fill, stroke) = role_style(role);
                let _ = writeln!(
                    svg,
                    "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" fill-opacity=\"0.45\" stroke=\"{}\"/>",
                    fmt(sx(cx - half_w)),
                    fmt(sy(cy + half_h)),
                    fmt(2.0 * half_w * scale),
                    fmt(2.0 * half_h * scale),
                    fill,
                    stroke
                );
            }
            GeometryElement::Segment { x1, y1, x2, y2, role } => {
                let (_, stroke) = role_style(role);
                let _ = writeln!(
                    svg,
                    "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"2\"/>",
                    fmt(sx(x1)),
                    fmt(sy(y1)),
                    fmt(sx(x2)),
                    fmt(sy(y2)),
                    stroke
                );
            }
        }
    }

    for traj in trajectories {
        for agent in 0..system.num_agents() {
            let (ix, iy) = system.position_indices(agent);
            let color = AGENT_COLORS[agent % AGENT_COLORS.len()];
            let points: Vec<String> = traj
                .states
                .iter()
                .map(|x| format!("{},{}", fmt(sx(x[ix])), fmt(sy(x[iy]))))
                .collect();
            let _ = writeln!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" stroke-opacity=\"0.8\"/>",
                points.join(" "),
                color
            );
            // Start marker.
            if let Some(x) = traj.states.first() {
                let _ = writeln!(
                    svg,
                    "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{}\"/>",
                    fmt(sx(x[ix])),
                    fmt(sy(x[iy])),
                    color
                );
            }
        }
    }

    if system.num_agents() > 1 && trajectories.len() == 1 {
        for (t, (ax, ay), (bx, by)) in close_approaches(system, trajectories[0], 8.0) {
            let _ = writeln!(
                svg,
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#555555\" stroke-width=\"1\" stroke-dasharray=\"4 3\"/>",
                fmt(sx(ax)),
                fmt(sy(ay)),
                fmt(sx(bx)),
                fmt(sy(by))
            );
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"#333333\">t={}</text>",
                fmt(sx((ax + bx) / 2.0) + 4.0),
                fmt(sy((ay + by) / 2.0) - 4.0),
                t
            );
        }
    }

    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::AgentModel;
    use crate::scenarios::{t_intersection, TIntersectionParams};
    use nalgebra::DVector;

    #[test]
    fn empty_trajectory_list_still_renders_geometry() {
        let system = MultiAgentSystem::homogeneous(
            vec![AgentModel::Pedestrian { speed_bound: 1.0 }],
            0.1,
        );
        let geometry = vec![GeometryElement::Circle {
            cx: 0.0,
            cy: 0.0,
            r: 1.0,
            role: GeomRole::Target,
        }];
        let svg = render_svg(&system, &geometry, &[]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("<circle"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn output_is_byte_identical() {
        let scenario = t_intersection(&TIntersectionParams::default()).unwrap();
        let traj = scenario.initial_strategy().unwrap().reference;
        let a = render_svg(&scenario.system, &scenario.geometry, &[&traj]);
        let b = render_svg(&scenario.system, &scenario.geometry, &[&traj]);
        assert_eq!(a, b);
    }

    #[test]
    fn multi_agent_plot_annotates_close_approaches() {
        let scenario = t_intersection(&TIntersectionParams::default()).unwrap();
        let traj = scenario.initial_strategy().unwrap().reference;
        let svg = render_svg(&scenario.system, &scenario.geometry, &[&traj]);
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.contains("t="));
    }

    #[test]
    fn hundred_trajectory_overlay_is_quick() {
        let system = MultiAgentSystem::homogeneous(
            vec![AgentModel::Pedestrian { speed_bound: 1.0 }],
            0.1,
        );
        let trajs: Vec<Trajectory> = (0..100)
            .map(|i| {
                Trajectory::constant(
                    DVector::from_row_slice(&[i as f64 * 0.1, 0.0]),
                    &[2],
                    100,
                    0.1,
                )
            })
            .collect();
        let refs: Vec<&Trajectory> = trajs.iter().collect();
        let begin = std::time::Instant::now();
        let svg = render_svg(&system, &[], &refs);
        assert!(begin.elapsed().as_secs_f64() < 5.0);
        assert!(svg.len() > 1000);
    }
}
