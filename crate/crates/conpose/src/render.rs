//! Standalone SVG rendering of an episode over its scene.

use std::fmt::Write as _;
use std::path::Path;

use conpose_core::geometry::{generate_contact_points, to_world, Footprint, Shape};
use conpose_core::math::{Pose, Vec2};
use conpose_core::planner::Rect;
use conpose_core::sim::EpisodeRecord;

use crate::scenario::Scenario;

const PX_PER_M: f64 = 40.0;
const ROBOT_COLORS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Canvas {
    arena: Rect,
    out: String,
}

impl Canvas {
    fn x(&self, p: Vec2) -> f64 {
        (p.x - self.arena.min.x) * PX_PER_M
    }

    // SVG y grows downward
    fn y(&self, p: Vec2) -> f64 {
        (self.arena.max.y - p.y) * PX_PER_M
    }

    fn pt(&self, p: Vec2) -> String {
        format!("{:.2},{:.2}", self.x(p), self.y(p))
    }

    fn points(&self, ps: impl IntoIterator<Item = Vec2>) -> String {
        ps.into_iter().map(|p| self.pt(p)).collect::<Vec<_>>().join(" ")
    }

    fn footprint(&mut self, fp: &Footprint, pose: &Pose, attrs: &str) {
        match fp.shape() {
            Shape::Circle(r) => {
                let c = pose.position();
                let _ = writeln!(
                    self.out,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" {attrs}/>"#,
                    self.x(c),
                    self.y(c),
                    r * PX_PER_M
                );
            }
            Shape::Polygon(vs) => {
                let pts = self.points(vs.iter().map(|v| pose.transform_point(*v)));
                let _ = writeln!(self.out, r#"<polygon points="{pts}" {attrs}/>"#);
            }
        }
    }
}

/// Draws the arena, obstacles, planned path, key waypoints, numbered
/// candidates at the start pose, the object trajectory, one polyline per
/// robot and the final poses.
pub fn render_svg(record: &EpisodeRecord, scenario: &Scenario, w_min: f64, robot_radius: f64) -> String {
    let arena = scenario.arena;
    let mut c = Canvas { arena, out: String::new() };
    let (w, h) = (arena.width() * PX_PER_M, arena.height() * PX_PER_M);
    let _ = writeln!(
        c.out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#
    );
    let _ = writeln!(c.out, "<title>{}</title>", escape(&format!("{} ({})", scenario.name, scenario.shape)));
    let _ = writeln!(
        c.out,
        "<rect id=\"arena\" x=\"0\" y=\"0\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"#fafafa\" stroke=\"#000\" stroke-width=\"2\"/>"
    );

    c.out.push_str("<g id=\"obstacles\">\n");
    for o in &scenario.obstacles {
        c.footprint(&o.footprint, &o.pose, "fill=\"#7f7f7f\" stroke=\"#333\"");
    }
    c.out.push_str("</g>\n");

    c.out.push_str("<g id=\"planned-path\" fill=\"#1f77b4\">\n");
    for p in &record.planned_path {
        let _ = writeln!(c.out, r#"<circle cx="{:.2}" cy="{:.2}" r="2"/>"#, c.x(*p), c.y(*p));
    }
    c.out.push_str("</g>\n");

    c.out.push_str("<g id=\"key-waypoints\" fill=\"#ff7f0e\" stroke=\"#000\">\n");
    let d = 6.0;
    for p in &record.key_waypoints {
        let (x, y) = (c.x(*p), c.y(*p));
        let _ = writeln!(
            c.out,
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}"/>"#,
            x,
            y - d,
            x + d,
            y,
            x,
            y + d,
            x - d,
            y
        );
    }
    c.out.push_str("</g>\n");

    let goal = scenario.goal;
    let _ = writeln!(
        c.out,
        "<circle id=\"goal\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" fill=\"none\" stroke=\"#2ca02c\" stroke-dasharray=\"4 3\"/>",
        c.x(goal),
        c.y(goal),
        0.5 * PX_PER_M
    );

    c.footprint(&scenario.footprint, &scenario.start, "id=\"object-start\" fill=\"#c6dbef\" stroke=\"#1f77b4\"");
    c.out.push_str("<g id=\"candidates\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"middle\">\n");
    if let Ok(set) = generate_contact_points(&scenario.footprint, w_min, robot_radius) {
        for (i, wc) in to_world(&set, &scenario.start).iter().enumerate() {
            let (x, y) = (c.x(wc.position), c.y(wc.position));
            let _ = writeln!(
                c.out,
                "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"6\" fill=\"#fff\" stroke=\"#000\"/><text x=\"{x:.2}\" y=\"{:.2}\">{i}</text>",
                y + 3.0
            );
        }
    }
    c.out.push_str("</g>\n");

    if !record.trajectory.is_empty() {
        let obj = c.points(record.trajectory.iter().map(|s| s.object.position()));
        let _ = writeln!(
            c.out,
            "<polyline id=\"object-trajectory\" class=\"object\" points=\"{obj}\" fill=\"none\" stroke=\"#000\" stroke-width=\"2\"/>"
        );
        c.out.push_str("<g id=\"robot-trajectories\">\n");
        for r in 0..record.final_robots.len() {
            let pts = c.points(record.trajectory.iter().filter_map(|s| s.robots.get(r)).map(|p| p.position()));
            let _ = writeln!(
                c.out,
                r#"<polyline class="robot" data-robot="{r}" points="{pts}" fill="none" stroke="{}" stroke-width="1"/>"#,
                ROBOT_COLORS[r % ROBOT_COLORS.len()]
            );
        }
        c.out.push_str("</g>\n");
    }

    c.out.push_str("<g id=\"final-poses\">\n");
    c.footprint(&scenario.footprint, &record.final_object, "fill=\"#fdd0a2\" fill-opacity=\"0.8\" stroke=\"#e6550d\"");
    for (r, pose) in record.final_robots.iter().enumerate() {
        let p = pose.position();
        let tip = p + Vec2::from_angle(pose.theta) * robot_radius * 1.5;
        let color = ROBOT_COLORS[r % ROBOT_COLORS.len()];
        let _ = writeln!(
            c.out,
            r##"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="{color}" stroke="#000"/><line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#000"/>"##,
            c.x(p),
            c.y(p),
            robot_radius * PX_PER_M,
            c.x(p),
            c.y(p),
            c.x(tip),
            c.y(tip)
        );
    }
    c.out.push_str("</g>\n</svg>\n");
    c.out
}

pub fn render_episode(
    record: &EpisodeRecord,
    scenario: &Scenario,
    w_min: f64,
    robot_radius: f64,
    path: impl AsRef<Path>,
) -> std::io::Result<()> {
    std::fs::write(path, render_svg(record, scenario, w_min, robot_radius))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
