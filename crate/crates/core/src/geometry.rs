//! Object footprints and candidate contact points.
//!
//! Footprints live in the object frame with their area centroid at the
//! origin. Candidate contact points are generated once per episode by
//! subdividing the boundary into equal segments no narrower than `w_min`
//! and placing a candidate at each segment center, pushing along the inward
//! boundary normal.

use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use thiserror::Error;

use crate::math::{point_segment_distance, wrap_angle, Pose, Vec2};

/// Slack used when dividing an edge length by the minimum segment width so
/// that exact multiples are not lost to rounding.
const SUBDIVISION_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("footprint has zero area")]
    DegenerateFootprint,
    #[error("polygon edges {0} and {1} intersect")]
    SelfIntersecting(usize, usize),
    #[error("circle radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("minimum segment width must be positive and finite, got {0}")]
    InvalidSegmentWidth(f64),
    #[error("no boundary segment is at least {w_min} m long")]
    NoCandidates { w_min: f64 },
}

/// Shape of an object or obstacle in its own frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Counter-clockwise, simple, centered on its area centroid.
    Polygon(Vec<Vec2>),
    Circle(f64),
}

/// Result of a nearest-boundary query in the footprint frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryQuery {
    pub point: Vec2,
    /// Negative inside the footprint.
    pub signed_distance: f64,
    pub outward_normal: Vec2,
}

/// Validated object footprint.
#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    shape: Shape,
}

impl Footprint {
    /// Builds a polygon footprint, recentered so its area centroid is the
    /// origin and reoriented counter-clockwise.
    pub fn polygon(vertices: Vec<Vec2>) -> Result<Self, GeometryError> {
        Self::polygon_with_centroid(vertices).map(|(fp, _)| fp)
    }

    /// Like [`Footprint::polygon`] but also returns the centroid of the input
    /// coordinates, i.e. the pose translation that puts the footprint back
    /// where the caller drew it.
    pub fn polygon_with_centroid(mut vertices: Vec<Vec2>) -> Result<(Self, Vec2), GeometryError> {
        vertices.dedup_by(|a, b| a.distance(*b) < 1e-12);
        if vertices.len() > 1 && vertices[0].distance(vertices[vertices.len() - 1]) < 1e-12 {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        if vertices.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
            return Err(GeometryError::DegenerateFootprint);
        }
        let area = signed_area(&vertices);
        if area.abs() < 1e-12 {
            return Err(GeometryError::DegenerateFootprint);
        }
        if area < 0.0 {
            vertices.reverse();
        }
        check_simple(&vertices)?;
        let centroid = polygon_centroid(&vertices);
        for v in &mut vertices {
            *v -= centroid;
        }
        Ok((Self { shape: Shape::Polygon(vertices) }, centroid))
    }

    pub fn circle(radius: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GeometryError::InvalidRadius(radius));
        }
        Ok(Self { shape: Shape::Circle(radius) })
    }

    /// Axis-aligned `width x height` rectangle.
    pub fn rectangle(width: f64, height: f64) -> Result<Self, GeometryError> {
        let (hw, hh) = (width / 2.0, height / 2.0);
        Self::polygon(alloc::vec![
            Vec2::new(-hw, -hh),
            Vec2::new(hw, -hh),
            Vec2::new(hw, hh),
            Vec2::new(-hw, hh),
        ])
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn is_circle(&self) -> bool {
        matches!(self.shape, Shape::Circle(_))
    }

    pub fn area(&self) -> f64 {
        match &self.shape {
            Shape::Polygon(v) => signed_area(v),
            Shape::Circle(r) => PI * r * r,
        }
    }

    pub fn perimeter(&self) -> f64 {
        match &self.shape {
            Shape::Polygon(v) => edges(v).map(|(a, b)| a.distance(b)).sum(),
            Shape::Circle(r) => TAU * r,
        }
    }

    /// Largest distance from the origin to any boundary point.
    pub fn circumradius(&self) -> f64 {
        match &self.shape {
            Shape::Polygon(v) => v.iter().map(|p| p.norm()).fold(0.0, f64::max),
            Shape::Circle(r) => *r,
        }
    }

    /// Axis-aligned bounding box in the footprint frame as `(min, max)`.
    pub fn local_bounds(&self) -> (Vec2, Vec2) {
        match &self.shape {
            Shape::Polygon(v) => v.iter().fold(
                (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
                |(lo, hi), p| (Vec2::new(lo.x.min(p.x), lo.y.min(p.y)), Vec2::new(hi.x.max(p.x), hi.y.max(p.y))),
            ),
            Shape::Circle(r) => (Vec2::new(-r, -r), Vec2::new(*r, *r)),
        }
    }

    /// World-frame bounding box of the footprint placed at `pose`.
    pub fn world_bounds(&self, pose: &Pose) -> (Vec2, Vec2) {
        let r = self.circumradius();
        (Vec2::new(pose.x - r, pose.y - r), Vec2::new(pose.x + r, pose.y + r))
    }

    pub fn contains(&self, local: Vec2) -> bool {
        match &self.shape {
            Shape::Polygon(v) => point_in_polygon(local, v),
            Shape::Circle(r) => local.norm() <= *r,
        }
    }

    /// Nearest boundary point, signed distance and outward normal for a
    /// point given in the footprint frame.
    pub fn closest_boundary(&self, local: Vec2) -> BoundaryQuery {
        match &self.shape {
            Shape::Circle(r) => {
                let n = local.normalized().unwrap_or(Vec2::new(1.0, 0.0));
                BoundaryQuery { point: n * *r, signed_distance: local.norm() - r, outward_normal: n }
            }
            Shape::Polygon(v) => {
                let mut best = (f64::INFINITY, Vec2::ZERO, Vec2::ZERO);
                for (a, b) in edges(v) {
                    let (d, q) = point_segment_distance(local, a, b);
                    if d < best.0 {
                        // Edge normal, used when the point sits on the boundary.
                        let edge_out = (b - a).perp().normalized().map(|n| -n).unwrap_or(Vec2::ZERO);
                        best = (d, q, edge_out);
                    }
                }
                let (d, q, edge_out) = best;
                let inside = point_in_polygon(local, v);
                let normal = if d < 1e-12 {
                    edge_out
                } else if inside {
                    (q - local) * (1.0 / d)
                } else {
                    (local - q) * (1.0 / d)
                };
                BoundaryQuery {
                    point: q,
                    signed_distance: if inside { -d } else { d },
                    outward_normal: normal,
                }
            }
        }
    }

    pub fn signed_distance(&self, local: Vec2) -> f64 {
        self.closest_boundary(local).signed_distance
    }

    /// World-frame nearest-boundary query for a footprint placed at `pose`.
    pub fn closest_boundary_world(&self, pose: &Pose, world: Vec2) -> BoundaryQuery {
        let q = self.closest_boundary(pose.inverse_transform_point(world));
        BoundaryQuery {
            point: pose.transform_point(q.point),
            signed_distance: q.signed_distance,
            outward_normal: q.outward_normal.rotated(pose.theta),
        }
    }

    /// Reflex vertices of a polygon (empty for circles).
    pub fn concave_vertices(&self) -> Vec<Vec2> {
        match &self.shape {
            Shape::Circle(_) => Vec::new(),
            Shape::Polygon(v) => {
                let n = v.len();
                (0..n)
                    .filter(|&i| {
                        let prev = v[(i + n - 1) % n];
                        let next = v[(i + 1) % n];
                        (v[i] - prev).cross(next - v[i]) < -1e-12
                    })
                    .map(|i| v[i])
                    .collect()
            }
        }
    }

    /// Boundary points spaced at most `spacing` apart, vertices included.
    pub fn boundary_samples(&self, spacing: f64) -> Vec<Vec2> {
        let spacing = spacing.max(1e-3);
        match &self.shape {
            Shape::Circle(r) => {
                let k = ((TAU * r) / spacing).ceil().max(8.0) as usize;
                (0..k).map(|i| Vec2::from_angle(TAU * i as f64 / k as f64) * *r).collect()
            }
            Shape::Polygon(v) => {
                let mut out = Vec::new();
                for (a, b) in edges(v) {
                    let k = (a.distance(b) / spacing).ceil().max(1.0) as usize;
                    out.extend((0..k).map(|i| a.lerp(b, i as f64 / k as f64)));
                }
                out
            }
        }
    }
}

/// A candidate contact point in the object frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPoint {
    pub position: Vec2,
    /// Inward boundary normal, radians in the object frame.
    pub pushing_direction: f64,
    /// Torque about the object center for a unit push along
    /// `pushing_direction`, counter-clockwise positive.
    pub unit_torque: f64,
    /// Within two robot radii of a concave vertex.
    pub concave_flag: bool,
}

impl ContactPoint {
    pub fn inward_normal(&self) -> Vec2 {
        Vec2::from_angle(self.pushing_direction)
    }

    /// Robot center when its disc touches the boundary at this point.
    pub fn standoff(&self, robot_radius: f64) -> Vec2 {
        self.position - self.inward_normal() * robot_radius
    }
}

/// The finite pool of contact points a selector chooses from. Indices are
/// stable for the lifetime of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub points: Vec<ContactPoint>,
    pub source_footprint: Footprint,
    /// Per polygon edge (or the single circle arc): the segment width used,
    /// `None` where the edge was too short to host a candidate.
    pub segment_widths: Vec<Option<f64>>,
    pub w_min: f64,
    pub robot_radius: f64,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&ContactPoint> {
        self.points.get(index)
    }
}

/// A candidate transformed into the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldContact {
    pub position: Vec2,
    pub direction: f64,
    pub unit_torque: f64,
}

impl WorldContact {
    pub fn direction_vector(&self) -> Vec2 {
        Vec2::from_angle(self.direction)
    }
}

/// Discretizes the footprint boundary into candidate contact points.
pub fn generate_contact_points(
    footprint: &Footprint,
    w_min: f64,
    robot_radius: f64,
) -> Result<CandidateSet, GeometryError> {
    if !(w_min > 0.0 && w_min.is_finite()) {
        return Err(GeometryError::InvalidSegmentWidth(w_min));
    }
    let robot_radius = robot_radius.max(0.0);
    let (points, segment_widths) = match footprint.shape() {
        Shape::Circle(r) => circle_candidates(*r, w_min),
        Shape::Polygon(v) => polygon_candidates(footprint, v, w_min, robot_radius),
    };
    if points.is_empty() {
        return Err(GeometryError::NoCandidates { w_min });
    }
    Ok(CandidateSet {
        points,
        source_footprint: footprint.clone(),
        segment_widths,
        w_min,
        robot_radius,
    })
}

fn circle_candidates(radius: f64, w_min: f64) -> (Vec<ContactPoint>, Vec<Option<f64>>) {
    let k = ((TAU * radius) / w_min + SUBDIVISION_SLACK).floor() as usize;
    if k == 0 {
        return (Vec::new(), alloc::vec![None]);
    }
    let points = (0..k)
        .map(|j| {
            let a = TAU * j as f64 / k as f64;
            ContactPoint {
                position: Vec2::from_angle(a) * radius,
                pushing_direction: wrap_angle(a + PI),
                unit_torque: 0.0,
                concave_flag: false,
            }
        })
        .collect();
    (points, alloc::vec![Some(TAU * radius / k as f64)])
}

fn polygon_candidates(
    footprint: &Footprint,
    vertices: &[Vec2],
    w_min: f64,
    robot_radius: f64,
) -> (Vec<ContactPoint>, Vec<Option<f64>>) {
    let concave = footprint.concave_vertices();
    let is_concave = |p: Vec2| concave.iter().any(|c| c.distance(p) < 1e-12);
    let blocked = |pos: Vec2, inward: Vec2| {
        robot_radius > 0.0
            && footprint.signed_distance(pos - inward * robot_radius) < robot_radius - 1e-9
    };

    let mut points: Vec<ContactPoint> = Vec::new();
    let mut widths = Vec::with_capacity(vertices.len());
    for (a, b) in edges(vertices) {
        let length = a.distance(b);
        if length < w_min {
            widths.push(None);
            continue;
        }
        let k = (length / w_min + SUBDIVISION_SLACK).floor() as usize;
        let w_segment = length / k as f64;
        widths.push(Some(w_segment));
        let dir = (b - a) * (1.0 / length);
        let inward = dir.perp();
        let pushing_direction = inward.angle();
        for j in 0..k {
            let mut s = (j as f64 + 0.5) * w_segment;
            if blocked(a + dir * s, inward) {
                // Slide away from the concave corner until the robot disc clears it.
                if is_concave(a) && s < robot_radius {
                    s = robot_radius;
                }
                if is_concave(b) && length - s < robot_radius {
                    s = length - robot_radius;
                }
                if !(0.0..=length).contains(&s) || blocked(a + dir * s, inward) {
                    continue;
                }
            }
            let position = a + dir * s;
            if points.iter().any(|p| p.position.distance(position) < w_min / 2.0) {
                continue;
            }
            let concave_flag = concave.iter().any(|c| c.distance(position) < 2.0 * robot_radius);
            points.push(ContactPoint {
                position,
                pushing_direction,
                unit_torque: position.cross(inward),
                concave_flag,
            });
        }
    }
    (points, widths)
}

/// Signed distance from a world point to the footprint placed at `pose`,
/// negative inside.
pub fn distance_to_boundary(footprint: &Footprint, world_point: Vec2, pose: &Pose) -> f64 {
    footprint.signed_distance(pose.inverse_transform_point(world_point))
}

/// Transforms every candidate into the world frame, preserving order.
pub fn to_world(candidates: &CandidateSet, pose: &Pose) -> Vec<WorldContact> {
    candidates
        .points
        .iter()
        .map(|c| WorldContact {
            position: pose.transform_point(c.position),
            direction: pose.transform_angle(c.pushing_direction),
            unit_torque: c.unit_torque,
        })
        .collect()
}

fn edges(v: &[Vec2]) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
    (0..v.len()).map(move |i| (v[i], v[(i + 1) % v.len()]))
}

fn signed_area(v: &[Vec2]) -> f64 {
    edges(v).map(|(a, b)| a.cross(b)).sum::<f64>() / 2.0
}

fn polygon_centroid(v: &[Vec2]) -> Vec2 {
    let a = signed_area(v);
    let (mut cx, mut cy) = (0.0, 0.0);
    for (p, q) in edges(v) {
        let w = p.cross(q);
        cx += (p.x + q.x) * w;
        cy += (p.y + q.y) * w;
    }
    Vec2::new(cx / (6.0 * a), cy / (6.0 * a))
}

fn point_in_polygon(p: Vec2, v: &[Vec2]) -> bool {
    let mut inside = false;
    for (a, b) in edges(v) {
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let d1 = (p2 - p1).cross(q1 - p1);
    let d2 = (p2 - p1).cross(q2 - p1);
    let d3 = (q2 - q1).cross(p1 - q1);
    let d4 = (q2 - q1).cross(p2 - q1);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |a: Vec2, b: Vec2, p: Vec2, d: f64| {
        d.abs() < 1e-12 && p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
    };
    on(p1, p2, q1, d1) || on(p1, p2, q2, d2) || on(q1, q2, p1, d3) || on(q1, q2, p2, d4)
}

fn check_simple(v: &[Vec2]) -> Result<(), GeometryError> {
    let n = v.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]) {
                return Err(GeometryError::SelfIntersecting(i, j));
            }
        }
    }
    Ok(())
}
