//! Robot to contact-point matching and switch planning.
//!
//! Robots and the contact points of a new configuration are projected onto
//! a circle around the object. A split line through the center is chosen so
//! that both half circles hold as many robots as contact points; numbering
//! both sets clockwise from the split then pairs them without any robot
//! having to overtake another, and every pair lies in the same half circle.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use thiserror::Error;

use crate::geometry::{CandidateSet, Footprint};
use crate::math::{polyline_length, wrap_angle_positive, Pose, Vec2};
use crate::planner::{astar_cells, rdp_indices, Costmap, PlacedFootprint, Rect};
use crate::selection::PushingConfiguration;

pub const LOCAL_RESOLUTION: f64 = 0.05;
/// Robot centers within this distance of their target need no path.
pub const PLACED_TOLERANCE: f64 = 0.05;
const SPLIT_JITTER: f64 = 1e-6;
/// Width of the soft-cost band that keeps switch paths off the object.
const HUG_BAND: f64 = 0.15;
const HUG_COST: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssignmentError {
    #[error("{robots} robots cannot be matched to {points} contact points")]
    CountMismatch { robots: usize, points: usize },
    #[error("nothing to match")]
    Empty,
    #[error("robot {0} sits on the object center")]
    RobotAtCenter(usize),
    #[error("no split angle balances robots and contact points")]
    NoValidSplit,
    #[error("robot {0} has no local path to its contact point")]
    LocalNoPath(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchingResult {
    /// `assignment[robot]` is the position in the contact-point list.
    pub assignment: Vec<usize>,
    /// Split angle in `[0, π)`.
    pub split_angle: f64,
    /// Angular travel of each robot on the projection circle, radians.
    pub arcs: Vec<f64>,
    /// Robots in clockwise order starting at the split.
    pub clockwise_order: Vec<usize>,
    pub robot_angles: Vec<f64>,
    pub point_angles: Vec<f64>,
}

impl MatchingResult {
    pub fn total_arc(&self) -> f64 {
        self.arcs.iter().sum()
    }
}

/// Clockwise angular distance from `alpha` to `angle`, in `[0, 2π)`.
fn clockwise_key(alpha: f64, angle: f64) -> f64 {
    wrap_angle_positive(alpha - angle)
}

fn in_upper_half(alpha: f64, angle: f64) -> bool {
    wrap_angle_positive(angle - alpha) < PI
}

/// Candidate split angles: midpoints between consecutive distinct
/// projections folded onto `[0, π)`.
fn split_candidates(angles: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut folded: Vec<f64> = angles.map(|a| a % PI).collect();
    folded.sort_by(f64::total_cmp);
    folded.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    match folded.len() {
        0 => vec![0.0],
        1 => vec![(folded[0] + PI / 2.0) % PI],
        n => {
            let mut out: Vec<f64> = folded.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
            out.push(((folded[n - 1] + folded[0] + PI) / 2.0) % PI);
            out.sort_by(f64::total_cmp);
            out
        }
    }
}

fn try_split(robot_angles: &[f64], point_angles: &[f64]) -> Option<MatchingResult> {
    let n = robot_angles.len();
    let mut best: Option<MatchingResult> = None;
    for alpha in split_candidates(robot_angles.iter().chain(point_angles).copied()) {
        let robots_up = robot_angles.iter().filter(|&&a| in_upper_half(alpha, a)).count();
        let points_up = point_angles.iter().filter(|&&a| in_upper_half(alpha, a)).count();
        if robots_up != points_up {
            continue;
        }
        let mut robots: Vec<usize> = (0..n).collect();
        robots.sort_by(|&a, &b| {
            clockwise_key(alpha, robot_angles[a]).total_cmp(&clockwise_key(alpha, robot_angles[b])).then(a.cmp(&b))
        });
        let mut points: Vec<usize> = (0..n).collect();
        points.sort_by(|&a, &b| {
            clockwise_key(alpha, point_angles[a]).total_cmp(&clockwise_key(alpha, point_angles[b])).then(a.cmp(&b))
        });
        let mut assignment = vec![0; n];
        let mut arcs = vec![0.0; n];
        for (&r, &p) in robots.iter().zip(&points) {
            assignment[r] = p;
            arcs[r] = (clockwise_key(alpha, robot_angles[r]) - clockwise_key(alpha, point_angles[p])).abs();
        }
        let candidate = MatchingResult {
            assignment,
            split_angle: alpha,
            arcs,
            clockwise_order: robots,
            robot_angles: robot_angles.to_vec(),
            point_angles: point_angles.to_vec(),
        };
        // Among balanced splits keep the one with least total travel.
        if best.as_ref().is_none_or(|b| candidate.total_arc() < b.total_arc() - 1e-12) {
            best = Some(candidate);
        }
    }
    best
}

/// Matches robots to contact points by circle projection about `object_center`.
pub fn match_robots(
    robot_positions: &[Vec2],
    contact_points: &[Vec2],
    object_center: Vec2,
) -> Result<MatchingResult, AssignmentError> {
    if robot_positions.len() != contact_points.len() {
        return Err(AssignmentError::CountMismatch { robots: robot_positions.len(), points: contact_points.len() });
    }
    if robot_positions.is_empty() {
        return Err(AssignmentError::Empty);
    }
    let mut robot_angles = Vec::with_capacity(robot_positions.len());
    for (i, p) in robot_positions.iter().enumerate() {
        let d = *p - object_center;
        if d.norm() < 1e-12 {
            return Err(AssignmentError::RobotAtCenter(i));
        }
        robot_angles.push(wrap_angle_positive(d.angle()));
    }
    let point_angles: Vec<f64> =
        contact_points.iter().map(|p| wrap_angle_positive((*p - object_center).angle())).collect();
    if let Some(m) = try_split(&robot_angles, &point_angles) {
        return Ok(m);
    }
    let jittered: Vec<f64> =
        robot_angles.iter().enumerate().map(|(i, a)| wrap_angle_positive(a + SPLIT_JITTER * (i + 1) as f64)).collect();
    let mut m = try_split(&jittered, &point_angles).ok_or(AssignmentError::NoValidSplit)?;
    m.robot_angles = robot_angles;
    Ok(m)
}

/// Fine grid around the object used for robot switch paths.
#[derive(Debug, Clone)]
pub struct LocalGrid {
    pub costmap: Costmap,
    pub robot_radius: f64,
}

impl LocalGrid {
    /// Grid over the object bounds inflated by four robot diameters, grown
    /// further to cover `include`; cells whose center a robot disc cannot
    /// occupy are lethal.
    pub fn new(
        footprint: &Footprint,
        object_pose: &Pose,
        obstacles: &[PlacedFootprint],
        arena: Option<Rect>,
        robot_radius: f64,
        include: &[Vec2],
    ) -> Self {
        let (mut lo, mut hi) = footprint.world_bounds(object_pose);
        for p in include {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let margin = 4.0 * 2.0 * robot_radius;
        let mut min = Vec2::new(lo.x - margin, lo.y - margin);
        let mut max = Vec2::new(hi.x + margin, hi.y + margin);
        if let Some(a) = arena {
            min = Vec2::new(min.x.max(a.min.x), min.y.max(a.min.y));
            max = Vec2::new(max.x.min(a.max.x), max.y.min(a.max.y));
        }
        let res = LOCAL_RESOLUTION;
        let width = ((max.x - min.x) / res).ceil().max(1.0) as usize;
        let height = ((max.y - min.y) / res).ceil().max(1.0) as usize;
        let mut costmap = Costmap {
            origin: min,
            resolution: res,
            width,
            height,
            cost: vec![0.0; width * height],
            r_safety: robot_radius,
            c_max: HUG_COST,
        };
        for y in 0..height {
            for x in 0..width {
                let c = costmap.cell_center((x, y));
                let d_obj = footprint.signed_distance(object_pose.inverse_transform_point(c));
                let mut d_static = obstacles.iter().map(|o| o.signed_distance(c)).fold(f64::INFINITY, f64::min);
                if let Some(a) = arena {
                    d_static = d_static.min(a.clearance(c));
                }
                let cost = if d_obj < robot_radius || d_static < robot_radius {
                    Costmap::LETHAL
                } else if d_obj < robot_radius + HUG_BAND {
                    HUG_COST * (robot_radius + HUG_BAND - d_obj) / HUG_BAND
                } else {
                    0.0
                };
                let idx = costmap.index((x, y));
                costmap.cost[idx] = cost;
            }
        }
        Self { costmap, robot_radius }
    }

    /// Plans a path for one robot. `blockers` are other robot centers that
    /// must be avoided by a full robot diameter.
    pub fn plan(&self, start: Vec2, goal: Vec2, blockers: &[Vec2]) -> Option<Vec<Vec2>> {
        let map = &self.costmap;
        let sc = map.cell_of(start)?;
        let gc = map.cell_of(goal)?;
        let mut local = map.clone();
        if !blockers.is_empty() {
            let reach = 2.0 * self.robot_radius;
            for y in 0..local.height {
                for x in 0..local.width {
                    let c = local.cell_center((x, y));
                    if blockers.iter().any(|b| b.distance(c) < reach) {
                        let idx = local.index((x, y));
                        local.cost[idx] = Costmap::LETHAL;
                    }
                }
            }
        }
        // Start and goal sit exactly at contact distance; let the search leave and enter them.
        for cell in [sc, gc] {
            let idx = local.index(cell);
            if !local.cost[idx].is_finite() {
                local.cost[idx] = HUG_COST;
            }
        }
        let cells = astar_cells(&local, sc, gc)?;
        let mut pts: Vec<Vec2> = Vec::with_capacity(cells.len() + 2);
        pts.push(start);
        pts.extend(cells.iter().skip(1).take(cells.len().saturating_sub(2)).map(|&c| local.cell_center(c)));
        pts.push(goal);
        let kept = rdp_indices(&pts, LOCAL_RESOLUTION / 2.0);
        Some(kept.into_iter().map(|i| pts[i]).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SwitchOrder {
    Concurrent,
    /// Robot indices in execution order.
    Sequential(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchPlan {
    /// Candidate index assigned to each robot.
    pub assigned: Vec<usize>,
    /// Standoff pose per robot: disc touching the contact point, heading
    /// along the pushing direction.
    pub targets: Vec<Pose>,
    /// `None` when the robot is already in place and only realigns.
    pub paths: Vec<Option<Vec<Vec2>>>,
    pub path_lengths: Vec<f64>,
    pub concave_robots: usize,
    pub concurrent_ok: bool,
    pub order: SwitchOrder,
}

/// Standoff pose for a candidate at the given object pose.
pub fn standoff_pose(candidates: &CandidateSet, index: usize, object_pose: &Pose) -> Pose {
    let c = &candidates.points[index];
    let p = object_pose.transform_point(c.standoff(candidates.robot_radius));
    Pose::new(p.x, p.y, object_pose.transform_angle(c.pushing_direction))
}

/// Plans every robot's move to its newly assigned contact point and decides
/// between concurrent and clockwise sequential execution.
pub fn plan_switch(
    matching: &MatchingResult,
    configuration: &PushingConfiguration,
    candidates: &CandidateSet,
    object_pose: &Pose,
    robot_positions: &[Vec2],
    grid: &LocalGrid,
) -> Result<SwitchPlan, AssignmentError> {
    let r = candidates.robot_radius;
    let footprint = &candidates.source_footprint;
    let concave: Vec<Vec2> = footprint.concave_vertices().iter().map(|v| object_pose.transform_point(*v)).collect();
    let mut assigned = Vec::with_capacity(robot_positions.len());
    let mut targets = Vec::with_capacity(robot_positions.len());
    let mut paths = Vec::with_capacity(robot_positions.len());
    let mut path_lengths = Vec::with_capacity(robot_positions.len());
    let mut concave_robots = 0;
    for (robot, &start) in robot_positions.iter().enumerate() {
        let index = configuration.indices()[matching.assignment[robot]];
        let target = standoff_pose(candidates, index, object_pose);
        let near_corner = concave.iter().any(|v| v.distance(start) < 3.0 * r);
        if candidates.points[index].concave_flag || near_corner {
            concave_robots += 1;
        }
        if start.distance(target.position()) <= PLACED_TOLERANCE {
            paths.push(None);
            path_lengths.push(0.0);
        } else {
            let path = grid.plan(start, target.position(), &[]).ok_or(AssignmentError::LocalNoPath(robot))?;
            path_lengths.push(polyline_length(&path));
            paths.push(Some(path));
        }
        assigned.push(index);
        targets.push(target);
    }
    let half_perimeter = footprint.perimeter() / 2.0;
    let concurrent_ok = path_lengths.iter().all(|&l| l < half_perimeter) && concave_robots <= 1;
    let order = if concurrent_ok {
        SwitchOrder::Concurrent
    } else {
        SwitchOrder::Sequential(matching.clockwise_order.clone())
    };
    Ok(SwitchPlan { assigned, targets, paths, path_lengths, concave_robots, concurrent_ok, order })
}
