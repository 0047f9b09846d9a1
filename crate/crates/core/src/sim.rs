//! Fixed-step quasi-static pushing world and the closed-loop episode.
//!
//! Object velocity is proportional to the net contact wrench; robots are
//! unicycles that cannot penetrate bodies. An episode plans the object path
//! once, then repeatedly selects a configuration, switches robots to it and
//! pushes until one of the re-selection triggers fires.

use alloc::collections::VecDeque;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_6};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{match_robots, plan_switch, LocalGrid, SwitchOrder};
use crate::geometry::{generate_contact_points, to_world, CandidateSet, Footprint, Shape, WorldContact};
use crate::math::{point_polyline_distance, polyline_progress, wrap_angle, Pose, Vec2};
use crate::planner::{
    angular_tolerance, build_costmap, plan_object_path, rdp_indices, target_direction, CostmapConfig,
    PlacedFootprint, Rect, DEFAULT_RDP_EPSILON, DEFAULT_RESOLUTION,
};
use crate::selection::{InitializerKind, SelectionError, SelectionRequest, Selector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    /// Object speed per unit net force, m/s.
    pub mobility_gain: f64,
    /// Object yaw rate per unit net torque, rad/s per N·m (unit forces).
    pub rotation_gain: f64,
    /// Standard deviation of the per-step force direction noise, radians.
    pub slip_noise_std: f64,
    pub d_repl: f64,
    pub t_repl: f64,
    pub goal_tolerance: f64,
    /// Consecutive configurations without progress before giving up.
    pub max_configs: usize,
    pub rng_seed: u64,
    pub robot_radius: f64,
    pub v_push_max: f64,
    pub v_switch_max: f64,
    pub omega_max: f64,
    pub k_v: f64,
    pub k_omega1: f64,
    pub k_omega2: f64,
    pub align_threshold: f64,
    pub contact_tolerance: f64,
    pub contact_cone: f64,
    pub waypoint_tolerance: f64,
    /// Extra deviation a configuration may add when it starts off the path.
    pub deviation_hysteresis: f64,
    pub progress_threshold: f64,
    pub max_sim_time: f64,
    pub switch_timeout: f64,
    pub log_interval: f64,
    pub w_min: f64,
    pub rdp_epsilon: f64,
    pub costmap_resolution: f64,
    /// Clearance beyond the object circumradius kept from obstacles by the planner.
    pub safety_margin: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            mobility_gain: 0.05,
            rotation_gain: 0.1,
            slip_noise_std: 0.05,
            d_repl: 0.5,
            t_repl: 20.0,
            goal_tolerance: 0.5,
            max_configs: 10,
            rng_seed: 0,
            robot_radius: 0.17,
            v_push_max: 0.2,
            v_switch_max: 0.1,
            omega_max: 1.0,
            k_v: 1.0,
            k_omega1: 2.0,
            k_omega2: 2.0,
            align_threshold: FRAC_PI_6,
            contact_tolerance: 0.01,
            contact_cone: FRAC_PI_3,
            waypoint_tolerance: 0.5,
            deviation_hysteresis: 0.1,
            progress_threshold: 0.05,
            max_sim_time: 3000.0,
            switch_timeout: 400.0,
            log_interval: 0.5,
            w_min: 0.5,
            rdp_epsilon: DEFAULT_RDP_EPSILON,
            costmap_resolution: DEFAULT_RESOLUTION,
            safety_margin: 0.34,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(SimError::InvalidConfig("dt must lie in (0, 0.1]"));
        }
        if !(positive(self.mobility_gain) && positive(self.rotation_gain)) {
            return Err(SimError::InvalidConfig("gains must be positive"));
        }
        if !(positive(self.k_v) && positive(self.k_omega1) && positive(self.k_omega2)) {
            return Err(SimError::InvalidConfig("controller gains must be positive"));
        }
        if !positive(self.goal_tolerance) {
            return Err(SimError::InvalidConfig("goal_tolerance must be positive"));
        }
        if !(self.slip_noise_std >= 0.0 && self.slip_noise_std.is_finite()) {
            return Err(SimError::InvalidConfig("slip_noise_std must be non-negative"));
        }
        if !(positive(self.robot_radius) && positive(self.v_push_max) && positive(self.v_switch_max)) {
            return Err(SimError::InvalidConfig("robot radius and speed limits must be positive"));
        }
        if !(positive(self.d_repl) && positive(self.t_repl) && positive(self.max_sim_time)) {
            return Err(SimError::InvalidConfig("trigger thresholds must be positive"));
        }
        if self.max_configs == 0 {
            return Err(SimError::InvalidConfig("max_configs must be at least 1"));
        }
        Ok(())
    }

    fn log_every(&self) -> u64 {
        ((self.log_interval / self.dt).round() as u64).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RobotMode {
    Pushing,
    Switching,
    Realigning,
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose,
    pub assigned_cp: Option<usize>,
    pub mode: RobotMode,
    pub v: f64,
    pub omega: f64,
}

impl RobotState {
    pub fn new(pose: Pose) -> Self {
        Self { pose, assigned_cp: None, mode: RobotMode::Idle, v: 0.0, omega: 0.0 }
    }

    pub fn position(&self) -> Vec2 {
        self.pose.position()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub pose: Pose,
    pub twist: Twist,
}

impl ObjectState {
    pub fn at(pose: Pose) -> Self {
        Self { pose, twist: Twist::default() }
    }
}

/// Static bodies: arena walls and obstacles.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub arena: Rect,
    pub obstacles: Vec<PlacedFootprint>,
}

impl Environment {
    /// Signed clearance of a point from walls and obstacles, with the
    /// outward normal of the nearest body.
    fn clearance(&self, p: Vec2) -> (f64, Vec2) {
        let mut best = wall_clearance(&self.arena, p);
        for o in &self.obstacles {
            let q = o.footprint.closest_boundary_world(&o.pose, p);
            if q.signed_distance < best.0 {
                best = (q.signed_distance, q.outward_normal);
            }
        }
        best
    }
}

fn wall_clearance(arena: &Rect, p: Vec2) -> (f64, Vec2) {
    let walls = [
        (p.x - arena.min.x, Vec2::new(1.0, 0.0)),
        (arena.max.x - p.x, Vec2::new(-1.0, 0.0)),
        (p.y - arena.min.y, Vec2::new(0.0, 1.0)),
        (arena.max.y - p.y, Vec2::new(0.0, -1.0)),
    ];
    walls.into_iter().fold((f64::INFINITY, Vec2::ZERO), |a, b| if b.0 < a.0 { b } else { a })
}

/// Unicycle update. The heading at mid-step is used for the translation,
/// which keeps constant-twist motion on its circular arc.
pub fn step_robot(state: &RobotState, v: f64, omega: f64, dt: f64) -> RobotState {
    let mid = state.pose.theta + 0.5 * omega * dt;
    let pose = Pose::new(
        state.pose.x + v * mid.cos() * dt,
        state.pose.y + v * mid.sin() * dt,
        wrap_angle(state.pose.theta + omega * dt),
    );
    RobotState { pose, v, omega, ..*state }
}

/// Moves a robot disc out of the object, obstacles and walls.
pub fn project_robot(
    p: Vec2,
    radius: f64,
    footprint: &Footprint,
    object_pose: &Pose,
    env: &Environment,
) -> Vec2 {
    let mut p = p;
    for _ in 0..4 {
        let mut moved = false;
        let q = footprint.closest_boundary_world(object_pose, p);
        if q.signed_distance < radius {
            p += q.outward_normal * (radius - q.signed_distance);
            moved = true;
        }
        let (d, n) = env.clearance(p);
        if d < radius {
            p += n * (radius - d);
            moved = true;
        }
        if !moved {
            break;
        }
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PushGains {
    pub k_v: f64,
    pub k_omega1: f64,
    pub k_omega2: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub align_threshold: f64,
}

impl PushGains {
    pub fn from_config(cfg: &SimConfig) -> Self {
        Self {
            k_v: cfg.k_v,
            k_omega1: cfg.k_omega1,
            k_omega2: cfg.k_omega2,
            v_max: cfg.v_push_max,
            omega_max: cfg.omega_max,
            align_threshold: cfg.align_threshold,
        }
    }
}

/// Pushing controller toward a world-frame contact point.
///
/// Speed is proportional to the distance between the robot center and the
/// contact point. The yaw rate blends the error to the pushing direction and
/// the error to the bearing of the contact point. While the blended error
/// exceeds the alignment threshold the robot only turns.
pub fn push_control(robot: &RobotState, cp: &WorldContact, gains: &PushGains) -> (f64, f64) {
    let to_cp = cp.position - robot.position();
    let dist = to_cp.norm();
    let beta = if dist < 1e-9 { cp.direction } else { to_cp.angle() };
    let e_dir = wrap_angle(cp.direction - robot.pose.theta);
    let e_bearing = wrap_angle(beta - robot.pose.theta);
    let raw = gains.k_omega1 * e_dir + gains.k_omega2 * e_bearing;
    let omega = raw.clamp(-gains.omega_max, gains.omega_max);
    let blended = raw / (gains.k_omega1 + gains.k_omega2);
    if blended.abs() > gains.align_threshold {
        (0.0, omega)
    } else {
        ((gains.k_v * dist).clamp(0.0, gains.v_max), omega)
    }
}

pub const PURSUIT_GOAL_TOLERANCE: f64 = 0.05;

/// Lookahead for a given speed, clamped to `[0.2, 0.6]` m.
pub fn lookahead_for_speed(v: f64) -> f64 {
    (0.2 + 2.0 * v.abs()).clamp(0.2, 0.6)
}

/// Adaptive pure pursuit along a polyline, remembering its progress.
#[derive(Debug, Clone, PartialEq)]
pub struct PurePursuit {
    path: Vec<Vec2>,
    cursor: usize,
    pub v_max: f64,
    pub omega_max: f64,
    pub goal_tolerance: f64,
}

impl PurePursuit {
    pub fn new(path: Vec<Vec2>, v_max: f64, omega_max: f64) -> Self {
        Self { path, cursor: 0, v_max, omega_max, goal_tolerance: PURSUIT_GOAL_TOLERANCE }
    }

    pub fn goal(&self) -> Option<Vec2> {
        self.path.last().copied()
    }

    pub fn is_done(&self, p: Vec2) -> bool {
        self.goal().is_none_or(|g| g.distance(p) <= self.goal_tolerance)
    }

    /// Point `lookahead` ahead of the projection of `p`, searching forward
    /// from the cursor.
    fn lookahead_point(&mut self, p: Vec2, lookahead: f64) -> Vec2 {
        let last = self.path.len() - 1;
        let mut best = (f64::INFINITY, self.cursor, self.path[self.cursor]);
        for i in self.cursor..last.min(self.cursor + 4) {
            let (d, q) = crate::math::point_segment_distance(p, self.path[i], self.path[i + 1]);
            if d < best.0 - 1e-9 {
                best = (d, i, q);
            }
        }
        let (_, seg, q) = best;
        self.cursor = seg;
        let mut remaining = lookahead;
        let mut from = q;
        for i in seg + 1..=last {
            let step = from.distance(self.path[i]);
            if step >= remaining {
                return from.lerp(self.path[i], remaining / step);
            }
            remaining -= step;
            from = self.path[i];
        }
        self.path[last]
    }

    pub fn control(&mut self, pose: &Pose, current_v: f64) -> (f64, f64) {
        let Some(goal) = self.goal() else { return (0.0, 0.0) };
        let p = pose.position();
        let d_goal = p.distance(goal);
        if d_goal <= self.goal_tolerance {
            return (0.0, 0.0);
        }
        let lookahead = lookahead_for_speed(current_v);
        let target = if self.path.len() < 2 || d_goal < lookahead { goal } else { self.lookahead_point(p, lookahead) };
        let local = pose.inverse_transform_point(target);
        let alpha = local.angle();
        if alpha.abs() > FRAC_PI_2 {
            return (0.0, self.omega_max.copysign(alpha));
        }
        let ld = local.norm().max(1e-6);
        let kappa = 2.0 * alpha.sin() / ld;
        let mut v = (self.v_max / (1.0 + 0.25 * kappa.abs())).min(d_goal);
        let mut omega = v * kappa;
        if omega.abs() > self.omega_max {
            v = self.omega_max / kappa.abs();
            omega = self.omega_max.copysign(omega);
        }
        (v, omega)
    }
}

/// Stateless pure pursuit over the whole path.
pub fn pure_pursuit(robot: &RobotState, path: &[Vec2], v_max: f64, omega_max: f64) -> (f64, f64) {
    PurePursuit::new(path.to_vec(), v_max, omega_max).control(&robot.pose, robot.v)
}

/// A unit push applied at `arm` from the object center along `direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppliedForce {
    pub arm: Vec2,
    pub direction: f64,
}

/// A robot pushes when it drives forward, its disc touches the boundary and
/// its heading lies within the contact cone of the inward normal. The unit
/// force acts along the inward normal at the touching point.
pub fn contact_force(
    robot: &RobotState,
    footprint: &Footprint,
    object_pose: &Pose,
    cfg: &SimConfig,
) -> Option<AppliedForce> {
    if robot.v <= 0.0 {
        return None;
    }
    let q = footprint.closest_boundary_world(object_pose, robot.position());
    let gap = q.signed_distance - cfg.robot_radius;
    if gap.abs() > cfg.contact_tolerance {
        return None;
    }
    // frictionless contact: only the normal component is transmitted
    let inward = (-q.outward_normal).angle();
    if wrap_angle(robot.pose.theta - inward).abs() > cfg.contact_cone {
        return None;
    }
    let arm = match footprint.shape() {
        // exactly antiparallel to the force, so the torque is exactly zero
        Shape::Circle(r) => -Vec2::from_angle(inward) * *r,
        Shape::Polygon(_) => q.point - object_pose.position(),
    };
    Some(AppliedForce { arm, direction: inward })
}

/// Net force and torque about the object center.
pub fn net_wrench(forces: &[AppliedForce]) -> (Vec2, f64) {
    forces.iter().fold((Vec2::ZERO, 0.0), |(f, t), a| {
        let u = Vec2::from_angle(a.direction);
        (f + u, t + a.arm.cross(u))
    })
}

fn integrate(pose: &Pose, twist: &Twist, dt: f64) -> Pose {
    Pose::new(pose.x + twist.vx * dt, pose.y + twist.vy * dt, wrap_angle(pose.theta + twist.omega * dt))
}

/// Quasi-static object update. `boundary` holds object-frame boundary
/// samples used for obstacle contact; motion into a body is removed along
/// its normal so the object slides.
pub fn step_object<R: rand::Rng + ?Sized>(
    object: &ObjectState,
    forces: &[AppliedForce],
    boundary: &[Vec2],
    env: &Environment,
    cfg: &SimConfig,
    rng: &mut R,
) -> ObjectState {
    let noisy: Vec<AppliedForce> = if cfg.slip_noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.slip_noise_std).expect("validated noise std");
        forces.iter().map(|f| AppliedForce { direction: f.direction + normal.sample(rng), ..*f }).collect()
    } else {
        forces.to_vec()
    };
    let (force, torque) = net_wrench(&noisy);
    let mut twist = Twist { vx: cfg.mobility_gain * force.x, vy: cfg.mobility_gain * force.y, omega: cfg.rotation_gain * torque };
    if twist == Twist::default() {
        return ObjectState { pose: object.pose, twist };
    }
    for attempt in 0..4 {
        let next = integrate(&object.pose, &twist, cfg.dt);
        let mut blocked = false;
        let mut linear = Vec2::new(twist.vx, twist.vy);
        for s in boundary {
            let p = next.transform_point(*s);
            let (d, n) = env.clearance(p);
            if d >= 0.0 {
                continue;
            }
            let arm = p - next.position();
            let point_velocity = linear + arm.perp() * twist.omega;
            if point_velocity.dot(n) < 0.0 {
                blocked = true;
                let vn = linear.dot(n);
                if vn < 0.0 {
                    linear -= n * vn;
                }
            }
        }
        if !blocked {
            return ObjectState { pose: next, twist };
        }
        twist.vx = linear.x;
        twist.vy = linear.y;
        if attempt >= 1 {
            twist.omega = 0.0;
        }
        if attempt >= 2 {
            twist = Twist::default();
        }
    }
    ObjectState { pose: object.pose, twist: Twist::default() }
}

/// Time source for selection wall-clock measurements.
pub trait Clock {
    fn now_seconds(&self) -> f64;
}

/// Always reads zero, keeping records deterministic.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn now_seconds(&self) -> f64 {
        0.0
    }
}

/// Robots, object and static bodies stepped together.
#[derive(Debug, Clone)]
pub struct World {
    pub env: Environment,
    pub footprint: Footprint,
    pub object: ObjectState,
    pub robots: Vec<RobotState>,
    pub time: f64,
    pub steps: u64,
    /// Deepest robot-robot overlap during the last step, before separation.
    pub last_overlap: f64,
    pub cfg: SimConfig,
    boundary: Vec<Vec2>,
    rng: ChaCha8Rng,
}

impl World {
    pub fn new(env: Environment, footprint: Footprint, object_pose: Pose, robots: &[Pose], cfg: SimConfig) -> Self {
        let boundary = footprint.boundary_samples(0.05);
        let rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        Self {
            env,
            footprint,
            object: ObjectState::at(object_pose),
            robots: robots.iter().map(|p| RobotState::new(*p)).collect(),
            time: 0.0,
            steps: 0,
            last_overlap: 0.0,
            cfg,
            boundary,
            rng,
        }
    }

    /// Applies one command per robot and advances by `dt`. Returns the
    /// number of robots that pushed.
    pub fn step(&mut self, commands: &[(f64, f64)]) -> usize {
        let cfg = &self.cfg;
        for (robot, &(v, omega)) in self.robots.iter_mut().zip(commands) {
            let v_max = if robot.mode == RobotMode::Pushing { cfg.v_push_max } else { cfg.v_switch_max };
            robot.v = v.clamp(-v_max, v_max);
            robot.omega = omega.clamp(-cfg.omega_max, cfg.omega_max);
        }
        let forces: Vec<AppliedForce> = self
            .robots
            .iter()
            .filter_map(|r| contact_force(r, &self.footprint, &self.object.pose, cfg))
            .collect();
        self.object = step_object(&self.object, &forces, &self.boundary, &self.env, cfg, &mut self.rng);
        for robot in &mut self.robots {
            let moved = step_robot(robot, robot.v, robot.omega, cfg.dt);
            let p = project_robot(moved.position(), cfg.robot_radius, &self.footprint, &self.object.pose, &self.env);
            robot.pose = Pose::new(p.x, p.y, moved.pose.theta);
        }
        let pushed = forces.len();
        self.last_overlap = self.separate_robots();
        self.steps += 1;
        self.time = self.steps as f64 * self.cfg.dt;
        pushed
    }

    /// Pushes overlapping robot discs apart; returns the deepest overlap
    /// found before resolving.
    fn separate_robots(&mut self) -> f64 {
        let diameter = 2.0 * self.cfg.robot_radius;
        let n = self.robots.len();
        let mut worst = 0.0f64;
        for pass in 0..3 {
            let mut any = false;
            for i in 0..n {
                for j in i + 1..n {
                    let d = self.robots[i].position() - self.robots[j].position();
                    let depth = diameter - d.norm();
                    if depth <= 1e-9 {
                        continue;
                    }
                    if pass == 0 {
                        worst = worst.max(depth);
                    }
                    any = true;
                    let u = d.normalized().unwrap_or(Vec2::new(1.0, 0.0)) * (0.5 * depth);
                    for (k, shift) in [(i, u), (j, -u)] {
                        let p = self.robots[k].position() + shift;
                        let p = project_robot(p, self.cfg.robot_radius, &self.footprint, &self.object.pose, &self.env);
                        self.robots[k].pose.x = p.x;
                        self.robots[k].pose.y = p.y;
                    }
                }
            }
            if !any {
                break;
            }
        }
        worst
    }

    /// Smallest center distance between any two robots.
    pub fn min_robot_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.robots.len() {
            for j in i + 1..self.robots.len() {
                best = best.min(self.robots[i].position().distance(self.robots[j].position()));
            }
        }
        best
    }
}

/// Everything needed to run one episode.
#[derive(Debug, Clone)]
pub struct EpisodeSetup {
    pub arena: Rect,
    pub obstacles: Vec<PlacedFootprint>,
    pub footprint: Footprint,
    pub start: Pose,
    pub goal: Vec2,
    pub robots: Vec<Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum FailureCause {
    MaxConfigs,
    TimeCap,
    OutOfArena,
    RobotCollision,
    SwitchTimeout,
    LocalNoPath,
    SelectionFailure(String),
    Selection(String),
    Planning(String),
    Matching(String),
    Geometry(String),
    InvalidConfig(String),
}

impl FailureCause {
    pub fn label(&self) -> &'static str {
        match self {
            Self::MaxConfigs => "max_configs",
            Self::TimeCap => "time_cap",
            Self::OutOfArena => "out_of_arena",
            Self::RobotCollision => "robot_collision",
            Self::SwitchTimeout => "switch_timeout",
            Self::LocalNoPath => "local_no_path",
            Self::SelectionFailure(_) => "selection_failure",
            Self::Selection(_) => "selection_error",
            Self::Planning(_) => "planning",
            Self::Matching(_) => "matching",
            Self::Geometry(_) => "geometry",
            Self::InvalidConfig(_) => "invalid_config",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    Initial,
    WaypointReached,
    Deviation,
    NoProgress,
    SelectionFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub time: f64,
    pub trigger: Trigger,
    pub key_waypoint: usize,
    pub target_phi: f64,
    pub epsilon: f64,
    pub evaluations: u64,
    pub wall_s: f64,
    pub initializer: InitializerKind,
    /// Empty when the selector failed.
    pub configuration: Vec<usize>,
    pub feasible: bool,
    pub delta_phi: f64,
    pub net_torque: f64,
    pub reasoning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchRecord {
    pub duration: f64,
    pub concurrent: bool,
    pub path_lengths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub object: Pose,
    pub robots: Vec<Pose>,
    pub configuration: Vec<usize>,
    pub modes: Vec<RobotMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub success: bool,
    /// Number of selections made.
    pub z: usize,
    pub t_sel: Vec<SelectionRecord>,
    /// Simulated seconds until termination.
    pub t_exe: f64,
    pub t_sw: Vec<f64>,
    pub switches: Vec<SwitchRecord>,
    pub failure_cause: Option<FailureCause>,
    pub planned_path: Vec<Vec2>,
    pub key_waypoints: Vec<Vec2>,
    pub trajectory: Vec<TrajectorySample>,
    pub final_object: Pose,
    pub final_robots: Vec<Pose>,
}

impl EpisodeRecord {
    fn new(setup: &EpisodeSetup) -> Self {
        Self {
            success: false,
            z: 0,
            t_sel: Vec::new(),
            t_exe: 0.0,
            t_sw: Vec::new(),
            switches: Vec::new(),
            failure_cause: None,
            planned_path: Vec::new(),
            key_waypoints: Vec::new(),
            trajectory: Vec::new(),
            final_object: setup.start,
            final_robots: setup.robots.clone(),
        }
    }

    pub fn mean_evaluations(&self) -> f64 {
        mean(self.t_sel.iter().map(|s| s.evaluations as f64))
    }

    pub fn mean_selection_wall(&self) -> f64 {
        mean(self.t_sel.iter().map(|s| s.wall_s))
    }

    pub fn mean_switch_time(&self) -> f64 {
        mean(self.t_sw.iter().copied())
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Why a pushing phase ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PushEnd {
    Goal,
    Trigger(Trigger),
}

/// Deviation trigger: beyond `d_repl`, or beyond the deviation present at
/// selection time plus a margin when the configuration started off the path.
pub fn deviation_exceeded(deviation: f64, deviation_at_selection: f64, d_repl: f64, hysteresis: f64) -> bool {
    let threshold = if deviation_at_selection <= d_repl { d_repl } else { deviation_at_selection + hysteresis };
    deviation > threshold
}

/// Watches path progress for the stagnation trigger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProgressWatch {
    best: f64,
    since: f64,
    threshold: f64,
    window: f64,
}

impl ProgressWatch {
    pub fn new(progress: f64, now: f64, threshold: f64, window: f64) -> Self {
        Self { best: progress, since: now, threshold, window }
    }

    /// Returns true when less than `threshold` progress was gained over the window.
    pub fn update(&mut self, progress: f64, now: f64) -> bool {
        if progress >= self.best + self.threshold {
            self.best = progress;
            self.since = now;
        }
        now - self.since >= self.window - 1e-9
    }
}

struct Runner<'a> {
    world: World,
    cfg: SimConfig,
    candidates: CandidateSet,
    record: EpisodeRecord,
    path: Vec<Vec2>,
    keys: Vec<Vec2>,
    key_arc: Vec<f64>,
    key: usize,
    configuration: Vec<usize>,
    goal: Vec2,
    clock: &'a dyn Clock,
    log_every: u64,
}

impl Runner<'_> {
    fn object_pos(&self) -> Vec2 {
        self.world.object.pose.position()
    }

    fn progress(&self) -> f64 {
        polyline_progress(self.object_pos(), &self.path)
    }

    fn at_goal(&self) -> bool {
        self.object_pos().distance(self.goal) <= self.cfg.goal_tolerance
    }

    fn log(&mut self) {
        let w = &self.world;
        self.record.trajectory.push(TrajectorySample {
            t: w.time,
            object: w.object.pose,
            robots: w.robots.iter().map(|r| r.pose).collect(),
            configuration: self.configuration.clone(),
            modes: w.robots.iter().map(|r| r.mode).collect(),
        });
    }

    /// One world step plus logging and hard stops.
    fn tick(&mut self, commands: &[(f64, f64)]) -> Result<(), FailureCause> {
        self.world.step(commands);
        if self.world.steps.is_multiple_of(self.log_every) {
            self.log();
        }
        if !self.world.env.arena.contains(self.object_pos()) {
            return Err(FailureCause::OutOfArena);
        }
        if self.world.time >= self.cfg.max_sim_time {
            return Err(FailureCause::TimeCap);
        }
        Ok(())
    }

    /// Advances the key waypoint past any already reached; true if it moved.
    fn advance_key(&mut self) -> bool {
        let last = self.keys.len() - 1;
        let pos = self.object_pos();
        let progress = self.progress();
        let mut moved = false;
        while self.key < last
            && (pos.distance(self.keys[self.key]) <= self.cfg.waypoint_tolerance || progress >= self.key_arc[self.key])
        {
            self.key += 1;
            moved = true;
        }
        moved
    }

    fn run(&mut self, selector: &mut Selector) -> Result<(), FailureCause> {
        let n = self.world.robots.len();
        let mut trigger = Trigger::Initial;
        let mut stale = 0usize;
        loop {
            self.advance_key();
            if self.at_goal() {
                return Ok(());
            }
            let pos = self.object_pos();
            let key_point = self.keys[self.key];
            let phi = target_direction(pos, key_point).map_err(|e| FailureCause::Planning(e.to_string()))?;
            let epsilon = angular_tolerance(self.cfg.d_repl, pos.distance(key_point));
            let world_candidates = to_world(&self.candidates, &self.world.object.pose);
            let request = SelectionRequest { candidates: &world_candidates, target_phi: phi, epsilon, n };
            let t0 = self.clock.now_seconds();
            let result = selector.select(&request);
            let wall_s = (self.clock.now_seconds() - t0).max(0.0);
            self.record.z += 1;
            let start_progress = self.progress();
            let outcome = match result {
                Ok(o) => o,
                Err(e @ (SelectionError::MalformedProposal(_) | SelectionError::InitializerFailure(_))) => {
                    self.record.t_sel.push(SelectionRecord {
                        time: self.world.time,
                        trigger,
                        key_waypoint: self.key,
                        target_phi: phi,
                        epsilon,
                        evaluations: 0,
                        wall_s,
                        initializer: selector.initializer_kind(),
                        configuration: Vec::new(),
                        feasible: false,
                        delta_phi: f64::NAN,
                        net_torque: f64::NAN,
                        reasoning: None,
                    });
                    self.record.t_sw.push(0.0);
                    stale += 1;
                    if stale >= self.cfg.max_configs {
                        return Err(FailureCause::SelectionFailure(e.to_string()));
                    }
                    trigger = Trigger::SelectionFailed;
                    continue;
                }
                Err(e) => return Err(FailureCause::Selection(e.to_string())),
            };
            self.record.t_sel.push(SelectionRecord {
                time: self.world.time,
                trigger,
                key_waypoint: self.key,
                target_phi: phi,
                epsilon,
                evaluations: outcome.evaluations_used,
                wall_s,
                initializer: outcome.initializer_used,
                configuration: outcome.configuration.indices().to_vec(),
                feasible: outcome.feasible,
                delta_phi: outcome.evaluation.delta_phi,
                net_torque: outcome.evaluation.net_torque,
                reasoning: outcome.llm_reasoning.clone(),
            });
            self.configuration = outcome.configuration.indices().to_vec();
            let switch = self.switch(&outcome.configuration)?;
            self.record.t_sw.push(switch.duration);
            self.record.switches.push(switch);

            let end = self.push()?;
            let gained = self.progress() - start_progress;
            if end == PushEnd::Goal {
                return Ok(());
            }
            if let PushEnd::Trigger(t) = end {
                trigger = t;
            }
            stale = if gained >= self.cfg.progress_threshold { 0 } else { stale + 1 };
            if stale >= self.cfg.max_configs {
                return Err(FailureCause::MaxConfigs);
            }
        }
    }

    fn cp_world(&self, index: usize) -> WorldContact {
        let c = &self.candidates.points[index];
        let pose = &self.world.object.pose;
        WorldContact {
            position: pose.transform_point(c.position),
            direction: pose.transform_angle(c.pushing_direction),
            unit_torque: c.unit_torque,
        }
    }

    fn push(&mut self) -> Result<PushEnd, FailureCause> {
        let gains = PushGains::from_config(&self.cfg);
        for r in &mut self.world.robots {
            r.mode = RobotMode::Pushing;
        }
        let deviation_at_selection = point_polyline_distance(self.object_pos(), &self.path);
        let mut watch = ProgressWatch::new(self.progress(), self.world.time, self.cfg.progress_threshold, self.cfg.t_repl);
        let mut commands = vec![(0.0, 0.0); self.world.robots.len()];
        loop {
            for (i, robot) in self.world.robots.iter().enumerate() {
                commands[i] = match robot.assigned_cp {
                    Some(cp) => push_control(robot, &self.cp_world(cp), &gains),
                    None => (0.0, 0.0),
                };
            }
            self.tick(&commands)?;
            if self.at_goal() {
                return Ok(PushEnd::Goal);
            }
            if self.advance_key() {
                return Ok(PushEnd::Trigger(Trigger::WaypointReached));
            }
            let deviation = point_polyline_distance(self.object_pos(), &self.path);
            if deviation_exceeded(deviation, deviation_at_selection, self.cfg.d_repl, self.cfg.deviation_hysteresis) {
                return Ok(PushEnd::Trigger(Trigger::Deviation));
            }
            if watch.update(self.progress(), self.world.time) {
                return Ok(PushEnd::Trigger(Trigger::NoProgress));
            }
        }
    }

    fn switch(&mut self, configuration: &crate::selection::PushingConfiguration) -> Result<SwitchRecord, FailureCause> {
        let start_time = self.world.time;
        let r = self.cfg.robot_radius;
        let object_pose = self.world.object.pose;
        let positions: Vec<Vec2> = self.world.robots.iter().map(|r| r.position()).collect();
        let cps: Vec<Vec2> = configuration.indices().iter().map(|&i| self.cp_world(i).position).collect();
        let matching = match_robots(&positions, &cps, object_pose.position())
            .map_err(|e| FailureCause::Matching(e.to_string()))?;
        let grid = LocalGrid::new(
            &self.world.footprint,
            &object_pose,
            &self.world.env.obstacles,
            Some(self.world.env.arena),
            r,
            &positions,
        );
        let plan = plan_switch(&matching, configuration, &self.candidates, &object_pose, &positions, &grid)
            .map_err(|_| FailureCause::LocalNoPath)?;
        let n = positions.len();
        let mut followers: Vec<Option<PurePursuit>> = plan
            .paths
            .iter()
            .map(|p| p.as_ref().map(|p| PurePursuit::new(p.clone(), self.cfg.v_switch_max, self.cfg.omega_max)))
            .collect();
        for (i, robot) in self.world.robots.iter_mut().enumerate() {
            robot.assigned_cp = Some(plan.assigned[i]);
            robot.mode = if followers[i].is_some() { RobotMode::Switching } else { RobotMode::Realigning };
        }

        let mut sequential: Option<VecDeque<usize>> = match &plan.order {
            SwitchOrder::Concurrent => None,
            SwitchOrder::Sequential(order) => Some(order.iter().copied().filter(|&i| followers[i].is_some()).collect()),
        };
        // In sequential mode only the head of the queue moves, on a path
        // replanned around the others.
        let mut active: Option<usize> = None;
        let mut deferrals = 0usize;
        let mut last_motion = self.world.time;
        let mut commands = vec![(0.0, 0.0); n];
        loop {
            let all_done = followers.iter().all(|f| f.is_none());
            if all_done {
                break;
            }
            if let Some(queue) = sequential.as_mut() {
                if active.is_none() {
                    while let Some(&head) = queue.front() {
                        if followers[head].is_none() {
                            queue.pop_front();
                            continue;
                        }
                        let me = self.world.robots[head].position();
                        let blockers: Vec<Vec2> =
                            (0..n).filter(|&j| j != head).map(|j| self.world.robots[j].position()).collect();
                        let goal = plan.targets[head].position();
                        match grid.plan(me, goal, &blockers) {
                            Some(path) => {
                                followers[head] = Some(PurePursuit::new(path, self.cfg.v_switch_max, self.cfg.omega_max));
                                active = Some(head);
                                deferrals = 0;
                                break;
                            }
                            None => {
                                queue.pop_front();
                                queue.push_back(head);
                                deferrals += 1;
                                if deferrals > queue.len() {
                                    return Err(FailureCause::LocalNoPath);
                                }
                            }
                        }
                    }
                    if active.is_none() && queue.is_empty() {
                        break;
                    }
                }
            }
            for i in 0..n {
                let robot = &self.world.robots[i];
                let may_move = match (&sequential, active) {
                    (None, _) => true,
                    (Some(_), Some(a)) => a == i,
                    (Some(_), None) => false,
                };
                commands[i] = match (&mut followers[i], may_move) {
                    (Some(f), true) => {
                        if f.is_done(robot.position()) {
                            (0.0, 0.0)
                        } else {
                            f.control(&robot.pose, robot.v)
                        }
                    }
                    (None, _) => realign_command(robot, plan.targets[i].theta, &self.cfg),
                    _ => (0.0, 0.0),
                };
            }
            self.yield_commands(&mut commands);
            let before: Vec<Vec2> = self.world.robots.iter().map(|r| r.position()).collect();
            self.tick(&commands)?;
            if self.world.last_overlap > 0.02 {
                return Err(FailureCause::RobotCollision);
            }
            let moved = self.world.robots.iter().zip(&before).any(|(r, b)| r.position().distance(*b) > 1e-4);
            if moved {
                last_motion = self.world.time;
            }
            for i in 0..n {
                let done = followers[i].as_ref().is_some_and(|f| f.is_done(self.world.robots[i].position()));
                if done {
                    followers[i] = None;
                    self.world.robots[i].mode = RobotMode::Realigning;
                    if active == Some(i) {
                        active = None;
                    }
                }
            }
            if sequential.is_none() && self.world.time - last_motion > 10.0 {
                // deadlock among concurrent movers: finish one at a time
                sequential = Some(matching.clockwise_order.iter().copied().filter(|&i| followers[i].is_some()).collect());
            }
            if self.world.time - start_time > self.cfg.switch_timeout {
                return Err(FailureCause::SwitchTimeout);
            }
        }
        // Realign headings; positions are left as reached.
        loop {
            let mut aligned = true;
            for i in 0..n {
                let robot = &self.world.robots[i];
                let err = wrap_angle(plan.targets[i].theta - robot.pose.theta);
                commands[i] = if err.abs() > 0.02 {
                    aligned = false;
                    realign_command(robot, plan.targets[i].theta, &self.cfg)
                } else {
                    (0.0, 0.0)
                };
            }
            if aligned {
                break;
            }
            self.tick(&commands)?;
            if self.world.time - start_time > self.cfg.switch_timeout {
                return Err(FailureCause::SwitchTimeout);
            }
        }
        Ok(SwitchRecord { duration: self.world.time - start_time, concurrent: plan.concurrent_ok, path_lengths: plan.path_lengths })
    }

    /// Stops robots whose next step would close in on another robot.
    fn yield_commands(&self, commands: &mut [(f64, f64)]) {
        let robots = &self.world.robots;
        let reach = 2.0 * self.cfg.robot_radius + 0.02;
        for i in 0..robots.len() {
            let (v, omega) = commands[i];
            if v <= 0.0 {
                continue;
            }
            let next = step_robot(&robots[i], v, omega, self.cfg.dt).position();
            let here = robots[i].position();
            let blocked = (0..robots.len()).any(|j| {
                j != i && {
                    let other = robots[j].position();
                    next.distance(other) < reach && next.distance(other) < here.distance(other)
                }
            });
            if blocked {
                commands[i].0 = 0.0;
            }
        }
    }
}

fn realign_command(robot: &RobotState, heading: f64, cfg: &SimConfig) -> (f64, f64) {
    let err = wrap_angle(heading - robot.pose.theta);
    (0.0, (cfg.k_omega1 * err).clamp(-cfg.omega_max, cfg.omega_max))
}

/// Runs one closed-loop episode. Failures are recorded, never returned.
pub fn run_episode(setup: &EpisodeSetup, selector: &mut Selector, cfg: &SimConfig, clock: &dyn Clock) -> EpisodeRecord {
    let mut record = EpisodeRecord::new(setup);
    if let Err(e) = cfg.validate() {
        record.failure_cause = Some(FailureCause::InvalidConfig(e.to_string()));
        return record;
    }
    if setup.start.position().distance(setup.goal) <= cfg.goal_tolerance {
        record.success = true;
        return record;
    }
    let candidates = match generate_contact_points(&setup.footprint, cfg.w_min, cfg.robot_radius) {
        Ok(c) => c,
        Err(e) => {
            record.failure_cause = Some(FailureCause::Geometry(e.to_string()));
            return record;
        }
    };
    if setup.robots.len() > candidates.len() {
        record.failure_cause = Some(FailureCause::Selection(
            SelectionError::NTooLarge { n: setup.robots.len(), m: candidates.len() }.to_string(),
        ));
        return record;
    }
    let r_safety = setup.footprint.circumradius() + cfg.safety_margin;
    let costmap_cfg = CostmapConfig { resolution: cfg.costmap_resolution, ..CostmapConfig::new(r_safety) };
    let path = build_costmap(setup.arena, &setup.obstacles, &costmap_cfg)
        .and_then(|map| plan_object_path(&map, setup.start.position(), setup.goal));
    let path = match path {
        Ok(p) => p,
        Err(e) => {
            record.failure_cause = Some(FailureCause::Planning(e.to_string()));
            return record;
        }
    };
    let dense = path.waypoints;
    let kept = rdp_indices(&dense, cfg.rdp_epsilon);
    let mut arc = vec![0.0; dense.len()];
    for i in 1..dense.len() {
        arc[i] = arc[i - 1] + dense[i - 1].distance(dense[i]);
    }
    let keys: Vec<Vec2> = kept.iter().map(|&i| dense[i]).collect();
    let key_arc: Vec<f64> = kept.iter().map(|&i| arc[i]).collect();
    record.planned_path = dense.clone();
    record.key_waypoints = keys.clone();

    let env = Environment { arena: setup.arena, obstacles: setup.obstacles.clone() };
    let world = World::new(env, setup.footprint.clone(), setup.start, &setup.robots, cfg.clone());
    let mut runner = Runner {
        world,
        cfg: cfg.clone(),
        candidates,
        record,
        path: dense,
        keys,
        key_arc,
        key: 1,
        configuration: Vec::new(),
        goal: setup.goal,
        clock,
        log_every: cfg.log_every(),
    };
    runner.log();
    let result = runner.run(selector);
    if !runner.world.steps.is_multiple_of(runner.log_every) {
        runner.log();
    }
    let mut record = runner.record;
    record.t_exe = runner.world.time;
    record.final_object = runner.world.object.pose;
    record.final_robots = runner.world.robots.iter().map(|r| r.pose).collect();
    match result {
        Ok(()) => record.success = true,
        Err(cause) => record.failure_cause = Some(cause),
    }
    record
}
