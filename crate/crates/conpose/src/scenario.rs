//! Scenario files: arena, obstacles, object start and goal, robot fleet.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use conpose_core::geometry::Footprint;
use conpose_core::math::{Pose, Vec2};
use conpose_core::planner::{PlacedFootprint, Rect};
use conpose_core::sim::EpisodeSetup;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_ROBOT_RADIUS: f64 = 0.17;
/// Fleet size the base scene dimensions are drawn for.
pub const BASE_FLEET: usize = 4;
pub const BUNDLED_SCENES: [&str; 5] = ["scene-1", "scene-2", "scene-3", "scene-4", "scene-5"];

const SCENE_FILES: [&str; 5] = [
    include_str!("../scenes/scene-1.json"),
    include_str!("../scenes/scene-2.json"),
    include_str!("../scenes/scene-3.json"),
    include_str!("../scenes/scene-4.json"),
    include_str!("../scenes/scene-5.json"),
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{field}: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation { field: field.into(), message: message.into() }
}

/// Footprint as written in scenario files, in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FootprintSpec {
    Circle { radius: f64 },
    Rectangle { width: f64, height: f64 },
    /// Vertices in the frame of the accompanying pose.
    Polygon { vertices: Vec<[f64; 2]> },
}

impl FootprintSpec {
    fn scaled(&self, s: f64) -> Self {
        match self {
            Self::Circle { radius } => Self::Circle { radius: radius * s },
            Self::Rectangle { width, height } => Self::Rectangle { width: width * s, height: height * s },
            Self::Polygon { vertices } => Self::Polygon { vertices: vertices.iter().map(|[x, y]| [x * s, y * s]).collect() },
        }
    }

    /// Builds the footprint and the offset of its reference point in the
    /// spec frame (non-zero only for polygons, which are recentered).
    pub fn build(&self, field: &str) -> Result<(Footprint, Vec2), ScenarioError> {
        let result = match self {
            Self::Circle { radius } => Footprint::circle(*radius).map(|f| (f, Vec2::ZERO)),
            Self::Rectangle { width, height } => {
                if !(*width > 0.0 && *height > 0.0) {
                    return Err(invalid(field, "rectangle sides must be positive"));
                }
                Footprint::rectangle(*width, *height).map(|f| (f, Vec2::ZERO))
            }
            Self::Polygon { vertices } => {
                Footprint::polygon_with_centroid(vertices.iter().map(|&v| Vec2::from(v)).collect())
            }
        };
        result.map_err(|e| invalid(field, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    pub footprint: FootprintSpec,
    /// `[x, y, theta]`.
    pub pose: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    /// Overrides the shape chosen on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub footprint: Option<FootprintSpec>,
    pub start: [f64; 3],
    pub goal: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub name: String,
    /// `[width, height]` of the base (four-robot) arena.
    pub arena: [f64; 2],
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    pub object: ObjectSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robots: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_robots: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

/// Built-in object shapes at base scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Cuboid,
    Cylinder,
    Tshape,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Cuboid, ShapeKind::Cylinder, ShapeKind::Tshape];

    pub fn spec(&self) -> FootprintSpec {
        match self {
            Self::Cuboid => FootprintSpec::Rectangle { width: 2.0, height: 2.0 },
            Self::Cylinder => FootprintSpec::Circle { radius: 1.0 },
            Self::Tshape => FootprintSpec::Polygon {
                vertices: vec![
                    [-0.4, -1.2],
                    [0.4, -1.2],
                    [0.4, 0.4],
                    [1.2, 0.4],
                    [1.2, 1.2],
                    [-1.2, 1.2],
                    [-1.2, 0.4],
                    [-0.4, 0.4],
                ],
            },
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cuboid => "cuboid",
            Self::Cylinder => "cylinder",
            Self::Tshape => "tshape",
        })
    }
}

impl FromStr for ShapeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cuboid" | "box" => Ok(Self::Cuboid),
            "cylinder" | "circle" => Ok(Self::Cylinder),
            "tshape" | "t-shape" | "t" => Ok(Self::Tshape),
            other => Err(format!("unknown shape {other:?} (cuboid, cylinder, tshape)")),
        }
    }
}

/// A validated, scaled scenario ready to simulate.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub shape: String,
    pub arena: Rect,
    pub obstacles: Vec<PlacedFootprint>,
    pub footprint: Footprint,
    pub start: Pose,
    pub goal: Vec2,
    pub robots: Vec<Pose>,
    pub scale: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn n_robots(&self) -> usize {
        self.robots.len()
    }

    pub fn setup(&self) -> EpisodeSetup {
        EpisodeSetup {
            arena: self.arena,
            obstacles: self.obstacles.clone(),
            footprint: self.footprint.clone(),
            start: self.start,
            goal: self.goal,
            robots: self.robots.clone(),
        }
    }
}

/// Dimension multiplier for a fleet of `n`.
pub fn scale_for(n: usize) -> f64 {
    (n as f64 / BASE_FLEET as f64).max(1.0)
}

/// Command-line overrides applied while loading.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub shape: Option<ShapeKind>,
    pub n_robots: Option<usize>,
    pub robot_radius: Option<f64>,
}

pub fn parse_scenario(text: &str) -> Result<ScenarioFile, ScenarioError> {
    Ok(serde_json::from_str(text)?)
}

/// Reads a scenario file, or a bundled scene when `path` names one.
pub fn load_scenario(path: impl AsRef<Path>, options: &LoadOptions) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = match bundled_text(&path.to_string_lossy()) {
        Some(t) => t.to_string(),
        None => std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?,
    };
    build_scenario(&parse_scenario(&text)?, options)
}

fn bundled_text(name: &str) -> Option<&'static str> {
    let stem = name.strip_suffix(".json").unwrap_or(name);
    BUNDLED_SCENES.iter().position(|s| *s == stem).map(|i| SCENE_FILES[i])
}

pub fn bundled_scene(name: &str) -> Option<ScenarioFile> {
    bundled_text(name).map(|t| parse_scenario(t).expect("bundled scenes parse"))
}

/// Applies defaults and scaling, then validates.
pub fn build_scenario(file: &ScenarioFile, options: &LoadOptions) -> Result<Scenario, ScenarioError> {
    let radius = options.robot_radius.unwrap_or(DEFAULT_ROBOT_RADIUS);
    let n = options
        .n_robots
        .or(file.n_robots)
        .or(file.robots.as_ref().map(|r| r.len()))
        .unwrap_or(3);
    if n == 0 {
        return Err(invalid("n_robots", "at least one robot is required"));
    }
    let scale = scale_for(n);
    let [w, h] = file.arena;
    if !(w > 0.0 && h > 0.0) {
        return Err(invalid("arena", "width and height must be positive"));
    }
    let arena = Rect::from_size(w * scale, h * scale);

    let mut obstacles = Vec::with_capacity(file.obstacles.len());
    for (i, o) in file.obstacles.iter().enumerate() {
        let field = format!("obstacles[{i}].footprint");
        let (footprint, offset) = o.footprint.scaled(scale).build(&field)?;
        let base = Pose::new(o.pose[0] * scale, o.pose[1] * scale, o.pose[2]);
        let c = base.transform_point(offset);
        obstacles.push(PlacedFootprint::new(footprint, Pose::new(c.x, c.y, base.theta)));
    }

    let shape_spec = match (&file.object.footprint, options.shape) {
        (_, Some(kind)) => kind.spec(),
        (Some(spec), None) => spec.clone(),
        (None, None) => ShapeKind::Cuboid.spec(),
    };
    let shape = match (&file.object.footprint, options.shape) {
        (_, Some(kind)) => kind.to_string(),
        (Some(_), None) => "custom".to_string(),
        (None, None) => ShapeKind::Cuboid.to_string(),
    };
    let (footprint, _) = shape_spec.scaled(scale).build("object.footprint")?;
    let [sx, sy, st] = file.object.start;
    let start = Pose::new(sx * scale, sy * scale, st);
    let goal = Vec2::new(file.object.goal[0] * scale, file.object.goal[1] * scale);

    let robots = match (&file.robots, options.n_robots) {
        (Some(list), None) => list.iter().map(|&[x, y, t]| Pose::new(x * scale, y * scale, t)).collect(),
        (Some(list), Some(k)) if k == list.len() => {
            list.iter().map(|&[x, y, t]| Pose::new(x * scale, y * scale, t)).collect()
        }
        _ => default_robot_poses(&footprint, &start, goal, n, radius, &arena, &obstacles),
    };
    let scenario = Scenario {
        name: file.name.clone(),
        shape,
        arena,
        obstacles,
        footprint,
        start,
        goal,
        robots,
        scale,
        seed: file.seed,
    };
    validate(&scenario, radius)?;
    Ok(scenario)
}

fn obstacle_clearance(p: Vec2, obstacles: &[PlacedFootprint]) -> f64 {
    obstacles.iter().map(|o| o.signed_distance(p)).fold(f64::INFINITY, f64::min)
}

fn robot_spot_free(p: Vec2, radius: f64, footprint: &Footprint, start: &Pose, arena: &Rect, obstacles: &[PlacedFootprint]) -> bool {
    arena.clearance(p) >= radius
        && obstacle_clearance(p, obstacles) >= radius
        && footprint.signed_distance(start.inverse_transform_point(p)) >= radius + 0.05
}

/// Robots on an arc behind the object, facing it, centered on the
/// direction away from the goal. Spots blocked by walls or obstacles are
/// pushed further out or swept around the object.
pub fn default_robot_poses(
    footprint: &Footprint,
    start: &Pose,
    goal: Vec2,
    n: usize,
    radius: f64,
    arena: &Rect,
    obstacles: &[PlacedFootprint],
) -> Vec<Pose> {
    let center = start.position();
    let back = (center - goal).normalized().map(|v| v.angle()).unwrap_or(std::f64::consts::PI);
    let mut placed: Vec<Vec2> = Vec::with_capacity(n);
    let base_r = footprint.circumradius() + radius + 0.3;
    'robot: for i in 0..n {
        for ring in 0..6 {
            let r = base_r + 0.4 * ring as f64;
            let step = (3.0 * radius / r).min(std::f64::consts::TAU / n as f64);
            // alternate sides of the back direction: 0, +1, -1, +2, ...
            for k in 0..64usize {
                let slot = i as f64 + k as f64;
                let offset = slot - (n as f64 - 1.0) / 2.0;
                let a = back + offset * step;
                let p = center + conpose_core::math::Vec2::from_angle(a) * r;
                let free = robot_spot_free(p, radius, footprint, start, arena, obstacles)
                    && placed.iter().all(|q| q.distance(p) >= 2.0 * radius + 0.1);
                if free {
                    placed.push(p);
                    continue 'robot;
                }
            }
        }
        // give up: validation reports the clash
        placed.push(center + Vec2::from_angle(back) * base_r);
    }
    placed.into_iter().map(|p| Pose::new(p.x, p.y, (center - p).angle())).collect()
}

fn validate(s: &Scenario, radius: f64) -> Result<(), ScenarioError> {
    if !s.start.is_finite() {
        return Err(invalid("object.start", "must be finite"));
    }
    let samples = s.footprint.boundary_samples(0.05);
    for p in &samples {
        let w = s.start.transform_point(*p);
        if !s.arena.contains(w) {
            return Err(invalid("object.start", "object leaves the arena"));
        }
        if obstacle_clearance(w, &s.obstacles) < 0.0 {
            return Err(invalid("object.start", "object overlaps an obstacle"));
        }
    }
    if !s.arena.contains(s.goal) {
        return Err(invalid("object.goal", "goal outside the arena"));
    }
    if obstacle_clearance(s.goal, &s.obstacles) <= 0.0 {
        return Err(invalid("object.goal", "goal inside an obstacle"));
    }
    for (i, r) in s.robots.iter().enumerate() {
        let p = r.position();
        if !robot_spot_free(p, radius, &s.footprint, &s.start, &s.arena, &s.obstacles) {
            return Err(invalid(format!("robots[{i}]"), "robot overlaps the object, an obstacle or a wall"));
        }
        for (j, q) in s.robots.iter().enumerate().skip(i + 1) {
            if p.distance(q.position()) < 2.0 * radius {
                return Err(invalid(format!("robots[{j}]"), format!("robot overlaps robot {i}")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenes_load_for_every_shape() {
        for name in BUNDLED_SCENES {
            for shape in ShapeKind::ALL {
                let opts = LoadOptions { shape: Some(shape), n_robots: Some(3), ..Default::default() };
                let s = load_scenario(name, &opts).unwrap_or_else(|e| panic!("{name} {shape}: {e}"));
                assert_eq!(s.robots.len(), 3);
                assert_eq!(s.arena.width(), 10.0);
            }
        }
    }

    #[test]
    fn scaling_for_large_fleets() {
        let opts = LoadOptions { shape: Some(ShapeKind::Cuboid), n_robots: Some(8), ..Default::default() };
        let s = load_scenario("scene-1", &opts).unwrap();
        assert_eq!((s.arena.width(), s.arena.height()), (20.0, 30.0));
        assert_eq!(s.scale, 2.0);
        assert_eq!(s.robots.len(), 8);
        assert!((s.footprint.perimeter() - 16.0).abs() < 1e-9);
    }

    #[test]
    fn goal_in_obstacle_is_rejected() {
        let mut file = bundled_scene("scene-2").unwrap();
        file.object.goal = [6.0, 7.5];
        let err = build_scenario(&file, &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, ScenarioError::Validation { ref field, .. } if field == "object.goal"), "{err}");
    }

    #[test]
    fn polygon_obstacle_keeps_drawn_position() {
        let s = load_scenario("scene-4", &LoadOptions::default()).unwrap();
        let tri = s.obstacles.last().unwrap();
        assert!(tri.signed_distance(Vec2::new(9.5, 11.6)) < 0.0);
        assert!(tri.signed_distance(Vec2::new(8.5, 12.8)) > 0.0);
    }

    #[test]
    fn explicit_robots_are_checked() {
        let mut file = bundled_scene("scene-1").unwrap();
        file.robots = Some(vec![[5.0, 0.6, 1.57], [5.1, 0.6, 1.57]]);
        let err = build_scenario(&file, &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, ScenarioError::Validation { ref field, .. } if field == "robots[1]"), "{err}");
    }
}
