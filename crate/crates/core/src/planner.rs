//! Global object path planning.
//!
//! A clearance-aware costmap is searched with 8-connected A*, the resulting
//! cell path is reduced to key waypoints with Ramer-Douglas-Peucker, and the
//! key waypoints drive the target pushing direction and its angular
//! tolerance.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::f64::consts::SQRT_2;

use thiserror::Error;

use crate::geometry::Footprint;
use crate::math::{point_segment_distance, Pose, Vec2};

pub const DEFAULT_RESOLUTION: f64 = 0.1;
pub const DEFAULT_RDP_EPSILON: f64 = 0.25;
pub const DEFAULT_C_MAX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("costmap resolution must be positive, got {0}")]
    InvalidResolution(f64),
    #[error("start ({0}, {1}) lies outside the costmap")]
    StartOutOfBounds(f64, f64),
    #[error("goal ({0}, {1}) lies outside the costmap")]
    GoalOutOfBounds(f64, f64),
    #[error("start lies in a lethal cell")]
    StartInLethal,
    #[error("goal lies in a lethal cell")]
    GoalInLethal,
    #[error("no path between start and goal")]
    NoPath,
    #[error("target and object position coincide")]
    CoincidentPoints,
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Self { min, max }
    }

    /// Arena `[0, width] x [0, height]`.
    pub fn from_size(width: f64, height: f64) -> Self {
        Self::new(Vec2::ZERO, Vec2::new(width, height))
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Distance from an interior point to the nearest side, negative outside.
    pub fn clearance(&self, p: Vec2) -> f64 {
        (p.x - self.min.x).min(self.max.x - p.x).min(p.y - self.min.y).min(self.max.y - p.y)
    }
}

/// A footprint placed in the world.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedFootprint {
    pub footprint: Footprint,
    pub pose: Pose,
}

impl PlacedFootprint {
    pub fn new(footprint: Footprint, pose: Pose) -> Self {
        Self { footprint, pose }
    }

    pub fn signed_distance(&self, world: Vec2) -> f64 {
        self.footprint.signed_distance(self.pose.inverse_transform_point(world))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostmapConfig {
    pub resolution: f64,
    pub r_safety: f64,
    pub c_max: f64,
    /// Treat the arena border like an obstacle boundary.
    pub inflate_walls: bool,
}

impl CostmapConfig {
    pub fn new(r_safety: f64) -> Self {
        Self { resolution: DEFAULT_RESOLUTION, r_safety, c_max: DEFAULT_C_MAX, inflate_walls: true }
    }
}

/// Grid costmap; lethal cells hold `f64::INFINITY`.
#[derive(Debug, Clone, PartialEq)]
pub struct Costmap {
    pub origin: Vec2,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub cost: Vec<f64>,
    pub r_safety: f64,
    pub c_max: f64,
}

/// Integer cell coordinates `(x, y)`.
pub type Cell = (usize, usize);

impl Costmap {
    pub const LETHAL: f64 = f64::INFINITY;

    pub fn index(&self, (x, y): Cell) -> usize {
        y * self.width + x
    }

    pub fn cell_center(&self, (x, y): Cell) -> Vec2 {
        self.origin + Vec2::new((x as f64 + 0.5) * self.resolution, (y as f64 + 0.5) * self.resolution)
    }

    pub fn cell_of(&self, p: Vec2) -> Option<Cell> {
        let fx = ((p.x - self.origin.x) / self.resolution).floor();
        let fy = ((p.y - self.origin.y) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn cost_at(&self, cell: Cell) -> f64 {
        self.cost[self.index(cell)]
    }

    pub fn is_lethal(&self, cell: Cell) -> bool {
        !self.cost_at(cell).is_finite()
    }

    /// Gradient cost for a given clearance. Lethal at or below `r_safety`.
    pub fn cost_for_clearance(clearance: f64, r_safety: f64, c_max: f64) -> f64 {
        if clearance <= r_safety {
            Self::LETHAL
        } else if clearance <= 1.5 * r_safety {
            c_max * (1.5 * r_safety - clearance) / (0.5 * r_safety)
        } else {
            0.0
        }
    }

    fn neighbors(&self, (x, y): Cell) -> impl Iterator<Item = (Cell, f64)> + '_ {
        const STEPS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
        STEPS.iter().filter_map(move |&(dx, dy)| {
            let nx = x as i64 + dx;
            let ny = y as i64 + dy;
            if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
                return None;
            }
            let next = (nx as usize, ny as usize);
            if self.is_lethal(next) {
                return None;
            }
            if dx != 0 && dy != 0 {
                // no corner cutting past lethal cells
                if self.is_lethal((nx as usize, y)) || self.is_lethal((x, ny as usize)) {
                    return None;
                }
            }
            let step = if dx != 0 && dy != 0 { SQRT_2 } else { 1.0 } * self.resolution;
            Some((next, step * (1.0 + self.cost_at(next))))
        })
    }

    /// Cost of moving along a cell sequence under the planner's edge costs.
    pub fn path_cost(&self, cells: &[Cell]) -> f64 {
        cells
            .windows(2)
            .map(|w| {
                let diag = w[0].0 != w[1].0 && w[0].1 != w[1].1;
                let step = if diag { SQRT_2 } else { 1.0 } * self.resolution;
                step * (1.0 + self.cost_at(w[1]))
            })
            .sum()
    }
}

/// Builds the clearance costmap over `arena`.
pub fn build_costmap(arena: Rect, obstacles: &[PlacedFootprint], config: &CostmapConfig) -> Result<Costmap, PlanError> {
    if !(config.resolution > 0.0 && config.resolution.is_finite()) {
        return Err(PlanError::InvalidResolution(config.resolution));
    }
    let width = (arena.width() / config.resolution).ceil().max(1.0) as usize;
    let height = (arena.height() / config.resolution).ceil().max(1.0) as usize;
    let mut map = Costmap {
        origin: arena.min,
        resolution: config.resolution,
        width,
        height,
        cost: vec![0.0; width * height],
        r_safety: config.r_safety,
        c_max: config.c_max,
    };
    for y in 0..height {
        for x in 0..width {
            let c = map.cell_center((x, y));
            let mut clearance = obstacles.iter().map(|o| o.signed_distance(c)).fold(f64::INFINITY, f64::min);
            if config.inflate_walls {
                clearance = clearance.min(arena.clearance(c));
            }
            let idx = map.index((x, y));
            map.cost[idx] = Costmap::cost_for_clearance(clearance, config.r_safety, config.c_max);
        }
    }
    Ok(map)
}

/// Planned object path: dense waypoints plus the RDP key waypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectPath {
    pub waypoints: Vec<Vec2>,
    pub cells: Vec<Cell>,
    pub simplified: Vec<Vec2>,
}

impl ObjectPath {
    pub fn key_waypoint_count(&self) -> usize {
        self.simplified.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct OpenNode {
    f: f64,
    cell: Cell,
}

impl PartialEq for OpenNode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for OpenNode {}

impl Ord for OpenNode {
    // BinaryHeap is a max-heap: reverse so the smallest (f, y, x) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.cell.1.cmp(&self.cell.1))
            .then_with(|| other.cell.0.cmp(&self.cell.0))
    }
}

impl PartialOrd for OpenNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn octile(a: Cell, b: Cell, resolution: f64) -> f64 {
    let dx = a.0.abs_diff(b.0) as f64;
    let dy = a.1.abs_diff(b.1) as f64;
    (dx.max(dy) + (SQRT_2 - 1.0) * dx.min(dy)) * resolution
}

/// A* over the costmap's 8-connected grid. Returns the cell sequence.
pub fn astar_cells(costmap: &Costmap, start: Cell, goal: Cell) -> Option<Vec<Cell>> {
    let n = costmap.width * costmap.height;
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    let s = costmap.index(start);
    g[s] = 0.0;
    open.push(OpenNode { f: octile(start, goal, costmap.resolution), cell: start });
    while let Some(OpenNode { cell, .. }) = open.pop() {
        let ci = costmap.index(cell);
        if closed[ci] {
            continue;
        }
        closed[ci] = true;
        if cell == goal {
            let mut cells = vec![goal];
            let mut cur = ci;
            while parent[cur] != usize::MAX {
                cur = parent[cur];
                cells.push((cur % costmap.width, cur / costmap.width));
            }
            cells.reverse();
            return Some(cells);
        }
        for (next, step) in costmap.neighbors(cell) {
            let ni = costmap.index(next);
            if closed[ni] {
                continue;
            }
            let cand = g[ci] + step;
            if cand < g[ni] {
                g[ni] = cand;
                parent[ni] = ci;
                open.push(OpenNode { f: cand + octile(next, goal, costmap.resolution), cell: next });
            }
        }
    }
    None
}

/// Plans the global object path. Key waypoints are left empty; call
/// [`simplify_path`] to fill them.
pub fn plan_object_path(costmap: &Costmap, start: Vec2, goal: Vec2) -> Result<ObjectPath, PlanError> {
    let sc = costmap.cell_of(start).ok_or(PlanError::StartOutOfBounds(start.x, start.y))?;
    let gc = costmap.cell_of(goal).ok_or(PlanError::GoalOutOfBounds(goal.x, goal.y))?;
    if costmap.is_lethal(sc) {
        return Err(PlanError::StartInLethal);
    }
    if costmap.is_lethal(gc) {
        return Err(PlanError::GoalInLethal);
    }
    let cells = astar_cells(costmap, sc, gc).ok_or(PlanError::NoPath)?;
    let mut waypoints: Vec<Vec2> = cells.iter().map(|&c| costmap.cell_center(c)).collect();
    if waypoints.len() == 1 {
        waypoints.push(goal);
    }
    let last = waypoints.len() - 1;
    waypoints[0] = start;
    waypoints[last] = goal;
    Ok(ObjectPath { waypoints, cells, simplified: Vec::new() })
}

/// Ramer-Douglas-Peucker simplification of `points`, returning the indices
/// of the kept points (always including both endpoints).
pub fn rdp_indices(points: &[Vec2], epsilon: f64) -> Vec<usize> {
    if points.len() <= 2 {
        return (0..points.len()).collect();
    }
    let mut keep = vec![false; points.len()];
    keep[0] = true;
    keep[points.len() - 1] = true;
    let mut stack = vec![(0usize, points.len() - 1)];
    while let Some((lo, hi)) = stack.pop() {
        if hi <= lo + 1 {
            continue;
        }
        let (mut worst, mut worst_d) = (lo, -1.0);
        for i in (lo + 1)..hi {
            let d = point_segment_distance(points[i], points[lo], points[hi]).0;
            if d > worst_d {
                worst = i;
                worst_d = d;
            }
        }
        if worst_d > epsilon {
            keep[worst] = true;
            stack.push((lo, worst));
            stack.push((worst, hi));
        }
    }
    keep.iter().enumerate().filter(|(_, k)| **k).map(|(i, _)| i).collect()
}

/// Fills `path.simplified` with RDP key waypoints and returns their count K.
pub fn simplify_path(path: &mut ObjectPath, rdp_epsilon: f64) -> usize {
    path.simplified = rdp_indices(&path.waypoints, rdp_epsilon).into_iter().map(|i| path.waypoints[i]).collect();
    path.simplified.len()
}

/// Bearing from the object center to a key waypoint, in `(-π, π]`.
pub fn target_direction(object_pos: Vec2, key_waypoint: Vec2) -> Result<f64, PlanError> {
    let d = key_waypoint - object_pos;
    if d.norm() < 1e-9 {
        return Err(PlanError::CoincidentPoints);
    }
    Ok(d.y.atan2(d.x))
}

/// Largest admissible angle between the net pushing force and the target
/// direction such that the object stays within `d_repl` of the segment
/// toward a waypoint `d_wp` away.
pub fn angular_tolerance(d_repl: f64, d_wp: f64) -> f64 {
    d_repl.atan2(d_wp.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use core::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
    use proptest::prelude::*;

    /// Arena whose cell centers fall on multiples of 0.1 m.
    fn aligned_arena(half: f64) -> Rect {
        Rect::new(Vec2::new(-half - 0.05, -half - 0.05), Vec2::new(half + 0.05, half + 0.05))
    }

    fn unit_square_at(x: f64, y: f64) -> PlacedFootprint {
        PlacedFootprint::new(Footprint::rectangle(1.0, 1.0).unwrap(), Pose::new(x, y, 0.0))
    }

    /// Plain Dijkstra with the same edge model and no heuristic.
    fn dijkstra_cost(map: &Costmap, start: Cell, goal: Cell) -> Option<f64> {
        let n = map.width * map.height;
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        dist[map.index(start)] = 0.0;
        loop {
            let mut best = None;
            for i in 0..n {
                if !done[i] && dist[i].is_finite() && best.is_none_or(|b: usize| dist[i] < dist[b]) {
                    best = Some(i);
                }
            }
            let b = best?;
            if b == map.index(goal) {
                return Some(dist[b]);
            }
            done[b] = true;
            let cell = (b % map.width, b / map.width);
            for (next, step) in map.neighbors(cell) {
                let ni = map.index(next);
                if dist[b] + step < dist[ni] {
                    dist[ni] = dist[b] + step;
                }
            }
        }
    }

    #[test]
    fn empty_arena_has_zero_cost_away_from_walls() {
        let mut cfg = CostmapConfig::new(1.0);
        cfg.inflate_walls = false;
        let map = build_costmap(aligned_arena(5.0), &[], &cfg).unwrap();
        assert!(map.cost.iter().all(|&c| c == 0.0));

        cfg.inflate_walls = true;
        let map = build_costmap(aligned_arena(5.0), &[], &cfg).unwrap();
        for y in 0..map.height {
            for x in 0..map.width {
                let c = map.cell_center((x, y));
                if aligned_arena(5.0).clearance(c) > 1.5 {
                    assert_eq!(map.cost_at((x, y)), 0.0);
                }
            }
        }
    }

    #[test]
    fn gradient_band() {
        let mut cfg = CostmapConfig::new(2.0);
        cfg.inflate_walls = false;
        let map = build_costmap(aligned_arena(10.0), &[unit_square_at(0.0, 0.0)], &cfg).unwrap();
        // 2.5 m from the obstacle's right face: middle of the band
        let mid = map.cell_of(Vec2::new(3.0, 0.0)).unwrap();
        assert_relative_eq!(map.cost_at(mid), cfg.c_max / 2.0, epsilon = 1e-9);
        let far = map.cell_of(Vec2::new(3.6, 0.0)).unwrap();
        assert_eq!(map.cost_at(far), 0.0);
        let near = map.cell_of(Vec2::new(2.0, 0.0)).unwrap();
        assert!(map.is_lethal(near));
        assert_eq!(Costmap::cost_for_clearance(3.1, 2.0, 10.0), 0.0);
    }

    #[test]
    fn straight_path_in_empty_arena() {
        let mut cfg = CostmapConfig::new(1.0);
        cfg.inflate_walls = false;
        let map = build_costmap(aligned_arena(10.0), &[], &cfg).unwrap();
        let path = plan_object_path(&map, Vec2::new(0.0, 0.0), Vec2::new(5.0, 0.0)).unwrap();
        assert_relative_eq!(crate::math::polyline_length(&path.waypoints), 5.0, epsilon = 1e-9);
        assert_eq!(path.waypoints[0], Vec2::new(0.0, 0.0));
        assert_eq!(*path.waypoints.last().unwrap(), Vec2::new(5.0, 0.0));
    }

    #[test]
    fn path_through_wall_gap_matches_dijkstra() {
        let mut cfg = CostmapConfig::new(0.3);
        cfg.inflate_walls = false;
        let arena = aligned_arena(3.0);
        // wall at x = 0 leaving a gap of width 1.6 around y = 0
        let wall_upper = PlacedFootprint::new(Footprint::rectangle(0.2, 2.0).unwrap(), Pose::new(0.0, 1.8, 0.0));
        let wall_lower = PlacedFootprint::new(Footprint::rectangle(0.2, 2.0).unwrap(), Pose::new(0.0, -1.8, 0.0));
        let map = build_costmap(arena, &[wall_upper, wall_lower], &cfg).unwrap();
        let start = Vec2::new(-2.0, 2.0);
        let goal = Vec2::new(2.0, -2.0);
        let path = plan_object_path(&map, start, goal).unwrap();
        let crossing = path.waypoints.windows(2).find(|w| w[0].x < 0.0 && w[1].x >= 0.0).unwrap();
        assert!(crossing[1].y.abs() < 0.15, "crossed at {:?}", crossing);
        let astar = map.path_cost(&path.cells);
        let oracle = dijkstra_cost(&map, path.cells[0], *path.cells.last().unwrap()).unwrap();
        assert_relative_eq!(astar, oracle, epsilon = 1e-9);
        assert!(path.cells.iter().all(|&c| !map.is_lethal(c)));
        for w in path.cells.windows(2) {
            assert!(w[0].0.abs_diff(w[1].0) <= 1 && w[0].1.abs_diff(w[1].1) <= 1);
        }
    }

    #[test]
    fn lethal_goal_and_disconnected_grid() {
        let mut cfg = CostmapConfig::new(0.3);
        cfg.inflate_walls = false;
        let map = build_costmap(aligned_arena(3.0), &[unit_square_at(0.0, 0.0)], &cfg).unwrap();
        assert_eq!(plan_object_path(&map, Vec2::new(-2.0, 0.0), Vec2::new(0.0, 0.0)), Err(PlanError::GoalInLethal));
        assert_eq!(plan_object_path(&map, Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0)), Err(PlanError::StartInLethal));
        let full_wall = PlacedFootprint::new(Footprint::rectangle(0.2, 20.0).unwrap(), Pose::IDENTITY);
        let map = build_costmap(aligned_arena(3.0), &[full_wall], &cfg).unwrap();
        assert_eq!(plan_object_path(&map, Vec2::new(-2.0, 0.0), Vec2::new(2.0, 0.0)), Err(PlanError::NoPath));
    }

    #[test]
    fn rdp_examples() {
        let collinear: Vec<Vec2> = (0..10).map(|i| Vec2::new(i as f64 * 0.3, i as f64 * 0.1)).collect();
        let mut path = ObjectPath { waypoints: collinear, cells: Vec::new(), simplified: Vec::new() };
        assert_eq!(simplify_path(&mut path, 0.25), 2);
        let mut l: Vec<Vec2> = (0..=10).map(|i| Vec2::new(i as f64 * 0.2, 0.0)).collect();
        l.extend((1..=10).map(|i| Vec2::new(2.0, i as f64 * 0.2)));
        let mut path = ObjectPath { waypoints: l, cells: Vec::new(), simplified: Vec::new() };
        assert_eq!(simplify_path(&mut path, 0.25), 3);
        assert_eq!(path.simplified[1], Vec2::new(2.0, 0.0));
    }

    #[test]
    fn direction_and_tolerance_examples() {
        assert_relative_eq!(target_direction(Vec2::ZERO, Vec2::new(3.0, 4.0)).unwrap(), 0.92730, epsilon = 1e-5);
        assert_relative_eq!(target_direction(Vec2::ZERO, Vec2::new(-1.0, 0.0)).unwrap(), PI);
        assert_relative_eq!(target_direction(Vec2::new(2.0, 2.0), Vec2::new(2.0, 5.0)).unwrap(), FRAC_PI_2);
        assert_eq!(target_direction(Vec2::ZERO, Vec2::ZERO), Err(PlanError::CoincidentPoints));
        assert_relative_eq!(angular_tolerance(0.5, 0.5), FRAC_PI_4);
        assert_relative_eq!(angular_tolerance(0.5, 0.0), FRAC_PI_2);
        assert_relative_eq!(angular_tolerance(0.5, 5.0), 0.09966, epsilon = 1e-5);
    }

    proptest! {
        #[test]
        fn rdp_deviation_bounded(ys in proptest::collection::vec(-1.0f64..1.0, 3..40), eps in 0.05f64..0.5) {
            let pts: Vec<Vec2> = ys.iter().enumerate().map(|(i, &y)| Vec2::new(i as f64 * 0.1, y)).collect();
            let kept = rdp_indices(&pts, eps);
            prop_assert_eq!(kept[0], 0);
            prop_assert_eq!(*kept.last().unwrap(), pts.len() - 1);
            for w in kept.windows(2) {
                for p in &pts[w[0]..=w[1]] {
                    prop_assert!(point_segment_distance(*p, pts[w[0]], pts[w[1]]).0 <= eps + 1e-12);
                }
            }
        }

        #[test]
        fn tolerance_strictly_decreasing(d in 0.01f64..2.0, x in 0.0f64..50.0, dx in 1e-3f64..5.0) {
            prop_assert!(angular_tolerance(d, x + dx) < angular_tolerance(d, x));
        }

        #[test]
        fn astar_is_optimal_on_random_grids(seed_obstacles in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 0..4)) {
            let mut cfg = CostmapConfig::new(0.2);
            cfg.resolution = 0.2;
            let obstacles: Vec<_> = seed_obstacles.iter().map(|&(x, y)| unit_square_at(x, y)).collect();
            let map = build_costmap(aligned_arena(3.0), &obstacles, &cfg).unwrap();
            let start = Vec2::new(-2.7, -2.7);
            let goal = Vec2::new(2.7, 2.7);
            match plan_object_path(&map, start, goal) {
                Ok(path) => {
                    let oracle = dijkstra_cost(&map, path.cells[0], *path.cells.last().unwrap()).unwrap();
                    prop_assert!((map.path_cost(&path.cells) - oracle).abs() < 1e-9);
                    prop_assert!(path.cells.iter().all(|&c| !map.is_lethal(c)));
                }
                Err(PlanError::NoPath) => {
                    let (s, g) = (map.cell_of(start).unwrap(), map.cell_of(goal).unwrap());
                    prop_assert!(dijkstra_cost(&map, s, g).is_none());
                }
                Err(_) => {}
            }
        }
    }
}
