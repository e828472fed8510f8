//! Global reference path: 8-connected A* over a grid rasterized from the
//! perceived fixed points only — movable points are not obstacles.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector2;
use thiserror::Error;

use crate::Pose2;

#[derive(Debug, Error)]
pub enum AstarError {
    #[error("start or goal outside planning bounds")]
    OutsideBounds,
    #[error("goal cell blocked after inflation")]
    GoalBlocked,
    #[error("no path between start and goal")]
    Unreachable,
}

/// Arc-length parameterized polyline from the robot cell to the goal cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferencePath {
    points: Vec<Vector2<f64>>,
    cumlen: Vec<f64>,
}

impl ReferencePath {
    pub fn from_points(points: Vec<Vector2<f64>>) -> Self {
        let mut cumlen = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumlen.push(0.0);
        for w in points.windows(2) {
            acc += (w[1] - w[0]).norm();
            cumlen.push(acc);
        }
        Self { points, cumlen }
    }

    pub fn points(&self) -> &[Vector2<f64>] {
        &self.points
    }

    pub fn total_length(&self) -> f64 {
        *self.cumlen.last().unwrap_or(&0.0)
    }

    pub fn end(&self) -> Vector2<f64> {
        *self.points.last().expect("nonempty path")
    }

    /// Point at the given arc length (clamped to the ends).
    pub fn point_at(&self, s: f64) -> Vector2<f64> {
        if self.points.len() == 1 || s <= 0.0 {
            return self.points[0];
        }
        if s >= self.total_length() {
            return self.end();
        }
        let idx = match self
            .cumlen
            .binary_search_by(|c| c.partial_cmp(&s).unwrap())
        {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let seg = (self.points[idx + 1] - self.points[idx]).norm();
        if seg < 1e-12 {
            return self.points[idx];
        }
        let t = (s - self.cumlen[idx]) / seg;
        self.points[idx] + (self.points[idx + 1] - self.points[idx]) * t
    }

    /// Arc length of the closest point on the path to `p`.
    pub fn project(&self, p: Vector2<f64>) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..self.points.len().saturating_sub(1) {
            let a = self.points[i];
            let b = self.points[i + 1];
            let e = b - a;
            let len2 = e.dot(&e);
            let t = if len2 < 1e-18 {
                0.0
            } else {
                ((p - a).dot(&e) / len2).clamp(0.0, 1.0)
            };
            let closest = a + e * t;
            let d = (p - closest).norm();
            if d < best.0 {
                best = (d, self.cumlen[i] + e.norm() * t);
            }
        }
        if self.points.len() == 1 {
            0.0
        } else {
            best.1
        }
    }

    /// Distance from `p` to the path polyline.
    pub fn distance_to(&self, p: Vector2<f64>) -> f64 {
        if self.points.len() == 1 {
            return (p - self.points[0]).norm();
        }
        let s = self.project(p);
        (self.point_at(s) - p).norm()
    }
}

/// Occupancy raster shared by the planner and its tests.
pub struct Grid {
    pub min: Vector2<f64>,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub blocked: Vec<bool>,
}

impl Grid {
    pub fn rasterize(
        fixed_points: &[Vector2<f64>],
        bounds_min: Vector2<f64>,
        bounds_max: Vector2<f64>,
        resolution: f64,
        inflation: f64,
    ) -> Self {
        let width = ((bounds_max.x - bounds_min.x) / resolution).ceil() as usize + 1;
        let height = ((bounds_max.y - bounds_min.y) / resolution).ceil() as usize + 1;
        let mut blocked = vec![false; width * height];
        let reach = (inflation / resolution).ceil() as i64;
        for p in fixed_points {
            let cx = ((p.x - bounds_min.x) / resolution).round() as i64;
            let cy = ((p.y - bounds_min.y) / resolution).round() as i64;
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let (x, y) = (cx + dx, cy + dy);
                    if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
                        continue;
                    }
                    let center = Vector2::new(
                        bounds_min.x + x as f64 * resolution,
                        bounds_min.y + y as f64 * resolution,
                    );
                    if (center - p).norm() <= inflation {
                        blocked[y as usize * width + x as usize] = true;
                    }
                }
            }
        }
        Self {
            min: bounds_min,
            resolution,
            width,
            height,
            blocked,
        }
    }

    pub fn cell_of(&self, p: Vector2<f64>) -> Option<(usize, usize)> {
        let x = ((p.x - self.min.x) / self.resolution).round();
        let y = ((p.y - self.min.y) / self.resolution).round();
        if x < 0.0 || y < 0.0 || x as usize >= self.width || y as usize >= self.height {
            return None;
        }
        Some((x as usize, y as usize))
    }

    pub fn center(&self, (x, y): (usize, usize)) -> Vector2<f64> {
        Vector2::new(
            self.min.x + x as f64 * self.resolution,
            self.min.y + y as f64 * self.resolution,
        )
    }

    pub fn is_blocked(&self, (x, y): (usize, usize)) -> bool {
        self.blocked[y * self.width + x]
    }
}

#[derive(PartialEq)]
struct QueueEntry {
    f: f64,
    g: f64,
    idx: usize,
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap by f, then g, then index: deterministic expansion order.
        other
            .f
            .total_cmp(&self.f)
            .then(other.g.total_cmp(&self.g))
            .then(other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NEIGHBORS: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

fn octile(a: (usize, usize), b: (usize, usize), resolution: f64) -> f64 {
    let dx = (a.0 as f64 - b.0 as f64).abs();
    let dy = (a.1 as f64 - b.1 as f64).abs();
    resolution * (dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy))
}

/// 8-connected A* with the octile heuristic over the inflated raster. The
/// start cell is force-allowed (the robot is already there); a blocked goal
/// cell or an exhausted frontier is an unreachable error.
pub fn astar_reference(
    fixed_points: &[Vector2<f64>],
    bounds_min: Vector2<f64>,
    bounds_max: Vector2<f64>,
    resolution: f64,
    start: &Pose2,
    goal: &Pose2,
    inflation: f64,
) -> Result<ReferencePath, AstarError> {
    let mut grid = Grid::rasterize(fixed_points, bounds_min, bounds_max, resolution, inflation);
    let start_cell = grid.cell_of(start.position()).ok_or(AstarError::OutsideBounds)?;
    let goal_cell = grid.cell_of(goal.position()).ok_or(AstarError::OutsideBounds)?;
    // The robot demonstrably occupies the start neighborhood; leaving it
    // inflated can wall the frontier shut in tight spots.
    let reach = (inflation / resolution).ceil() as i64;
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let x = start_cell.0 as i64 + dx;
            let y = start_cell.1 as i64 + dy;
            if x >= 0
                && y >= 0
                && (x as usize) < grid.width
                && (y as usize) < grid.height
                && (dx * dx + dy * dy) as f64 <= (reach * reach) as f64
            {
                let idx = y as usize * grid.width + x as usize;
                grid.blocked[idx] = false;
            }
        }
    }
    if grid.is_blocked(goal_cell) {
        return Err(AstarError::GoalBlocked);
    }
    let cells = grid_search(&grid, start_cell, goal_cell)?.ok_or(AstarError::Unreachable)?;

    // Cell centers, densified to half-resolution spacing.
    let mut points = Vec::with_capacity(cells.len() * 2);
    points.push(grid.center(cells[0]));
    for w in cells.windows(2) {
        let a = grid.center(w[0]);
        let b = grid.center(w[1]);
        let pieces = ((b - a).norm() / (resolution * 0.5)).ceil().max(1.0) as usize;
        for k in 1..=pieces {
            points.push(a + (b - a) * (k as f64 / pieces as f64));
        }
    }
    Ok(ReferencePath::from_points(points))
}

/// Deterministic A* over the raster. `Ok(None)` only for an internal
/// inconsistency; unreachable is reported through the error.
fn grid_search(
    grid: &Grid,
    start: (usize, usize),
    goal: (usize, usize),
) -> Result<Option<Vec<(usize, usize)>>, AstarError> {
    let idx_of = |(x, y): (usize, usize)| y * grid.width + x;
    let n = grid.width * grid.height;
    let mut g_cost = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    g_cost[idx_of(start)] = 0.0;
    heap.push(QueueEntry {
        f: octile(start, goal, grid.resolution),
        g: 0.0,
        idx: idx_of(start),
    });
    while let Some(QueueEntry { idx, g, .. }) = heap.pop() {
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        let cell = (idx % grid.width, idx / grid.width);
        if cell == goal {
            let mut path = vec![cell];
            let mut cur = idx;
            while parent[cur] != usize::MAX {
                cur = parent[cur];
                path.push((cur % grid.width, cur / grid.width));
            }
            path.reverse();
            return Ok(Some(path));
        }
        for (dx, dy) in NEIGHBORS {
            let nx = cell.0 as i64 + dx;
            let ny = cell.1 as i64 + dy;
            if nx < 0 || ny < 0 || nx as usize >= grid.width || ny as usize >= grid.height {
                continue;
            }
            let ncell = (nx as usize, ny as usize);
            if grid.is_blocked(ncell) && ncell != start {
                continue;
            }
            let nidx = idx_of(ncell);
            if closed[nidx] {
                continue;
            }
            let step = if dx == 0 || dy == 0 {
                grid.resolution
            } else {
                grid.resolution * std::f64::consts::SQRT_2
            };
            let ng = g + step;
            if ng < g_cost[nidx] - 1e-12 {
                g_cost[nidx] = ng;
                parent[nidx] = idx;
                heap.push(QueueEntry {
                    f: ng + octile(ncell, goal, grid.resolution),
                    g: ng,
                    idx: nidx,
                });
            }
        }
    }
    Err(AstarError::Unreachable)
}
