//! Built-in scenario library: the three canonical single-obstacle cases, the
//! mixed fixed/movable corridor generator, and the failed-push and curtain
//! reproductions.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::world::{CameraConfig, LidarModel, ObstacleBody, ObstacleClass, RobotSpec, WorldScenario};
use crate::Pose2;

const WALL_THICKNESS: f64 = 0.2;
const LIGHT_RESISTANCE: f64 = 1.0;
const HEAVY_RESISTANCE: f64 = 10.0;
const PUSH_CAPABILITY: f64 = 5.0;

fn rect_body(
    id: u32,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    class: ObstacleClass,
    movable: bool,
    resistance: f64,
) -> ObstacleBody {
    let hw = w / 2.0;
    let hh = h / 2.0;
    let height = match class {
        ObstacleClass::Box => 0.5,
        ObstacleClass::Curtain => 1.2,
        ObstacleClass::Shelf => 0.9,
        ObstacleClass::Wall => 1.2,
    };
    ObstacleBody {
        id,
        polygon: vec![
            Vector2::new(cx - hw, cy - hh),
            Vector2::new(cx + hw, cy - hh),
            Vector2::new(cx + hw, cy + hh),
            Vector2::new(cx - hw, cy + hh),
        ],
        movable_truth: movable,
        push_resistance: resistance,
        class,
        height,
    }
}

fn arena_walls() -> Vec<ObstacleBody> {
    let t = WALL_THICKNESS;
    vec![
        rect_body(1000, 4.5, t / 2.0, 9.0, t, ObstacleClass::Wall, false, HEAVY_RESISTANCE),
        rect_body(1001, 4.5, 6.0 - t / 2.0, 9.0, t, ObstacleClass::Wall, false, HEAVY_RESISTANCE),
        rect_body(1002, t / 2.0, 3.0, t, 6.0, ObstacleClass::Wall, false, HEAVY_RESISTANCE),
        rect_body(1003, 9.0 - t / 2.0, 3.0, t, 6.0, ObstacleClass::Wall, false, HEAVY_RESISTANCE),
    ]
}

fn base_scenario(name: &str, obstacles: Vec<ObstacleBody>, seed: u64) -> WorldScenario {
    WorldScenario {
        name: name.into(),
        bounds_min: Vector2::new(0.0, 0.0),
        bounds_max: Vector2::new(9.0, 6.0),
        obstacles,
        robot: RobotSpec {
            start: Pose2::new(0.8, 3.0, 0.0),
            goal: Pose2::new(7.2, 3.0, 0.0),
            length: 0.322,
            width: 0.220,
            push_capability: PUSH_CAPABILITY,
        },
        lidar: LidarModel::default(),
        camera: CameraConfig::default(),
        seed,
    }
}

/// Movable light box on the route with a wide side path.
pub fn case1(seed: u64) -> WorldScenario {
    let mut obstacles = arena_walls();
    obstacles.push(rect_body(
        1,
        4.013,
        3.017,
        0.7,
        0.7,
        ObstacleClass::Box,
        true,
        LIGHT_RESISTANCE,
    ));
    base_scenario("case1", obstacles, seed)
}

/// Movable light box plugging the only doorway; the side clearances are too
/// narrow to pass without contact.
pub fn case2(seed: u64) -> WorldScenario {
    let mut obstacles = arena_walls();
    obstacles.push(rect_body(
        2,
        4.0,
        1.313,
        WALL_THICKNESS,
        2.226,
        ObstacleClass::Wall,
        false,
        HEAVY_RESISTANCE,
    ));
    obstacles.push(rect_body(
        3,
        4.0,
        4.687,
        WALL_THICKNESS,
        2.226,
        ObstacleClass::Wall,
        false,
        HEAVY_RESISTANCE,
    ));
    obstacles.push(rect_body(
        1,
        4.016,
        3.009,
        0.6,
        0.6,
        ObstacleClass::Box,
        true,
        LIGHT_RESISTANCE,
    ));
    base_scenario("case2", obstacles, seed)
}

/// Fixed shelf on the route with a wide side path.
pub fn case3(seed: u64) -> WorldScenario {
    let mut obstacles = arena_walls();
    obstacles.push(rect_body(
        1,
        4.011,
        3.008,
        0.8,
        1.6,
        ObstacleClass::Shelf,
        false,
        HEAVY_RESISTANCE,
    ));
    base_scenario("case3", obstacles, seed)
}

/// Box whose class reads as movable but whose resistance exceeds the robot's
/// push capability: the push stalls and the correction path must recover.
pub fn heavy_box(seed: u64) -> WorldScenario {
    let mut obstacles = arena_walls();
    obstacles.push(rect_body(
        1,
        4.014,
        3.011,
        0.8,
        0.8,
        ObstacleClass::Box,
        true,
        HEAVY_RESISTANCE,
    ));
    base_scenario("heavybox", obstacles, seed)
}

/// Deformable-obstacle reproduction: a curtain across the route that shows
/// up in lidar and camera but never resists motion.
pub fn curtain(seed: u64) -> WorldScenario {
    let mut obstacles = arena_walls();
    obstacles.push(rect_body(
        1,
        4.012,
        3.015,
        0.12,
        2.4,
        ObstacleClass::Curtain,
        true,
        0.0,
    ));
    base_scenario("curtain", obstacles, seed)
}

/// Corridor of four doorway slots, each plugged by a box sitting in the
/// gap. Gaps are aligned on the route (pushed plugs ride straight into open
/// parking); the open side lane alternates between top and bottom, so every
/// immovable plug costs a zigzag detour. The trailing `movable` slots hold
/// light plugs; gaps are wide enough that a ridden plug threads the doors
/// ahead of it. Placement jitter is seeded.
pub fn fxmy(fixed: usize, movable: usize, seed: u64) -> WorldScenario {
    let total = fixed + movable;
    assert!(total <= 4, "corridor has four obstacle slots");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x66786d79);
    let mut obstacles = arena_walls();
    obstacles.push(rect_body(
        20,
        4.3,
        1.4,
        6.2,
        WALL_THICKNESS,
        ObstacleClass::Wall,
        false,
        HEAVY_RESISTANCE,
    ));
    obstacles.push(rect_body(
        21,
        4.3,
        4.6,
        6.2,
        WALL_THICKNESS,
        ObstacleClass::Wall,
        false,
        HEAVY_RESISTANCE,
    ));
    let slot_x = [1.9, 3.3, 4.7, 6.1];
    for i in 0..total {
        let x = slot_x[i] + rng.gen_range(-0.05..0.05);
        let (gap_lo, gap_hi) = (2.35, 3.65);
        let (lane_lo, lane_hi) = if i % 2 == 0 {
            (3.85_f64, 4.5_f64)
        } else {
            (1.5_f64, 2.15_f64)
        };
        let corridor = (1.5_f64, 4.5_f64);
        let openings = {
            let mut o = vec![(gap_lo, gap_hi), (lane_lo, lane_hi)];
            o.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            o
        };
        let mut spans: Vec<(f64, f64)> = Vec::new();
        let mut cursor = corridor.0;
        for (lo, hi) in openings {
            if lo > cursor + 1e-9 {
                spans.push((cursor, lo));
            }
            cursor = cursor.max(hi);
        }
        if cursor < corridor.1 - 1e-9 {
            spans.push((cursor, corridor.1));
        }
        for (k, (lo, hi)) in spans.iter().enumerate() {
            obstacles.push(rect_body(
                100 + (i as u32) * 10 + k as u32,
                x,
                (lo + hi) / 2.0,
                WALL_THICKNESS,
                hi - lo,
                ObstacleClass::Wall,
                false,
                HEAVY_RESISTANCE,
            ));
        }
        let is_movable = i >= total - movable;
        obstacles.push(rect_body(
            1 + i as u32,
            x + rng.gen_range(-0.02..0.02),
            3.0 + rng.gen_range(-0.03..0.03),
            0.5,
            0.7,
            ObstacleClass::Box,
            is_movable,
            if is_movable { LIGHT_RESISTANCE } else { HEAVY_RESISTANCE },
        ));
    }
    let mut s = base_scenario(&format!("f{fixed}m{movable}"), obstacles, seed);
    s.robot.goal = Pose2::new(6.9, 3.0, 0.0);
    s
}

/// Look up a library scenario by name: `case1`, `case2`, `case3`,
/// `heavybox`, `curtain`, or `fxmy:F,M`.
pub fn by_name(name: &str, seed: u64) -> Option<WorldScenario> {
    match name {
        "case1" => Some(case1(seed)),
        "case2" => Some(case2(seed)),
        "case3" => Some(case3(seed)),
        "heavybox" => Some(heavy_box(seed)),
        "curtain" => Some(curtain(seed)),
        _ => {
            let spec = name.strip_prefix("fxmy:")?;
            let (f, m) = spec.split_once(',')?;
            let f = f.trim().parse().ok()?;
            let m = m.trim().parse().ok()?;
            if f + m <= 4 {
                Some(fxmy(f, m, seed))
            } else {
                None
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fxmy_counts_and_determinism() {
        let a = fxmy(2, 2, 9);
        let boxes: Vec<_> = a
            .obstacles
            .iter()
            .filter(|o| o.class == ObstacleClass::Box)
            .collect();
        assert_eq!(boxes.len(), 4);
        assert_eq!(boxes.iter().filter(|o| o.movable_truth).count(), 2);
        let b = fxmy(2, 2, 9);
        for (x, y) in a.obstacles.iter().zip(&b.obstacles) {
            assert_eq!(x.polygon, y.polygon);
        }
        let c = fxmy(2, 2, 10);
        assert!(a
            .obstacles
            .iter()
            .zip(&c.obstacles)
            .any(|(x, y)| x.polygon != y.polygon));
    }

    #[test]
    fn by_name_parses_fxmy() {
        assert!(by_name("fxmy:4,0", 1).is_some());
        assert!(by_name("fxmy:1,3", 1).is_some());
        assert!(by_name("fxmy:9,9", 1).is_none());
        assert!(by_name("case2", 1).is_some());
        assert!(by_name("nonsense", 1).is_none());
    }
}
