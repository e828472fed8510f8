//! Quasi-static contact resolution: yielding obstacles translate along the
//! minimum separation vector, non-yielding contact truncates the robot's
//! motion, curtains pass through.

use nalgebra::Vector2;
use thiserror::Error;

use super::collide::{polygon_distance, polygon_overlap_mtv};
use super::world::ObstacleBody;
use crate::geometry::normalize_angle;
use crate::{Pose2, RobotPolytope};

#[derive(Debug, Error)]
pub enum SimFault {
    #[error("unresolvable interpenetration after {passes} passes (obstacle {id})")]
    Interpenetration { id: u32, passes: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactEvent {
    pub id: u32,
    pub yielded: bool,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub resolved_pose: Pose2,
    /// Net obstacle translations applied this step.
    pub displacements: Vec<(u32, Vector2<f64>)>,
    pub contacts: Vec<ContactEvent>,
}

const MAX_PASSES: usize = 10;
const BACKOFF_SEPARATION: f64 = 1e-4;

/// Advance the robot from `pose` to `next_pose`, pushing yielding obstacles
/// out of the way and truncating the motion at the first non-yielding
/// contact. Obstacles are mutated in place.
pub fn step_world(
    obstacles: &mut [ObstacleBody],
    robot: &RobotPolytope,
    pose: &Pose2,
    next_pose: &Pose2,
    push_capability: f64,
) -> Result<StepOutcome, SimFault> {
    let original: Vec<Vec<Vector2<f64>>> = obstacles.iter().map(|o| o.polygon.clone()).collect();
    let robot_next = robot.world_polygon(next_pose);

    let mut contacts: Vec<ContactEvent> = Vec::new();
    let record = |contacts: &mut Vec<ContactEvent>, id: u32, yielded: bool| {
        if !contacts.iter().any(|c| c.id == id) {
            contacts.push(ContactEvent { id, yielded });
        }
    };

    let mut blocked = false;
    let mut resolved = true;
    // Only overlaps created this step matter; static contact between fixed
    // bodies (e.g. touching walls) is legal geometry.
    let mut moved = vec![false; obstacles.len()];
    'passes: for pass in 0..=MAX_PASSES {
        if pass == MAX_PASSES {
            resolved = false;
            break;
        }
        let mut changed = false;
        // Robot against every obstacle.
        for i in 0..obstacles.len() {
            let Some((axis, depth)) = polygon_overlap_mtv(&robot_next, &obstacles[i].polygon)
            else {
                continue;
            };
            if !obstacles[i].blocks_motion() {
                record(&mut contacts, obstacles[i].id, true);
                continue;
            }
            if obstacles[i].yields_to(push_capability) {
                obstacles[i].translate(axis * depth);
                moved[i] = true;
                record(&mut contacts, obstacles[i].id, true);
                changed = true;
            } else {
                record(&mut contacts, obstacles[i].id, false);
                blocked = true;
                break 'passes;
            }
        }
        // Chained pushes: a moved obstacle shoves whatever it now overlaps.
        for i in 0..obstacles.len() {
            if !moved[i] || !obstacles[i].blocks_motion() {
                continue;
            }
            for j in 0..obstacles.len() {
                if i == j || !obstacles[j].blocks_motion() {
                    continue;
                }
                let Some((axis, depth)) =
                    polygon_overlap_mtv(&obstacles[i].polygon, &obstacles[j].polygon)
                else {
                    continue;
                };
                if obstacles[j].yields_to(push_capability) {
                    obstacles[j].translate(axis * depth);
                    moved[j] = true;
                    record(&mut contacts, obstacles[j].id, true);
                    changed = true;
                } else {
                    // Pushed chain hit something immovable: the front cannot
                    // give way, so the whole push fails.
                    record(&mut contacts, obstacles[j].id, false);
                    blocked = true;
                    break 'passes;
                }
            }
        }
        if !changed {
            break;
        }
    }

    if !blocked && resolved {
        let displacements = collect_displacements(obstacles, &original);
        return Ok(StepOutcome {
            resolved_pose: *next_pose,
            displacements,
            contacts,
        });
    }

    // Blocked (or pass cap): the step becomes a truncated contact. Revert
    // all pushes and back the robot off along the interpolated motion.
    for (o, orig) in obstacles.iter_mut().zip(&original) {
        o.polygon.clone_from(orig);
    }
    // Reverted obstacles did not move during the failed push.
    for c in &mut contacts {
        if obstacles.iter().any(|o| o.id == c.id && o.blocks_motion()) {
            c.yielded = false;
        }
    }
    let resolved_pose = backoff(obstacles, robot, pose, next_pose);
    let final_poly = robot.world_polygon(&resolved_pose);
    for o in obstacles.iter().filter(|o| o.blocks_motion()) {
        if polygon_overlap_mtv(&final_poly, &o.polygon).is_some() {
            return Err(SimFault::Interpenetration {
                id: o.id,
                passes: MAX_PASSES,
            });
        }
    }
    let _ = resolved;
    Ok(StepOutcome {
        resolved_pose,
        displacements: Vec::new(),
        contacts,
    })
}

fn collect_displacements(
    obstacles: &[ObstacleBody],
    original: &[Vec<Vector2<f64>>],
) -> Vec<(u32, Vector2<f64>)> {
    obstacles
        .iter()
        .zip(original)
        .filter_map(|(o, orig)| {
            let dv = o.polygon[0] - orig[0];
            (dv.norm() > 0.0).then_some((o.id, dv))
        })
        .collect()
}

fn lerp_pose(a: &Pose2, b: &Pose2, t: f64) -> Pose2 {
    Pose2::new(
        a.x + (b.x - a.x) * t,
        a.y + (b.y - a.y) * t,
        a.theta + normalize_angle(b.theta - a.theta) * t,
    )
}

/// Largest interpolation fraction keeping the robot clear of every blocking
/// obstacle (separation >= 1e-4 when attainable).
fn backoff(
    obstacles: &[ObstacleBody],
    robot: &RobotPolytope,
    pose: &Pose2,
    next_pose: &Pose2,
) -> Pose2 {
    let clearance = |t: f64| -> f64 {
        let poly = robot.world_polygon(&lerp_pose(pose, next_pose, t));
        obstacles
            .iter()
            .filter(|o| o.blocks_motion())
            .map(|o| polygon_distance(&poly, &o.polygon))
            .fold(f64::INFINITY, f64::min)
    };
    if clearance(1.0) >= BACKOFF_SEPARATION {
        return *next_pose;
    }
    let start_clear = clearance(0.0);
    if start_clear < BACKOFF_SEPARATION {
        // Already in grazing contact; hold position.
        return *pose;
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if clearance(mid) >= BACKOFF_SEPARATION {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lerp_pose(pose, next_pose, lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::world::ObstacleClass;

    fn light_box(cx: f64, cy: f64) -> ObstacleBody {
        square_body(1, cx, cy, 0.3, ObstacleClass::Box, true, 1.0)
    }

    fn square_body(
        id: u32,
        cx: f64,
        cy: f64,
        half: f64,
        class: ObstacleClass,
        movable: bool,
        resistance: f64,
    ) -> ObstacleBody {
        ObstacleBody {
            id,
            polygon: vec![
                Vector2::new(cx - half, cy - half),
                Vector2::new(cx + half, cy - half),
                Vector2::new(cx + half, cy + half),
                Vector2::new(cx - half, cy + half),
            ],
            movable_truth: movable,
            push_resistance: resistance,
            class,
            height: 0.5,
        }
    }

    fn robot() -> RobotPolytope {
        RobotPolytope::rectangle(0.322, 0.220).unwrap()
    }

    #[test]
    fn free_motion_is_untouched() {
        let mut obstacles = vec![light_box(5.0, 5.0)];
        let out = step_world(
            &mut obstacles,
            &robot(),
            &Pose2::new(0.0, 0.0, 0.0),
            &Pose2::new(0.1, 0.0, 0.0),
            5.0,
        )
        .unwrap();
        assert_eq!(out.resolved_pose, Pose2::new(0.1, 0.0, 0.0));
        assert!(out.displacements.is_empty());
        assert!(out.contacts.is_empty());
    }

    #[test]
    fn light_box_yields_by_minimum_translation() {
        // Robot front face at x = 0.161 + step; box rear face at 0.2.
        let mut obstacles = vec![light_box(0.5, 0.0)];
        let from = Pose2::new(0.0, 0.0, 0.0);
        let to = Pose2::new(0.1, 0.0, 0.0);
        let out = step_world(&mut obstacles, &robot(), &from, &to, 5.0).unwrap();
        assert_eq!(out.resolved_pose, to);
        assert_eq!(out.contacts, vec![ContactEvent { id: 1, yielded: true }]);
        let (_, dv) = out.displacements[0];
        // Penetration was 0.1 + 0.161 - 0.2 = 0.061 along +x.
        assert!((dv.x - 0.061).abs() < 1e-9, "dv {dv:?}");
        assert!(dv.y.abs() < 1e-12);
        // Momentum-free: displacement bounded by the robot's vertex motion.
        assert!(dv.norm() <= 0.1 + 1e-9);
    }

    #[test]
    fn heavy_obstacle_truncates_motion() {
        let mut obstacles = vec![square_body(2, 0.5, 0.0, 0.3, ObstacleClass::Shelf, false, 10.0)];
        let from = Pose2::new(0.0, 0.0, 0.0);
        let to = Pose2::new(0.2, 0.0, 0.0);
        let out = step_world(&mut obstacles, &robot(), &from, &to, 5.0).unwrap();
        assert_eq!(out.contacts, vec![ContactEvent { id: 2, yielded: false }]);
        assert!(out.displacements.is_empty());
        // Truncated just short of the face at x = 0.2 - 0.161 = 0.039.
        assert!(out.resolved_pose.x < 0.039);
        assert!(out.resolved_pose.x > 0.03);
        let poly = robot().world_polygon(&out.resolved_pose);
        assert!(polygon_distance(&poly, &obstacles[0].polygon) >= BACKOFF_SEPARATION * 0.9);
    }

    #[test]
    fn repeated_blocked_steps_freeze_the_pose() {
        let mut obstacles = vec![square_body(2, 0.5, 0.0, 0.3, ObstacleClass::Shelf, false, 10.0)];
        let mut pose = Pose2::new(0.0, 0.0, 0.0);
        for _ in 0..5 {
            let to = Pose2::new(pose.x + 0.1, 0.0, 0.0);
            let out = step_world(&mut obstacles, &robot(), &pose, &to, 5.0).unwrap();
            pose = out.resolved_pose;
        }
        // Pose settles against the face and stops advancing.
        let stuck_at = pose.x;
        let to = Pose2::new(pose.x + 0.1, 0.0, 0.0);
        let out = step_world(&mut obstacles, &robot(), &pose, &to, 5.0).unwrap();
        assert!((out.resolved_pose.x - stuck_at).abs() < 1e-6);
    }

    #[test]
    fn curtain_never_blocks() {
        let mut obstacles = vec![square_body(3, 0.3, 0.0, 0.2, ObstacleClass::Curtain, true, 0.0)];
        let from = Pose2::new(0.0, 0.0, 0.0);
        let to = Pose2::new(0.3, 0.0, 0.0);
        let out = step_world(&mut obstacles, &robot(), &from, &to, 5.0).unwrap();
        assert_eq!(out.resolved_pose, to);
        assert!(out.displacements.is_empty());
        assert_eq!(out.contacts, vec![ContactEvent { id: 3, yielded: true }]);
    }

    #[test]
    fn chained_push_moves_both_boxes() {
        let mut obstacles = vec![light_box(0.5, 0.0), {
            let mut b = light_box(1.1, 0.0);
            b.id = 2;
            b
        }];
        // Drive far enough that box 1 is pushed into box 2.
        let mut pose = Pose2::new(0.0, 0.0, 0.0);
        for _ in 0..6 {
            let to = Pose2::new(pose.x + 0.1, 0.0, 0.0);
            let out = step_world(&mut obstacles, &robot(), &pose, &to, 5.0).unwrap();
            pose = out.resolved_pose;
        }
        let b1_x = obstacles[0].polygon[0].x;
        let b2_x = obstacles[1].polygon[0].x;
        assert!(b1_x > 0.2, "box1 moved forward: {b1_x}");
        assert!(b2_x > 0.8, "box2 pushed by box1: {b2_x}");
        assert!(polygon_overlap_mtv(&obstacles[0].polygon, &obstacles[1].polygon).is_none());
    }

    #[test]
    fn push_against_wall_blocks_the_robot() {
        let mut obstacles = vec![
            light_box(0.5, 0.0),
            square_body(9, 1.0, 0.0, 0.2, ObstacleClass::Wall, false, 10.0),
        ];
        let mut pose = Pose2::new(0.0, 0.0, 0.0);
        let mut saw_blocked = false;
        for _ in 0..10 {
            let to = Pose2::new(pose.x + 0.1, 0.0, 0.0);
            let out = step_world(&mut obstacles, &robot(), &pose, &to, 5.0).unwrap();
            if out.contacts.iter().any(|c| !c.yielded) {
                saw_blocked = true;
            }
            pose = out.resolved_pose;
        }
        assert!(saw_blocked, "pinned box never reported a blocked contact");
        // Box stops before the wall face at x = 0.8; wall never moved.
        assert!(obstacles[0].polygon[1].x <= 0.8 + 1e-9);
        assert!((obstacles[1].polygon[0].x - 0.8).abs() < 1e-12);
    }
}
