//! Raycast lidar over the polygonal world with per-point hidden ground-truth
//! labels (used only by evaluation, never by the planner).

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::collide::ray_segment;
use super::world::{LidarModel, ObstacleBody};
use crate::Pose2;

/// One lidar return in the world frame.
#[derive(Clone, Copy, Debug)]
pub struct ScanPoint {
    pub point: Vector3<f64>,
    /// Ground-truth movability of the hit obstacle (hidden channel).
    pub truth_movable: bool,
    /// Hit obstacle id (hidden channel).
    pub obstacle_id: u32,
}

/// Cast `beam_count` beams spread over `fov` around the robot heading and
/// return the nearest intersection per beam within range, with Gaussian
/// range noise. Deterministic under `seed`.
pub fn raycast_scan(
    obstacles: &[ObstacleBody],
    robot_pose: &Pose2,
    lidar: &LidarModel,
    seed: u64,
) -> Vec<ScanPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c69646172);
    let origin = robot_pose.position();
    let n = lidar.beam_count;
    // A body enclosing the sensor (a curtain being pushed through) parts
    // around it and returns nothing.
    let visible: Vec<&ObstacleBody> = obstacles.iter().filter(|o| !o.contains(origin)).collect();
    let mut out = Vec::new();
    for i in 0..n {
        let angle = robot_pose.theta - lidar.fov / 2.0 + lidar.fov * (i as f64 + 0.5) / n as f64;
        let dir = Vector2::new(angle.cos(), angle.sin());
        let mut best: Option<(f64, &ObstacleBody)> = None;
        for obs in &visible {
            let m = obs.polygon.len();
            for k in 0..m {
                let a = obs.polygon[k];
                let b = obs.polygon[(k + 1) % m];
                if let Some(t) = ray_segment(origin, dir, a, b) {
                    if t <= lidar.max_range && best.map_or(true, |(bt, _)| t < bt) {
                        best = Some((t, obs));
                    }
                }
            }
        }
        let Some((range, obs)) = best else { continue };
        let noisy = if lidar.range_noise_sigma > 0.0 {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let gauss = (-2.0 * u1.ln()).sqrt() * u2.cos();
            (range + gauss * lidar.range_noise_sigma).max(0.01)
        } else {
            range
        };
        let p = origin + dir * noisy;
        out.push(ScanPoint {
            point: Vector3::new(p.x, p.y, lidar.scan_height),
            truth_movable: obs.movable_truth,
            obstacle_id: obs.id,
        });
    }
    out
}
