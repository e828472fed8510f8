//! Geometric grounding detector: rasterized obstacle silhouettes with
//! depth-ordered occlusion, standing in for an image-space open-set model.

use nalgebra::{Vector2, Vector3};

use super::world::{ObstacleBody, ObstacleClass};
use crate::geometry::depth_epsilon;
use crate::partition::{CandidateSet, Mask};
use crate::{CameraModel, Pose2};

/// Classes the grounding prompt asks for; walls and shelves are not
/// candidate movable obstacles.
pub const DEFAULT_GROUNDING_CLASSES: [ObstacleClass; 2] =
    [ObstacleClass::Box, ObstacleClass::Curtain];

/// Silhouette masks of candidate obstacles visible from the robot pose,
/// captioned with their class and tagged with the obstacle id. Every
/// obstacle occludes (depth-ordered between whole silhouettes); only the
/// prompted classes yield masks.
pub fn synth_detections(
    obstacles: &[ObstacleBody],
    robot_pose: &Pose2,
    camera: &CameraModel,
    classes: &[ObstacleClass],
    now: f64,
) -> CandidateSet {
    let masks = visible_silhouettes(obstacles, robot_pose, camera, now, |o| {
        classes.contains(&o.class)
    });
    CandidateSet { masks }
}

/// Silhouette masks of the truly movable obstacles only; the ground-truth
/// mask source for partition-fidelity evaluation.
pub fn ground_truth_masks(
    obstacles: &[ObstacleBody],
    robot_pose: &Pose2,
    camera: &CameraModel,
    now: f64,
) -> Vec<Mask> {
    visible_silhouettes(obstacles, robot_pose, camera, now, |o| o.movable_truth)
}

fn visible_silhouettes(
    obstacles: &[ObstacleBody],
    robot_pose: &Pose2,
    camera: &CameraModel,
    now: f64,
    wanted: impl Fn(&ObstacleBody) -> bool,
) -> Vec<Mask> {
    let w = camera.image_width as usize;
    let h = camera.image_height as usize;
    let mut owner: Vec<Option<u32>> = vec![None; w * h];

    // Painter order: farthest first so nearer silhouettes overwrite. All
    // obstacles paint; only wanted ones are extracted.
    let mut order: Vec<(f64, &ObstacleBody)> = obstacles
        .iter()
        .map(|o| {
            let c = super::collide::centroid(&o.polygon);
            let d = (c - robot_pose.position()).norm();
            (d, o)
        })
        .collect();
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.id.cmp(&b.1.id)));

    let mut painted_any = false;
    for (_, obs) in &order {
        if let Some(hull) = silhouette_hull(obs, robot_pose, camera) {
            rasterize_hull(&hull, camera, |x, y| {
                owner[y as usize * w + x as usize] = Some(obs.id);
                painted_any = true;
            });
        }
    }
    if !painted_any {
        return Vec::new();
    }

    let mut masks = Vec::new();
    for (_, obs) in &order {
        if !wanted(obs) {
            continue;
        }
        let pixels: Vec<(u32, u32)> = owner
            .iter()
            .enumerate()
            .filter(|(_, &o)| o == Some(obs.id))
            .map(|(i, _)| ((i % w) as u32, (i / w) as u32))
            .collect();
        if let Some(mask) = Mask::from_pixels(
            camera.image_width,
            camera.image_height,
            pixels,
            obs.class.name(),
            now,
            Some(obs.id),
        ) {
            masks.push(mask);
        }
    }
    masks.sort_by_key(|m| m.source_id);
    masks
}

/// Convex hull of the obstacle prism's pixel projection, clipped to the
/// camera near plane. `None` when fully behind the camera.
fn silhouette_hull(
    obs: &ObstacleBody,
    robot_pose: &Pose2,
    camera: &CameraModel,
) -> Option<Vec<Vector2<f64>>> {
    let near = depth_epsilon::<f64>().max(1e-3);
    // Prism corners in the camera frame.
    let mut cam_pts = Vec::with_capacity(obs.polygon.len() * 2);
    for v in &obs.polygon {
        for z in [0.0, obs.height] {
            cam_pts.push(camera.world_to_camera(robot_pose, Vector3::new(v.x, v.y, z)));
        }
    }
    // Clip prism edges against z = near: keep front points plus crossings.
    let mut clipped: Vec<Vector3<f64>> = cam_pts.iter().copied().filter(|p| p.z > near).collect();
    if clipped.is_empty() {
        return None;
    }
    if clipped.len() < cam_pts.len() {
        for i in 0..cam_pts.len() {
            for j in (i + 1)..cam_pts.len() {
                let (a, b) = (cam_pts[i], cam_pts[j]);
                if (a.z > near) != (b.z > near) {
                    let t = (near - a.z) / (b.z - a.z);
                    clipped.push(a + (b - a) * t);
                }
            }
        }
    }
    let pixels: Vec<Vector2<f64>> = clipped
        .iter()
        .map(|p| {
            let z = p.z.max(near);
            let uv = camera.intrinsics() * Vector3::new(p.x, p.y, z);
            Vector2::new(uv.x / z, uv.y / z)
        })
        .collect();
    convex_hull(pixels)
}

/// Monotone-chain convex hull, counterclockwise in pixel coordinates.
fn convex_hull(mut pts: Vec<Vector2<f64>>) -> Option<Vec<Vector2<f64>>> {
    if pts.len() < 3 {
        return None;
    }
    pts.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap().then(a.y.partial_cmp(&b.y).unwrap()));
    pts.dedup_by(|a, b| (a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12);
    if pts.len() < 3 {
        return None;
    }
    let cross = |o: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>| {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };
    let mut lower: Vec<Vector2<f64>> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Vector2<f64>> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 3 {
        None
    } else {
        Some(lower)
    }
}

/// Scanline fill of a convex pixel hull: a pixel is set when its center lies
/// inside the row interval spanned by the hull.
fn rasterize_hull(hull: &[Vector2<f64>], camera: &CameraModel, mut set: impl FnMut(u32, u32)) {
    let n = hull.len();
    let min_y = hull.iter().fold(f64::INFINITY, |a, v| a.min(v.y));
    let max_y = hull.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.y));
    let y0 = (min_y - 0.5).ceil().max(0.0) as u32;
    let y1 = ((max_y - 0.5).floor() as i64).min(i64::from(camera.image_height) - 1);
    if y1 < 0 {
        return;
    }
    for y in y0..=y1 as u32 {
        let yc = f64::from(y) + 0.5;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let a = hull[i];
            let b = hull[(i + 1) % n];
            if (a.y <= yc) != (b.y <= yc) {
                let t = (yc - a.y) / (b.y - a.y);
                let x = a.x + t * (b.x - a.x);
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
        if lo > hi {
            continue;
        }
        let x0 = (lo - 0.5).ceil().max(0.0) as u32;
        let x1 = ((hi - 0.5).floor() as i64).min(i64::from(camera.image_width) - 1);
        if x1 < 0 {
            continue;
        }
        for x in x0..=x1 as u32 {
            set(x, y);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenarios;

    fn camera() -> CameraModel {
        CameraModel::forward_mounted(160.0, 160.0, 160.0, 120.0, 320, 240, 0.2).unwrap()
    }

    #[test]
    fn obstacle_behind_robot_is_absent() {
        let s = scenarios::case1(1);
        let pose = Pose2::new(6.0, 3.0, 0.0); // box at x ~ 4 is behind
        let c = synth_detections(&s.obstacles, &pose, &camera(), &DEFAULT_GROUNDING_CLASSES, 0.0);
        assert!(c.masks.is_empty());
    }

    #[test]
    fn centered_box_mask_near_principal_column_matches_oracle() {
        let s = scenarios::case1(1);
        let pose = Pose2::new(0.8, 3.017, 0.0); // aimed straight at the box
        let cam = camera();
        let c = synth_detections(&s.obstacles, &pose, &cam, &DEFAULT_GROUNDING_CLASSES, 0.0);
        assert_eq!(c.masks.len(), 1);
        let mask = &c.masks[0];
        let bb = mask.bbox();
        let center_col = f64::from(bb.x) + f64::from(bb.w) / 2.0;
        assert!((center_col - 160.0).abs() < 6.0, "center col {center_col}");

        // Oracle: point-in-projected-silhouette per pixel center, via an
        // independently computed hull membership test.
        let obs = s.obstacle(1).unwrap();
        let hull = silhouette_hull(obs, &pose, &cam).unwrap();
        let inside = |px: f64, py: f64| {
            let n = hull.len();
            (0..n).all(|i| {
                let a = hull[i];
                let b = hull[(i + 1) % n];
                (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x) >= -1e-9
            })
        };
        let mut count = 0u64;
        for y in 0..cam.image_height {
            for x in 0..cam.image_width {
                let is_in = inside(f64::from(x) + 0.5, f64::from(y) + 0.5);
                if is_in {
                    count += 1;
                }
                assert_eq!(
                    mask.contains(x, y),
                    is_in,
                    "pixel ({x},{y}) mask vs oracle"
                );
            }
        }
        assert_eq!(count, mask.pixel_count());
    }

    #[test]
    fn two_boxes_give_disjoint_masks() {
        let mut s = scenarios::case1(1);
        // Second box offset to the side, same depth band.
        let mut extra = s.obstacles.last().unwrap().clone();
        extra.id = 2;
        extra.translate(Vector2::new(0.31, 1.22));
        s.obstacles.push(extra);
        let pose = Pose2::new(0.8, 3.0, 0.15);
        let c = synth_detections(&s.obstacles, &pose, &camera(), &DEFAULT_GROUNDING_CLASSES, 0.0);
        assert_eq!(c.masks.len(), 2);
        assert_eq!(crate::partition::iou(&c.masks[0], &c.masks[1]), 0.0);
    }

    #[test]
    fn fully_occluded_box_is_absent() {
        let mut s = scenarios::case3(1); // big fixed shelf mid-route
        // Hide a small box exactly behind the shelf.
        let hidden = super::super::scenarios::fxmy(0, 1, 1).obstacles.last().unwrap().clone();
        let mut hidden = hidden;
        hidden.id = 55;
        // Recenter behind the shelf relative to the start pose.
        let shift = Vector2::new(5.6, 3.008) - super::super::collide::centroid(&hidden.polygon);
        hidden.translate(shift);
        hidden.height = 0.4; // shorter than the shelf
        s.obstacles.push(hidden);
        let pose = s.robot.start;
        // Shelf is not a grounding candidate, but it still occludes.
        let all = [
            ObstacleClass::Box,
            ObstacleClass::Curtain,
            ObstacleClass::Shelf,
            ObstacleClass::Wall,
        ];
        let c = synth_detections(&s.obstacles, &pose, &camera(), &all, 0.0);
        assert!(c.masks.iter().any(|m| m.source_id == Some(1)));
        assert!(!c.masks.iter().any(|m| m.source_id == Some(55)));
    }
}
