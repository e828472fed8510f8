//! Scan partitioning: mask gating of projected lidar points, clustering
//! corrections, and the confusion-matrix metrics.

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use super::mask::Mask;
use crate::CameraModel;
use crate::Pose2;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("prediction has {predicted} points but ground truth has {truth}")]
    LengthMismatch { predicted: usize, truth: usize },
}

/// A scan split into contactable (movable) and contact-intolerant (fixed)
/// points. Labels are carried per index so the split is a partition of the
/// input by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionedScan {
    points: Vec<Vector3<f64>>,
    movable: Vec<bool>,
    pub stamp: f64,
}

impl PartitionedScan {
    pub fn new(points: Vec<Vector3<f64>>, movable: Vec<bool>, stamp: f64) -> Self {
        assert_eq!(points.len(), movable.len());
        Self {
            points,
            movable,
            stamp,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn labels(&self) -> &[bool] {
        &self.movable
    }

    pub fn is_movable(&self, i: usize) -> bool {
        self.movable[i]
    }

    pub fn movable_count(&self) -> usize {
        self.movable.iter().filter(|&&m| m).count()
    }

    pub fn fixed_count(&self) -> usize {
        self.len() - self.movable_count()
    }

    /// Planar coordinates of the contactable points.
    pub fn movable_xy(&self) -> Vec<Vector2<f64>> {
        self.select_xy(true)
    }

    /// Planar coordinates of the contact-intolerant points.
    pub fn fixed_xy(&self) -> Vec<Vector2<f64>> {
        self.select_xy(false)
    }

    fn select_xy(&self, movable: bool) -> Vec<Vector2<f64>> {
        self.points
            .iter()
            .zip(&self.movable)
            .filter(|(_, &m)| m == movable)
            .map(|(p, _)| Vector2::new(p.x, p.y))
            .collect()
    }
}

/// Label each scan point by whether its projection falls inside the mask
/// union. Behind-camera and out-of-frame points stay fixed: contact is only
/// permitted with positively identified movable objects.
pub fn partition_scan(
    scan: &[Vector3<f64>],
    masks: &[Mask],
    robot_pose: &Pose2,
    camera: &CameraModel,
    stamp: f64,
) -> PartitionedScan {
    let movable = scan
        .iter()
        .map(|&p| {
            let Some(px) = camera.project_point(robot_pose, p).pixel() else {
                return false;
            };
            if !camera.pixel_in_bounds(px) {
                return false;
            }
            let (x, y) = (px.x as u32, px.y as u32);
            masks.iter().any(|m| m.contains(x, y))
        })
        .collect();
    PartitionedScan::new(scan.to_vec(), movable, stamp)
}

/// Euclidean clustering corrections in the ground plane:
/// movable points outside any cluster of size >= `n_min` are suppressed, and
/// fixed points eps-connected to a surviving cluster are absorbed (to the
/// fixed point of the rule, which makes the operation idempotent).
pub fn refine_partition(part: &PartitionedScan, eps_cluster: f64, n_min: usize) -> PartitionedScan {
    let n = part.len();
    if n == 0 {
        return part.clone();
    }
    let grid = NeighborGrid::new(part.points(), eps_cluster);

    // Connected components of the movable points under the eps relation.
    let mut component = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    for start in 0..n {
        if !part.is_movable(start) || component[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut size = 0usize;
        let mut stack = vec![start];
        component[start] = id;
        while let Some(i) = stack.pop() {
            size += 1;
            grid.for_neighbors(part.points(), i, eps_cluster, |j| {
                if part.is_movable(j) && component[j] == usize::MAX {
                    component[j] = id;
                    stack.push(j);
                }
            });
        }
        sizes.push(size);
    }

    // Outlier suppression, then completion as a closure from the survivors.
    let mut movable = vec![false; n];
    let mut queue: Vec<usize> = Vec::new();
    for i in 0..n {
        if part.is_movable(i) && sizes[component[i]] >= n_min {
            movable[i] = true;
            queue.push(i);
        }
    }
    while let Some(i) = queue.pop() {
        grid.for_neighbors(part.points(), i, eps_cluster, |j| {
            if !movable[j] {
                movable[j] = true;
                queue.push(j);
            }
        });
    }

    PartitionedScan::new(part.points().to_vec(), movable, part.stamp)
}

/// Uniform hash grid over (x, y) for radius queries.
struct NeighborGrid {
    cell: f64,
    map: std::collections::HashMap<(i64, i64), Vec<usize>>,
}

impl NeighborGrid {
    fn new(points: &[Vector3<f64>], cell: f64) -> Self {
        let cell = cell.max(1e-9);
        let mut map: std::collections::HashMap<(i64, i64), Vec<usize>> =
            std::collections::HashMap::new();
        for (i, p) in points.iter().enumerate() {
            map.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, map }
    }

    fn key(p: &Vector3<f64>, cell: f64) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    fn for_neighbors(
        &self,
        points: &[Vector3<f64>],
        i: usize,
        radius: f64,
        mut visit: impl FnMut(usize),
    ) {
        let p = points[i];
        let (cx, cy) = Self::key(&p, self.cell);
        let r2 = radius * radius;
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(bucket) = self.map.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &j in bucket {
                    if j == i {
                        continue;
                    }
                    let q = points[j];
                    let ddx = p.x - q.x;
                    let ddy = p.y - q.y;
                    if ddx * ddx + ddy * ddy <= r2 {
                        visit(j);
                    }
                }
            }
        }
    }
}

/// Confusion-matrix metrics with movable as the positive class. Ratios with
/// a zero denominator report 0 with the matching degenerate flag set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PartitionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub precision_degenerate: bool,
    pub recall_degenerate: bool,
}

pub fn partition_metrics(
    predicted: &PartitionedScan,
    ground_truth: &[bool],
) -> Result<PartitionMetrics, PartitionError> {
    if predicted.len() != ground_truth.len() {
        return Err(PartitionError::LengthMismatch {
            predicted: predicted.len(),
            truth: ground_truth.len(),
        });
    }
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fne = 0u64;
    let mut tn = 0u64;
    for (pred, &truth) in predicted.labels().iter().zip(ground_truth) {
        match (*pred, truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            (false, false) => tn += 1,
        }
    }
    let precision_degenerate = tp + fp == 0;
    let recall_degenerate = tp + fne == 0;
    let precision = if precision_degenerate {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if recall_degenerate {
        0.0
    } else {
        tp as f64 / (tp + fne) as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let total = tp + fp + fne + tn;
    let accuracy = if total == 0 {
        0.0
    } else {
        (tp + tn) as f64 / total as f64
    };
    Ok(PartitionMetrics {
        precision,
        recall,
        f1,
        accuracy,
        precision_degenerate,
        recall_degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(points: &[(f64, f64)], movable: &[bool]) -> PartitionedScan {
        PartitionedScan::new(
            points.iter().map(|&(x, y)| Vector3::new(x, y, 0.1)).collect(),
            movable.to_vec(),
            0.0,
        )
    }

    #[test]
    fn empty_masks_leave_everything_fixed() {
        let camera =
            CameraModel::forward_mounted(160.0, 160.0, 160.0, 120.0, 320, 240, 0.2).unwrap();
        let scan: Vec<Vector3<f64>> = (0..20)
            .map(|i| Vector3::new(2.0 + 0.1 * f64::from(i), 0.0, 0.05))
            .collect();
        let part = partition_scan(&scan, &[], &Pose2::new(0.0, 0.0, 0.0), &camera, 1.0);
        assert_eq!(part.movable_count(), 0);
        assert_eq!(part.fixed_count(), scan.len());
    }

    #[test]
    fn behind_camera_points_stay_fixed() {
        let camera =
            CameraModel::forward_mounted(160.0, 160.0, 160.0, 120.0, 320, 240, 0.2).unwrap();
        // Full-frame mask cannot capture a point behind the camera.
        let full = Mask::from_pixels(
            320,
            240,
            (0..240u32).flat_map(|y| (0..320u32).map(move |x| (x, y))),
            "all",
            0.0,
            None,
        )
        .unwrap();
        let scan = vec![Vector3::new(-2.0, 0.0, 0.05), Vector3::new(2.0, 0.0, 0.05)];
        let part = partition_scan(&scan, &[full], &Pose2::new(0.0, 0.0, 0.0), &camera, 0.0);
        assert!(!part.is_movable(0));
        assert!(part.is_movable(1));
    }

    #[test]
    fn speckle_below_min_size_is_suppressed() {
        // n_min = 3; a 2-point speckle flips to fixed.
        let part = flat(&[(0.0, 0.0), (0.05, 0.0)], &[true, true]);
        let out = refine_partition(&part, 0.1, 3);
        assert_eq!(out.movable_count(), 0);
    }

    #[test]
    fn nearby_fixed_point_is_absorbed() {
        let part = flat(
            &[(0.0, 0.0), (0.05, 0.0), (0.1, 0.0), (0.15, 0.0)],
            &[true, true, true, false],
        );
        let out = refine_partition(&part, 0.1, 3);
        assert_eq!(out.movable_count(), 4);
    }

    #[test]
    fn refine_matches_brute_force_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _case in 0..30 {
            let n = rng.gen_range(20..200);
            let points: Vec<Vector3<f64>> = (0..n)
                .map(|_| Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), 0.1))
                .collect();
            let movable: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            let eps = 0.25;
            let n_min = 4;
            let part = PartitionedScan::new(points.clone(), movable.clone(), 0.0);
            let fast = refine_partition(&part, eps, n_min);

            // Oracle: all-pairs adjacency, movable components, closure.
            let adj = |i: usize, j: usize| {
                let d = (points[i] - points[j]).xy().norm();
                d <= eps
            };
            let mut comp = vec![usize::MAX; n];
            let mut sizes = Vec::new();
            for s in 0..n {
                if !movable[s] || comp[s] != usize::MAX {
                    continue;
                }
                let id = sizes.len();
                let mut stack = vec![s];
                comp[s] = id;
                let mut size = 0;
                while let Some(i) = stack.pop() {
                    size += 1;
                    for j in 0..n {
                        if movable[j] && comp[j] == usize::MAX && adj(i, j) {
                            comp[j] = id;
                            stack.push(j);
                        }
                    }
                }
                sizes.push(size);
            }
            let mut want = vec![false; n];
            let mut queue: Vec<usize> = (0..n)
                .filter(|&i| movable[i] && sizes[comp[i]] >= n_min)
                .collect();
            for &i in &queue {
                want[i] = true;
            }
            while let Some(i) = queue.pop() {
                for j in 0..n {
                    if !want[j] && adj(i, j) {
                        want[j] = true;
                        queue.push(j);
                    }
                }
            }
            assert_eq!(fast.labels(), &want[..], "mismatch against oracle");
        }
    }

    #[test]
    fn refine_is_idempotent() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.gen_range(10..300);
            let points: Vec<Vector3<f64>> = (0..n)
                .map(|_| Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), 0.1))
                .collect();
            let movable: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            let part = PartitionedScan::new(points, movable, 0.0);
            let once = refine_partition(&part, 0.2, 3);
            let twice = refine_partition(&once, 0.2, 3);
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn metrics_perfect_prediction() {
        let part = flat(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)], &[true, false, true]);
        let m = partition_metrics(&part, &[true, false, true]).unwrap();
        assert_eq!(
            (m.precision, m.recall, m.f1, m.accuracy),
            (1.0, 1.0, 1.0, 1.0)
        );
        assert!(!m.precision_degenerate && !m.recall_degenerate);
    }

    #[test]
    fn metrics_all_fixed_prediction_is_degenerate_precision() {
        let part = flat(&[(0.0, 0.0), (1.0, 0.0)], &[false, false]);
        let m = partition_metrics(&part, &[true, false]).unwrap();
        assert_eq!(m.recall, 0.0);
        assert!(m.precision_degenerate);
        assert!(!m.recall_degenerate);
    }

    #[test]
    fn metrics_confusion_arithmetic() {
        // TP=7 FP=0 FN=7 TN=16.
        let mut labels = Vec::new();
        let mut truth = Vec::new();
        for _ in 0..7 {
            labels.push(true);
            truth.push(true);
        }
        for _ in 0..7 {
            labels.push(false);
            truth.push(true);
        }
        for _ in 0..16 {
            labels.push(false);
            truth.push(false);
        }
        let points: Vec<(f64, f64)> = (0..30).map(|i| (f64::from(i), 0.0)).collect();
        let part = flat(&points, &labels);
        let m = partition_metrics(&part, &truth).unwrap();
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 0.5);
        assert!((m.accuracy - 23.0 / 30.0).abs() < 1e-12);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_length_mismatch_is_error() {
        let part = flat(&[(0.0, 0.0)], &[true]);
        assert!(partition_metrics(&part, &[true, false]).is_err());
    }
}
