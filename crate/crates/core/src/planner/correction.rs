//! Stuck detection and the point-correcting recovery: relabel the
//! non-yielding contact cluster, reverse along the state history, replan.

use std::collections::VecDeque;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::kinematics::Control;
use crate::dualdist::solve_dual_exact;
use crate::geometry::normalize_angle;
use crate::partition::PartitionedScan;
use crate::{Pose2, RobotPolytope};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectionConfig {
    /// Commanded speed at or above which a frozen pose counts as stuck.
    pub v_min_stuck: f64,
    /// Pose-delta norm below which a step counts as frozen.
    pub d_stuck: f64,
    /// Consecutive frozen steps that trigger the correction.
    pub tau_stuck: usize,
    /// Traceback steps F for the reversal.
    pub traceback: usize,
    /// Reverse speed limit (positive magnitude).
    pub v_rev: f64,
    /// Contact radius for attributing the failed-push cluster.
    pub contact_radius: f64,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self {
            v_min_stuck: 0.05,
            d_stuck: 0.005,
            tau_stuck: 10,
            traceback: 20,
            v_rev: 0.3,
            contact_radius: 0.3,
        }
    }
}

/// Ring of recent (time, pose, commanded speed) triples.
#[derive(Clone, Debug)]
pub struct StateHistory {
    entries: VecDeque<(f64, Pose2, f64)>,
    capacity: usize,
}

impl StateHistory {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            entries: VecDeque::with_capacity(capacity),
            capacity: capacity.max(2),
        }
    }

    pub fn push(&mut self, t: f64, pose: Pose2, commanded_v: f64) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        debug_assert!(self.entries.back().map_or(true, |(pt, ..)| *pt < t));
        self.entries.push_back((t, pose, commanded_v));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn last_pose(&self) -> Option<Pose2> {
        self.entries.back().map(|(_, p, _)| *p)
    }

    /// The last `f` poses, newest first (the reversal target sequence down
    /// to the checkpoint s_{t-F}). Consecutive near-duplicates (a stalled
    /// tail) collapse into one target so the reversal makes real progress.
    pub fn reverse_targets(&self, f: usize) -> Vec<Pose2> {
        let mut out: Vec<Pose2> = Vec::new();
        for (_, p, _) in self.entries.iter().rev().skip(1) {
            if out.len() == f {
                break;
            }
            if out.last().map_or(true, |last| last.delta_norm(p) > 0.02) {
                out.push(*p);
            }
        }
        out
    }

    fn recent(&self, n: usize) -> impl Iterator<Item = &(f64, Pose2, f64)> {
        self.entries.iter().skip(self.entries.len().saturating_sub(n))
    }
}

/// True iff for the last `tau_stuck` consecutive steps the commanded speed
/// stayed at or above `v_min_stuck` while the pose delta stayed at or below
/// `d_stuck`. Needs `tau_stuck + 1` history entries.
pub fn detect_stuck(history: &StateHistory, cfg: &CorrectionConfig) -> bool {
    if history.len() < cfg.tau_stuck + 1 {
        return false;
    }
    let window: Vec<&(f64, Pose2, f64)> = history.recent(cfg.tau_stuck + 1).collect();
    window.windows(2).all(|pair| {
        let (_, prev_pose, _) = pair[0];
        let (_, pose, commanded_v) = pair[1];
        commanded_v.abs() >= cfg.v_min_stuck && pose.delta_norm(prev_pose) <= cfg.d_stuck
    })
}

/// Control tracking one reversal target: backward speed limited to
/// `[-v_rev, 0]`, heading matched to the recorded pose.
pub fn reverse_control(
    current: &Pose2,
    target: &Pose2,
    cfg: &CorrectionConfig,
    u_min: Control,
    u_max: Control,
    dt: f64,
) -> Control {
    let delta = target.position() - current.position();
    let heading = Vector2::new(current.theta.cos(), current.theta.sin());
    let v = (delta.dot(&heading) / dt).clamp(-cfg.v_rev, 0.0);
    let psi = (normalize_angle(target.theta - current.theta) / dt)
        .clamp(u_min.psi, u_max.psi);
    Control { v, psi }.clamp(u_min, u_max)
}

/// Move the contact-proximal movable cluster to fixed. Returns the updated
/// partition and how many points were relabeled; a no-op when no movable
/// point lies within the contact radius.
pub fn relabel_failure_cluster(
    part: &PartitionedScan,
    pose: &Pose2,
    polytope: &RobotPolytope,
    eps_cluster: f64,
    contact_radius: f64,
) -> (PartitionedScan, usize) {
    let n = part.len();
    let mut nearest: Option<(f64, usize)> = None;
    for i in 0..n {
        if !part.is_movable(i) {
            continue;
        }
        let p = part.points()[i];
        let d = solve_dual_exact(polytope, pose, Vector2::new(p.x, p.y), 1e-8)
            .map(|s| s.objective)
            .unwrap_or(f64::INFINITY);
        if nearest.map_or(true, |(bd, _)| d < bd) {
            nearest = Some((d, i));
        }
    }
    let Some((d, seed)) = nearest else {
        return (part.clone(), 0);
    };
    if d > contact_radius {
        return (part.clone(), 0);
    }

    // Eps-connected movable cluster containing the seed.
    let mut in_cluster = vec![false; n];
    in_cluster[seed] = true;
    let mut queue = vec![seed];
    while let Some(i) = queue.pop() {
        let pi = part.points()[i];
        for j in 0..n {
            if in_cluster[j] || !part.is_movable(j) {
                continue;
            }
            let pj = part.points()[j];
            let dx = pi.x - pj.x;
            let dy = pi.y - pj.y;
            if (dx * dx + dy * dy).sqrt() <= eps_cluster {
                in_cluster[j] = true;
                queue.push(j);
            }
        }
    }
    let relabeled = in_cluster.iter().filter(|&&b| b).count();
    let labels: Vec<bool> = part
        .labels()
        .iter()
        .zip(&in_cluster)
        .map(|(&m, &fail)| m && !fail)
        .collect();
    (
        PartitionedScan::new(part.points().to_vec(), labels, part.stamp),
        relabeled,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn cfg() -> CorrectionConfig {
        CorrectionConfig::default()
    }

    fn history_from(poses: &[(f64, f64)], v: f64) -> StateHistory {
        let mut h = StateHistory::with_capacity(64);
        for (i, &(x, y)) in poses.iter().enumerate() {
            h.push(i as f64 * 0.1, Pose2::new(x, y, 0.0), v);
        }
        h
    }

    #[test]
    fn moving_robot_is_not_stuck() {
        let poses: Vec<(f64, f64)> = (0..20).map(|i| (i as f64 * 0.1, 0.0)).collect();
        assert!(!detect_stuck(&history_from(&poses, 1.0), &cfg()));
    }

    #[test]
    fn deliberate_stop_is_not_stuck() {
        let poses = vec![(1.0, 0.0); 20];
        assert!(!detect_stuck(&history_from(&poses, 0.0), &cfg()));
    }

    #[test]
    fn frozen_pose_with_commanded_speed_triggers_exactly_at_tau() {
        let c = cfg();
        // tau frozen deltas need tau + 1 identical poses after one moving step.
        let mut poses = vec![(0.0, 0.0)];
        poses.extend(std::iter::repeat((0.5, 0.0)).take(c.tau_stuck + 1));
        assert!(detect_stuck(&history_from(&poses, 0.8), &c));

        let mut shorter = vec![(0.0, 0.0)];
        shorter.extend(std::iter::repeat((0.5, 0.0)).take(c.tau_stuck));
        assert!(!detect_stuck(&history_from(&shorter, 0.8), &c));
    }

    #[test]
    fn reverse_targets_are_newest_first() {
        let poses: Vec<(f64, f64)> = (0..30).map(|i| (i as f64 * 0.1, 0.0)).collect();
        let h = history_from(&poses, 1.0);
        let targets = h.reverse_targets(5);
        assert_eq!(targets.len(), 5);
        assert!((targets[0].x - 2.8).abs() < 1e-12);
        assert!((targets[4].x - 2.4).abs() < 1e-12);
    }

    #[test]
    fn reverse_control_backs_up_toward_target() {
        let c = cfg();
        let current = Pose2::new(1.0, 0.0, 0.0);
        let target = Pose2::new(0.9, 0.0, 0.0);
        let u = reverse_control(
            &current,
            &target,
            &c,
            Control { v: -0.4, psi: -1.5 },
            Control { v: 1.0, psi: 1.5 },
            0.1,
        );
        assert!(u.v < 0.0 && u.v >= -c.v_rev);
        assert_eq!(u.psi, 0.0);
    }

    #[test]
    fn relabel_moves_contact_cluster_to_fixed() {
        let poly = RobotPolytope::rectangle(0.322, 0.220).unwrap();
        let pose = Pose2::new(0.0, 0.0, 0.0);
        // Cluster hugging the front face, plus a distant movable blob.
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for i in 0..6 {
            points.push(Vector3::new(0.22, -0.1 + 0.04 * i as f64, 0.05));
            labels.push(true);
        }
        for i in 0..4 {
            points.push(Vector3::new(3.0 + 0.03 * i as f64, 1.0, 0.05));
            labels.push(true);
        }
        points.push(Vector3::new(1.0, -1.0, 0.05));
        labels.push(false);
        let part = PartitionedScan::new(points, labels, 0.0);
        let (updated, relabeled) = relabel_failure_cluster(&part, &pose, &poly, 0.1, 0.3);
        assert_eq!(relabeled, 6);
        assert_eq!(updated.movable_count(), 4);
        assert_eq!(updated.len(), part.len());
    }

    #[test]
    fn relabel_without_contact_is_a_no_op() {
        let poly = RobotPolytope::rectangle(0.322, 0.220).unwrap();
        let pose = Pose2::new(0.0, 0.0, 0.0);
        let part = PartitionedScan::new(
            vec![Vector3::new(2.0, 0.0, 0.05), Vector3::new(2.05, 0.0, 0.05)],
            vec![true, true],
            0.0,
        );
        let (updated, relabeled) = relabel_failure_cluster(&part, &pose, &poly, 0.1, 0.3);
        assert_eq!(relabeled, 0);
        assert_eq!(updated.labels(), part.labels());
    }
}
