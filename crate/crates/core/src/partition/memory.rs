//! Mask memory: cached trusted masks with their refresh time and pose,
//! odometry-driven propagation, and IoU reconciliation against fresh
//! detections.

use super::filter::{CandidateSet, FilterError, MovabilityFilter};
use super::mask::{iou, warp_mask, Mask};
use super::PartitionConfig;
use crate::CameraModel;
use crate::Pose2;

/// Trusted masks from the last movability refresh.
#[derive(Clone, Debug)]
pub struct MaskMemory {
    pub masks: Vec<Mask>,
    pub refresh_time: f64,
    pub refresh_pose: Pose2,
}

impl MaskMemory {
    pub fn empty() -> Self {
        Self {
            masks: Vec::new(),
            refresh_time: 0.0,
            refresh_pose: Pose2::new(0.0, 0.0, 0.0),
        }
    }
}

/// Refresh when the robot moved more than `d_thres` since the refresh pose,
/// more than `t_thres` elapsed, or the memory is empty.
pub fn should_refresh(
    now: f64,
    pose: &Pose2,
    memory: &MaskMemory,
    cfg: &PartitionConfig,
) -> bool {
    memory.masks.is_empty()
        || pose.distance_xy(&memory.refresh_pose) > cfg.d_thres
        || (now - memory.refresh_time) > cfg.t_thres
}

/// Run the movability filter over fresh candidates and rebuild the memory.
/// On filter failure the error propagates and the caller keeps its previous
/// memory untouched.
pub fn refresh_memory(
    now: f64,
    pose: &Pose2,
    candidates: &CandidateSet,
    filter: &mut dyn MovabilityFilter,
    prompt: &str,
) -> Result<MaskMemory, FilterError> {
    let keep = filter.filter(prompt, candidates)?;
    Ok(MaskMemory {
        masks: keep
            .into_iter()
            .filter_map(|i| candidates.masks.get(i).cloned())
            .collect(),
        refresh_time: now,
        refresh_pose: *pose,
    })
}

/// Propagate memory masks to the current viewpoint through the ground-plane
/// homography. Masks that leave the frame vanish; a singular pose pair drops
/// everything (conservative).
pub fn warp_masks(memory: &MaskMemory, current_pose: &Pose2, camera: &CameraModel) -> Vec<Mask> {
    let h = match camera.plane_homography(&memory.refresh_pose, current_pose) {
        Ok(h) => h,
        Err(_) => return Vec::new(),
    };
    memory
        .masks
        .iter()
        .filter_map(|m| warp_mask(m, &h))
        .collect()
}

/// IoU reconciliation of propagated masks against fresh detections.
///
/// Greedy one-to-one matching by descending IoU; a propagated mask whose best
/// remaining match reaches `sigma_iou` adopts the fresh geometry, anything
/// unmatched is discarded. Fresh detections never claimed by a propagated
/// mask are appended as new trusted masks.
pub fn reconcile(propagated: &[Mask], fresh: &CandidateSet, sigma_iou: f64) -> Vec<Mask> {
    reconcile_inner(propagated, fresh, sigma_iou, true)
}

/// Reconciliation without the insertion step: fresh detections only correct
/// the geometry of already-trusted masks. This is what the episode loop runs
/// between movability refreshes, where unmatched detections have not been
/// vetted by the filter yet (the all-fixed ablation and the noise dial are
/// meaningless otherwise).
pub fn reconcile_matched_only(
    propagated: &[Mask],
    fresh: &CandidateSet,
    sigma_iou: f64,
) -> Vec<Mask> {
    reconcile_inner(propagated, fresh, sigma_iou, false)
}

fn reconcile_inner(
    propagated: &[Mask],
    fresh: &CandidateSet,
    sigma_iou: f64,
    insert_unmatched: bool,
) -> Vec<Mask> {
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for (i, p) in propagated.iter().enumerate() {
        for (j, f) in fresh.masks.iter().enumerate() {
            let v = iou(p, f);
            if v > 0.0 {
                pairs.push((i, j, v));
            }
        }
    }
    pairs.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

    let mut matched_prop = vec![None::<usize>; propagated.len()];
    let mut fresh_used = vec![false; fresh.masks.len()];
    for (i, j, v) in pairs {
        if v < sigma_iou {
            break;
        }
        if matched_prop[i].is_none() && !fresh_used[j] {
            matched_prop[i] = Some(j);
            fresh_used[j] = true;
        }
    }

    let mut out = Vec::new();
    for j in matched_prop.into_iter().flatten() {
        out.push(fresh.masks[j].clone());
    }
    if insert_unmatched {
        for (j, used) in fresh_used.iter().enumerate() {
            if !used {
                out.push(fresh.masks[j].clone());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::filter::{AllFixedFilter, GroundTruthFilter};
    use std::collections::HashMap;

    fn mask_at(x0: u32, y0: u32, id: u32) -> Mask {
        let pixels = (y0..y0 + 10).flat_map(move |y| (x0..x0 + 10).map(move |x| (x, y)));
        Mask::from_pixels(320, 240, pixels, "box", 0.0, Some(id)).unwrap()
    }

    fn cfg() -> PartitionConfig {
        PartitionConfig::default()
    }

    #[test]
    fn empty_memory_always_refreshes() {
        let m = MaskMemory::empty();
        assert!(should_refresh(0.0, &Pose2::new(0.0, 0.0, 0.0), &m, &cfg()));
    }

    #[test]
    fn unchanged_state_does_not_refresh() {
        let pose = Pose2::new(1.0, 2.0, 0.3);
        let m = MaskMemory {
            masks: vec![mask_at(5, 5, 1)],
            refresh_time: 10.0,
            refresh_pose: pose,
        };
        assert!(!should_refresh(10.0, &pose, &m, &cfg()));
    }

    #[test]
    fn displacement_strictly_above_threshold_refreshes() {
        let c = cfg();
        let pose = Pose2::new(0.0, 0.0, 0.0);
        let m = MaskMemory {
            masks: vec![mask_at(5, 5, 1)],
            refresh_time: 0.0,
            refresh_pose: pose,
        };
        let moved = Pose2::new(c.d_thres + 1e-6, 0.0, 0.0);
        assert!(should_refresh(0.0, &moved, &m, &c));
        let at_threshold = Pose2::new(c.d_thres, 0.0, 0.0);
        assert!(!should_refresh(0.0, &at_threshold, &m, &c));
    }

    #[test]
    fn refresh_with_empty_result_still_updates_stamps() {
        let pose = Pose2::new(3.0, 1.0, 0.2);
        let candidates = CandidateSet {
            masks: vec![mask_at(0, 0, 1)],
        };
        let mem = refresh_memory(42.0, &pose, &candidates, &mut AllFixedFilter, "p").unwrap();
        assert!(mem.masks.is_empty());
        assert_eq!(mem.refresh_time, 42.0);
        assert_eq!(mem.refresh_pose, pose);
    }

    #[test]
    fn refresh_keeps_exactly_the_filtered_subset() {
        let truth = HashMap::from([(1, true), (2, false), (3, true)]);
        let mut filter = GroundTruthFilter::new(truth);
        let candidates = CandidateSet {
            masks: vec![mask_at(0, 0, 1), mask_at(40, 0, 2), mask_at(80, 0, 3)],
        };
        let mem = refresh_memory(1.0, &Pose2::new(0.0, 0.0, 0.0), &candidates, &mut filter, "p")
            .unwrap();
        assert_eq!(mem.masks.len(), 2);
        assert_eq!(mem.masks[0].source_id, Some(1));
        assert_eq!(mem.masks[1].source_id, Some(3));
    }

    #[test]
    fn warp_at_refresh_pose_is_identity() {
        let camera = CameraModel::forward_mounted(160.0, 160.0, 160.0, 120.0, 320, 240, 0.2)
            .unwrap();
        let pose = Pose2::new(0.5, -0.2, 0.1);
        let mem = MaskMemory {
            masks: vec![mask_at(100, 150, 1)],
            refresh_time: 0.0,
            refresh_pose: pose,
        };
        let warped = warp_masks(&mem, &pose, &camera);
        assert_eq!(warped.len(), 1);
        assert_eq!(warped[0].bbox(), mem.masks[0].bbox());
        assert_eq!(warped[0].pixel_count(), mem.masks[0].pixel_count());
    }

    #[test]
    fn reconcile_identical_lists_matches_all() {
        let masks = vec![mask_at(0, 0, 1), mask_at(50, 50, 2)];
        let fresh = CandidateSet {
            masks: masks.clone(),
        };
        let out = reconcile(&masks, &fresh, 0.9);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn reconcile_below_sigma_drops_propagated() {
        // Overlap 5x10 of 10x10 squares: IoU = 50/150 = 1/3 < 0.9.
        let propagated = vec![mask_at(0, 0, 1)];
        let fresh = CandidateSet {
            masks: vec![mask_at(5, 0, 1)],
        };
        let out = reconcile_matched_only(&propagated, &fresh, 0.9);
        assert!(out.is_empty());
        // With insertion the unmatched fresh detection becomes trusted.
        let out = reconcile(&propagated, &fresh, 0.9);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].bbox(), fresh.masks[0].bbox());
    }

    #[test]
    fn reconcile_pure_insertion() {
        let fresh = CandidateSet {
            masks: vec![mask_at(12, 34, 9)],
        };
        let out = reconcile(&[], &fresh, 0.9);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].source_id, Some(9));
        assert!(reconcile_matched_only(&[], &fresh, 0.9).is_empty());
    }

    #[test]
    fn reconcile_empty_fresh_drops_everything() {
        let propagated = vec![mask_at(0, 0, 1), mask_at(30, 30, 2)];
        let out = reconcile(&propagated, &CandidateSet::default(), 0.5);
        assert!(out.is_empty());
    }

    #[test]
    fn failing_filter_leaves_caller_memory_untouched() {
        struct Unavailable;
        impl crate::partition::MovabilityFilter for Unavailable {
            fn filter(
                &mut self,
                _: &str,
                _: &CandidateSet,
            ) -> Result<Vec<usize>, crate::partition::FilterError> {
                Err(crate::partition::FilterError::Unavailable("down".into()))
            }
        }
        let memory = MaskMemory {
            masks: vec![mask_at(3, 3, 4)],
            refresh_time: 5.0,
            refresh_pose: Pose2::new(1.0, 2.0, 0.0),
        };
        let candidates = CandidateSet {
            masks: vec![mask_at(9, 9, 5)],
        };
        let err = refresh_memory(6.0, &Pose2::new(2.0, 2.0, 0.0), &candidates, &mut Unavailable, "p");
        assert!(err.is_err());
        // The caller's memory is only replaced on success.
        assert_eq!(memory.refresh_time, 5.0);
        assert_eq!(memory.masks.len(), 1);
    }

    #[test]
    fn reconcile_is_one_to_one() {
        // Two propagated masks both overlapping one fresh detection: only the
        // better match may claim it.
        let propagated = vec![mask_at(0, 0, 1), mask_at(2, 0, 2)];
        let fresh = CandidateSet {
            masks: vec![mask_at(1, 0, 7)],
        };
        let out = reconcile_matched_only(&propagated, &fresh, 0.1);
        assert_eq!(out.len(), 1);
    }
}
