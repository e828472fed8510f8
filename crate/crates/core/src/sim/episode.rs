//! Closed-loop episode runner: refresh scheduling with filter latency, mask
//! propagation and reconciliation, partitioning, the horizon solve, world
//! stepping, and the correction path — advancing in lockstep per tick.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::lidar::raycast_scan;
use super::physics::{step_world, SimFault};
use super::vision::synth_detections;
use super::world::{ObstacleClass, ScenarioError, WorldScenario};
use crate::dualdist::{DistanceEngine, DualDistError};
use crate::partition::{
    partition_metrics, partition_scan, refine_partition, refresh_memory,
    should_refresh, ConfigError, CorruptedFilter, FilterError, GroundTruthFilter, MaskMemory,
    MovabilityFilter, PartitionConfig, PartitionedScan, RemoteFilter,
};
use crate::planner::{Control, CorrectionConfig, NavEvent, Navigator, PlannerParams};
use crate::Pose2;

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("distance engine: {0}")]
    Engine(#[from] DualDistError),
    #[error("simulation fault: {0}")]
    Fault(#[from] SimFault),
    #[error("planner config: {0}")]
    BadConfig(String),
}

/// Execution mode: lockstep runs perception and planning on the same tick's
/// data; decoupled feeds the planner the freshest *completed* partition (one
/// tick of pipeline lag). Both are deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Lockstep,
    Decoupled,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lockstep" => Ok(Mode::Lockstep),
            "decoupled" => Ok(Mode::Decoupled),
            other => Err(format!("unknown mode {other} (lockstep|decoupled)")),
        }
    }
}

/// Movability filter selection for an episode.
#[derive(Clone, Debug)]
pub enum FilterChoice {
    GroundTruth,
    AllFixed,
    Corrupted { p_false_neg: f64, p_false_pos: f64 },
    Remote { endpoint: String, timeout_s: f64 },
}

#[derive(Clone, Debug)]
pub struct PerceptionConfig {
    pub partition: PartitionConfig,
    pub prompt: String,
    pub grounding_classes: Vec<ObstacleClass>,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            partition: PartitionConfig::default(),
            prompt: "select the obstacles a small robot can safely push or pass through".into(),
            grounding_classes: super::vision::DEFAULT_GROUNDING_CLASSES.to_vec(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeConfig {
    pub planner: PlannerParams,
    pub correction: CorrectionConfig,
    pub perception: PerceptionConfig,
    pub filter: FilterChoice,
    pub mode: Mode,
    pub timeout: f64,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            planner: PlannerParams::default(),
            correction: CorrectionConfig::default(),
            perception: PerceptionConfig::default(),
            filter: FilterChoice::GroundTruth,
            mode: Mode::Lockstep,
            timeout: 60.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalStatus {
    Success,
    StuckFail,
    Timeout,
    Unreachable,
    SimFault,
}

/// Trace events, serialized inline per step record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "e", rename_all = "snake_case")]
pub enum TraceEvent {
    RefreshTriggered,
    RefreshApplied { masks: usize },
    FilterUnavailable,
    Replanned,
    ReplanFailed,
    Unreachable,
    Stuck { denied: Vec<u32>, relabeled: usize },
    ReversalComplete,
    GovernorLimited,
    Retreating,
    Contact { id: u32, yielded: bool },
    GoalReached,
}

/// One executed control step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub psi: f64,
    pub movable: usize,
    pub fixed: usize,
    /// Exact chassis distance to the perceived fixed set.
    pub min_dist: f64,
    /// Exact chassis distance to the ground-truth fixed returns (evaluation
    /// channel; hidden from the planner).
    pub min_dist_truth: f64,
    /// Partition F1 against the hidden labels (evaluation channel).
    pub f1: f64,
    pub events: Vec<TraceEvent>,
}

#[derive(Clone, Debug)]
pub struct EpisodeTrace {
    pub scenario: String,
    pub seed: u64,
    pub mode: Mode,
    pub records: Vec<StepRecord>,
    pub status: TerminalStatus,
}

impl EpisodeTrace {
    /// One JSON line per step record plus a terminal line; byte-stable for a
    /// given (scenario, config, seed).
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out.push_str(
            &serde_json::to_string(&serde_json::json!({
                "terminal": self.status,
                "scenario": self.scenario,
                "seed": self.seed,
            }))
            .expect("terminal serializes"),
        );
        out.push('\n');
        out
    }
}

/// Headline metrics per episode.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Metrics {
    pub success: bool,
    pub nav_time: f64,
    pub avg_speed: f64,
    pub nav_distance: f64,
    pub status: TerminalStatus,
}

pub fn compute_metrics(trace: &EpisodeTrace) -> Metrics {
    let success = trace.status == TerminalStatus::Success;
    let nav_time = trace.records.last().map_or(0.0, |r| r.t);
    let mut nav_distance = 0.0;
    for w in trace.records.windows(2) {
        let dx = w[1].x - w[0].x;
        let dy = w[1].y - w[0].y;
        nav_distance += (dx * dx + dy * dy).sqrt();
    }
    let avg_speed = if nav_time > 0.0 {
        nav_distance / nav_time
    } else {
        0.0
    };
    Metrics {
        success,
        nav_time,
        avg_speed,
        nav_distance,
        status: trace.status,
    }
}

fn build_filter(
    choice: &FilterChoice,
    scenario: &WorldScenario,
    seed: u64,
) -> Box<dyn MovabilityFilter> {
    match choice {
        FilterChoice::GroundTruth => Box::new(GroundTruthFilter::new(scenario.movability_truth())),
        FilterChoice::AllFixed => Box::new(crate::partition::AllFixedFilter),
        FilterChoice::Corrupted {
            p_false_neg,
            p_false_pos,
        } => Box::new(CorruptedFilter::new(
            scenario.movability_truth(),
            *p_false_neg,
            *p_false_pos,
            seed,
        )),
        FilterChoice::Remote { endpoint, timeout_s } => Box::new(RemoteFilter::new(
            endpoint.clone(),
            std::time::Duration::from_secs_f64(*timeout_s),
        )),
    }
}

const MAX_CORRECTIONS: usize = 10;

/// Trusted masks with the pose their geometry is anchored at. Each step the
/// set is warped one control step forward and matched against fresh
/// detections (adopting the fresh geometry), keeping plane-homography
/// baselines one control step long regardless of the refresh cadence. A mask
/// that fails to match survives a short grace window before being discarded,
/// bridging detector dropouts at grazing sensor ranges.
#[derive(Clone, Debug)]
struct TrackedMasks {
    anchor: Pose2,
    masks: Vec<(crate::partition::Mask, u8)>,
}

const TRACK_GRACE_STEPS: u8 = 4;

impl TrackedMasks {
    fn empty() -> Self {
        Self {
            anchor: Pose2::new(0.0, 0.0, 0.0),
            masks: Vec::new(),
        }
    }

    fn from_masks(anchor: Pose2, masks: Vec<crate::partition::Mask>) -> Self {
        Self {
            anchor,
            masks: masks.into_iter().map(|m| (m, 0)).collect(),
        }
    }

    fn current(&self) -> Vec<crate::partition::Mask> {
        self.masks.iter().map(|(m, _)| m.clone()).collect()
    }

    fn retain_ids(&mut self, keep: impl Fn(Option<u32>) -> bool) {
        self.masks.retain(|(m, _)| keep(m.source_id));
    }

    fn advance(
        &mut self,
        pose: &Pose2,
        camera: &crate::CameraModel,
        candidates: &crate::partition::CandidateSet,
        sigma_iou: f64,
    ) {
        if self.masks.is_empty() {
            self.anchor = *pose;
            return;
        }
        let homography = camera.plane_homography(&self.anchor, pose).ok();
        let warped: Vec<Option<crate::partition::Mask>> = self
            .masks
            .iter()
            .map(|(m, _)| {
                homography
                    .as_ref()
                    .and_then(|h| crate::partition::warp_mask(m, h))
            })
            .collect();

        // Greedy one-to-one matching by descending IoU against the fresh set.
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
        for (i, w) in warped.iter().enumerate() {
            if let Some(w) = w {
                for (j, c) in candidates.masks.iter().enumerate() {
                    let v = crate::partition::iou(w, c);
                    if v >= sigma_iou {
                        pairs.push((i, j, v));
                    }
                }
            }
        }
        pairs.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        let mut matched = vec![None::<usize>; self.masks.len()];
        let mut used = vec![false; candidates.masks.len()];
        for (i, j, _) in pairs {
            if matched[i].is_none() && !used[j] {
                matched[i] = Some(j);
                used[j] = true;
            }
        }

        let mut next = Vec::with_capacity(self.masks.len());
        for (i, (old, misses)) in self.masks.iter().enumerate() {
            match matched[i] {
                Some(j) => next.push((candidates.masks[j].clone(), 0)),
                None if *misses < TRACK_GRACE_STEPS => {
                    // Keep the best available geometry for the grace window.
                    let keep = warped[i].clone().unwrap_or_else(|| old.clone());
                    next.push((keep, misses + 1));
                }
                None => {}
            }
        }
        self.masks = next;
        self.anchor = *pose;
    }
}

/// Filter verdict in flight: applies `latency` steps after the trigger while
/// its masks keep tracking the scene.
#[derive(Clone, Debug)]
struct PendingRefresh {
    due: usize,
    refresh_time: f64,
    refresh_pose: Pose2,
    masks: TrackedMasks,
}

/// Run one episode to success, timeout, or an unrecoverable failure.
/// Deterministic under (scenario, config, seed) in both modes.
pub fn run_episode(
    scenario: &WorldScenario,
    cfg: &EpisodeConfig,
    engine: DistanceEngine<f64>,
) -> Result<EpisodeTrace, EpisodeError> {
    scenario.validate()?;
    cfg.perception.partition.validate()?;
    if cfg.planner.dt <= 0.0 || cfg.planner.horizon == 0 {
        return Err(EpisodeError::BadConfig(
            "dt and horizon must be positive".into(),
        ));
    }
    if cfg.timeout <= 0.0 {
        return Err(EpisodeError::BadConfig("timeout must be positive".into()));
    }

    let camera = scenario.camera.build()?;
    let mut obstacles = scenario.obstacles.clone();
    let polytope = scenario.robot.polytope();
    let goal = scenario.robot.goal;
    let bounds = (scenario.bounds_min, scenario.bounds_max);
    let dt = cfg.planner.dt;
    let pcfg = cfg.perception.partition;

    let mut filter = build_filter(&cfg.filter, scenario, cfg.seed);
    // Scheduling metadata (refresh time and pose) lives in `memory`; the
    // geometry of the trusted masks is re-anchored every step by matched
    // fresh detections, so warp baselines stay one control step long.
    let mut memory = MaskMemory::empty();
    let mut tracked = TrackedMasks::empty();
    let mut pending: Option<PendingRefresh> = None;
    let mut first_refresh_done = false;

    let mut nav = Navigator::new(cfg.planner.clone(), cfg.correction, engine, pcfg.eps_cluster);
    let mut pose = scenario.robot.start;
    let mut prev_partition: Option<PartitionedScan> = None;
    let mut last_failed_ids: Vec<u32> = Vec::new();
    let mut last_yield_step: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
    let mut corrections = 0usize;

    let mut records: Vec<StepRecord> = Vec::new();
    let mut status = TerminalStatus::Timeout;

    if pose.distance_xy(&goal) <= cfg.planner.goal_tolerance {
        return Ok(EpisodeTrace {
            scenario: scenario.name.clone(),
            seed: cfg.seed,
            mode: cfg.mode,
            records,
            status: TerminalStatus::Success,
        });
    }

    let max_steps = (cfg.timeout / dt).round() as usize;
    'episode: for step in 0..max_steps {
        let now = step as f64 * dt;
        let mut events: Vec<TraceEvent> = Vec::new();

        // Sense. A pass-through body in contact with the chassis drapes
        // around it and returns nothing (deformable-obstacle proxy).
        let chassis = polytope.world_polygon(&pose);
        let sensed: Vec<super::world::ObstacleBody> = obstacles
            .iter()
            .filter(|o| {
                o.blocks_motion()
                    || super::collide::polygon_overlap_mtv(&chassis, &o.polygon).is_none()
            })
            .cloned()
            .collect();
        let scan = raycast_scan(
            &sensed,
            &pose,
            &scenario.lidar,
            cfg.seed ^ (step as u64).wrapping_mul(0x9e3779b97f4a7c15),
        );
        let candidates = synth_detections(
            &sensed,
            &pose,
            &camera,
            &cfg.perception.grounding_classes,
            now,
        );

        // Movability refresh with latency; a failed filter keeps the stale
        // memory untouched. The filtered masks are geometry-tracked while
        // the verdict is in flight.
        if pending.is_none() && should_refresh(now, &pose, &memory, &pcfg) {
            match refresh_memory(
                now,
                &pose,
                &candidates,
                filter.as_mut(),
                &cfg.perception.prompt,
            ) {
                Ok(mem) => {
                    events.push(TraceEvent::RefreshTriggered);
                    pending = Some(PendingRefresh {
                        due: step + pcfg.refresh_latency_steps,
                        refresh_time: mem.refresh_time,
                        refresh_pose: mem.refresh_pose,
                        masks: TrackedMasks::from_masks(pose, mem.masks),
                    });
                }
                Err(FilterError::Unavailable(_)) => {
                    events.push(TraceEvent::FilterUnavailable);
                }
            }
        }
        if let Some(p) = &mut pending {
            p.masks.advance(&pose, &camera, &candidates, pcfg.sigma_iou);
            if step >= p.due {
                let p = pending.take().expect("pending checked");
                memory = MaskMemory {
                    masks: p.masks.current(),
                    refresh_time: p.refresh_time,
                    refresh_pose: p.refresh_pose,
                };
                tracked = p.masks;
                let deny = nav.deny_list().clone();
                tracked.retain_ids(|id| id.map_or(true, |id| !deny.contains(&id)));
                events.push(TraceEvent::RefreshApplied {
                    masks: tracked.masks.len(),
                });

                first_refresh_done = true;
            }
        } else {
            tracked.advance(&pose, &camera, &candidates, pcfg.sigma_iou);
        }
        if pending.is_some() && first_refresh_done {
            // Keep the live set tracking while a refresh is in flight.
            tracked.advance(&pose, &camera, &candidates, pcfg.sigma_iou);
        }
        let mut masks = tracked.current();
        masks.retain(|m| m.source_id.map_or(true, |id| !nav.deny_list().contains(&id)));
        let points: Vec<Vector3<f64>> = scan.iter().map(|s| s.point).collect();
        let truth: Vec<bool> = scan.iter().map(|s| s.truth_movable).collect();
        let part = partition_scan(&points, &masks, &pose, &camera, now);
        let part = refine_partition(&part, pcfg.eps_cluster, pcfg.n_min);

        // Evaluation channels (hidden from the planner).
        let f1 = partition_metrics(&part, &truth).map(|m| m.f1).unwrap_or(0.0);
        let gt_fixed: Vec<Vector2<f64>> = scan
            .iter()
            .filter(|s| !s.truth_movable)
            .map(|s| Vector2::new(s.point.x, s.point.y))
            .collect();
        let min_dist_truth = nav.exact_min_distance(&pose, &gt_fixed);

        // Plan. Before the first refresh lands, hold still (perception
        // bootstrap); the clock still advances.
        let control;
        let mut corrected_part: Option<PartitionedScan> = None;
        if first_refresh_done {
            let plan_part: &PartitionedScan = match cfg.mode {
                Mode::Lockstep => &part,
                Mode::Decoupled => prev_partition.as_ref().unwrap_or(&part),
            };
            let nav_step = nav.plan_step(now, &pose, plan_part, &goal, bounds, &last_failed_ids)?;
            for e in &nav_step.events {
                match e {
                    NavEvent::Replanned => events.push(TraceEvent::Replanned),
                    NavEvent::ReplanFailed => events.push(TraceEvent::ReplanFailed),
                    NavEvent::Unreachable => events.push(TraceEvent::Unreachable),
                    NavEvent::StuckDetected { denied, relabeled } => {
                        corrections += 1;
                        events.push(TraceEvent::Stuck {
                            denied: denied.clone(),
                            relabeled: *relabeled,
                        });
                    }
                    NavEvent::ReversalComplete => events.push(TraceEvent::ReversalComplete),
                    NavEvent::GovernorLimited => events.push(TraceEvent::GovernorLimited),
                    NavEvent::Retreating => events.push(TraceEvent::Retreating),
                }
            }
            corrected_part = nav_step.corrected_partition;
            if nav_step.failed {
                status = TerminalStatus::Unreachable;
                records.push(make_record(
                    now,
                    &pose,
                    Control::ZERO,
                    corrected_part.as_ref().unwrap_or(&part),
                    &nav,
                    min_dist_truth,
                    f1,
                    events,
                ));
                break 'episode;
            }
            if corrections > MAX_CORRECTIONS {
                status = TerminalStatus::StuckFail;
                records.push(make_record(
                    now,
                    &pose,
                    Control::ZERO,
                    corrected_part.as_ref().unwrap_or(&part),
                    &nav,
                    min_dist_truth,
                    f1,
                    events,
                ));
                break 'episode;
            }
            control = nav_step.control;
        } else {
            control = Control::ZERO;
        }

        // Act.
        let next = crate::planner::kinematics_step(&pose, control, dt);
        let outcome = step_world(
            &mut obstacles,
            &polytope,
            &pose,
            &next,
            scenario.robot.push_capability,
        )?;
        pose = outcome.resolved_pose;
        for c in &outcome.contacts {
            if c.yielded {
                last_yield_step.insert(c.id, step);
            }
        }
        // "Did not move during the failed push": an obstacle that yielded
        // recently is part of the jammed train, not the blocker.
        let yield_window = 2 * cfg.correction.tau_stuck;
        last_failed_ids = outcome
            .contacts
            .iter()
            .filter(|c| !c.yielded)
            .filter(|c| {
                last_yield_step
                    .get(&c.id)
                    .map_or(true, |&s| step.saturating_sub(s) > yield_window)
            })
            .map(|c| c.id)
            .collect();
        for c in &outcome.contacts {
            events.push(TraceEvent::Contact {
                id: c.id,
                yielded: c.yielded,
            });
        }

        let reached = pose.distance_xy(&goal) <= cfg.planner.goal_tolerance;
        if reached {
            events.push(TraceEvent::GoalReached);
        }
        records.push(make_record(
            now + dt,
            &pose,
            control,
            corrected_part.as_ref().unwrap_or(&part),
            &nav,
            min_dist_truth,
            f1,
            events,
        ));
        if reached {
            status = TerminalStatus::Success;
            break;
        }
        prev_partition = Some(part);
    }

    Ok(EpisodeTrace {
        scenario: scenario.name.clone(),
        seed: cfg.seed,
        mode: cfg.mode,
        records,
        status,
    })
}

#[allow(clippy::too_many_arguments)]
fn make_record(
    t: f64,
    pose: &Pose2,
    control: Control,
    part: &PartitionedScan,
    nav: &Navigator,
    min_dist_truth: f64,
    f1: f64,
    events: Vec<TraceEvent>,
) -> StepRecord {
    let min_dist = nav.exact_min_distance(pose, &part.fixed_xy());
    StepRecord {
        t,
        x: pose.x,
        y: pose.y,
        theta: pose.theta,
        v: control.v,
        psi: control.psi,
        movable: part.movable_count(),
        fixed: part.fixed_count(),
        min_dist,
        min_dist_truth,
        f1,
        events,
    }
}
