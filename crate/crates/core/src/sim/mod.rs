//! Deterministic 2D sandbox: polygonal world with movability ground truth,
//! raycast lidar, geometric mask synthesis, quasi-static push dynamics, and
//! the closed-loop episode runner.

pub mod collide;
mod episode;
mod lidar;
mod physics;
pub mod scenarios;
mod vision;
mod world;

pub use episode::*;
pub use lidar::{raycast_scan, ScanPoint};
pub use physics::{step_world, ContactEvent, SimFault, StepOutcome};
pub use vision::{ground_truth_masks, synth_detections, DEFAULT_GROUNDING_CLASSES};
pub use world::{
    CameraConfig, LidarModel, ObstacleBody, ObstacleClass, RobotSpec, ScenarioError, WorldScenario,
};
