//! World model: polygonal obstacles with movability ground truth, the robot
//! spec, sensors, and the scenario JSON schema.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::collide::{is_convex_ccw, point_in_convex, polygon_overlap_mtv};
use crate::{CameraModel, Pose2, RobotPolytope};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("obstacle {0} polygon must be convex counterclockwise with >= 3 vertices")]
    BadPolygon(u32),
    #[error("obstacle {0} lies outside the world bounds")]
    OutOfBounds(u32),
    #[error("duplicate obstacle id {0}")]
    DuplicateId(u32),
    #[error("push resistance of obstacle {0} must be nonnegative")]
    BadResistance(u32),
    #[error("robot start pose overlaps obstacle {0}")]
    StartInCollision(u32),
    #[error("lidar model invalid: {0}")]
    BadLidar(&'static str),
    #[error("camera model invalid: {0}")]
    BadCamera(String),
    #[error("{0}")]
    BadField(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObstacleClass {
    Box,
    Curtain,
    Shelf,
    Wall,
}

impl ObstacleClass {
    pub fn name(self) -> &'static str {
        match self {
            ObstacleClass::Box => "box",
            ObstacleClass::Curtain => "curtain",
            ObstacleClass::Shelf => "shelf",
            ObstacleClass::Wall => "wall",
        }
    }

    fn default_height(self) -> f64 {
        match self {
            ObstacleClass::Box => 0.5,
            ObstacleClass::Curtain => 1.2,
            ObstacleClass::Shelf => 0.9,
            ObstacleClass::Wall => 1.2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ObstacleBody {
    pub id: u32,
    pub polygon: Vec<Vector2<f64>>,
    pub movable_truth: bool,
    pub push_resistance: f64,
    pub class: ObstacleClass,
    pub height: f64,
}

impl ObstacleBody {
    pub fn translate(&mut self, dv: Vector2<f64>) {
        for v in &mut self.polygon {
            *v += dv;
        }
    }

    pub fn contains(&self, p: Vector2<f64>) -> bool {
        point_in_convex(&self.polygon, p)
    }

    /// Curtains never resist motion.
    pub fn blocks_motion(&self) -> bool {
        self.class != ObstacleClass::Curtain
    }

    pub fn yields_to(&self, push_capability: f64) -> bool {
        self.movable_truth && self.push_resistance <= push_capability
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct LidarModel {
    pub beam_count: usize,
    pub fov: f64,
    pub max_range: f64,
    pub range_noise_sigma: f64,
    pub rate: f64,
    #[serde(default = "default_scan_height")]
    pub scan_height: f64,
}

fn default_scan_height() -> f64 {
    // At the camera optical height the scan plane projects onto the
    // principal row, so contact-range returns never leave the frame.
    0.1
}

impl Default for LidarModel {
    fn default() -> Self {
        Self {
            beam_count: 540,
            fov: std::f64::consts::TAU,
            max_range: 8.0,
            range_noise_sigma: 0.0,
            rate: 10.0,
            scan_height: default_scan_height(),
        }
    }
}

impl LidarModel {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.beam_count == 0 {
            return Err(ScenarioError::BadLidar("beamCount must be >= 1"));
        }
        if self.max_range <= 0.0 {
            return Err(ScenarioError::BadLidar("maxRange must be positive"));
        }
        if self.range_noise_sigma < 0.0 {
            return Err(ScenarioError::BadLidar("rangeNoiseSigma must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub mount_height: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            fx: 160.0,
            fy: 160.0,
            cx: 160.0,
            cy: 120.0,
            width: 320,
            height: 240,
            mount_height: 0.1,
        }
    }
}

impl CameraConfig {
    pub fn build(&self) -> Result<CameraModel, ScenarioError> {
        CameraModel::forward_mounted(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
            self.mount_height,
        )
        .map_err(|e| ScenarioError::BadCamera(e.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct RobotSpec {
    pub start: Pose2,
    pub goal: Pose2,
    pub length: f64,
    pub width: f64,
    pub push_capability: f64,
}

impl RobotSpec {
    pub fn polytope(&self) -> RobotPolytope {
        RobotPolytope::rectangle(self.length, self.width).expect("validated dimensions")
    }
}

/// Deterministic simulation input: world geometry, movability ground truth,
/// robot, and sensor models.
#[derive(Clone, Debug)]
pub struct WorldScenario {
    pub name: String,
    pub bounds_min: Vector2<f64>,
    pub bounds_max: Vector2<f64>,
    pub obstacles: Vec<ObstacleBody>,
    pub robot: RobotSpec,
    pub lidar: LidarModel,
    pub camera: CameraConfig,
    pub seed: u64,
}

impl WorldScenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut seen = std::collections::HashSet::new();
        for o in &self.obstacles {
            if !seen.insert(o.id) {
                return Err(ScenarioError::DuplicateId(o.id));
            }
            if !is_convex_ccw(&o.polygon) {
                return Err(ScenarioError::BadPolygon(o.id));
            }
            if o.push_resistance < 0.0 {
                return Err(ScenarioError::BadResistance(o.id));
            }
            for v in &o.polygon {
                if v.x < self.bounds_min.x - 1e-9
                    || v.y < self.bounds_min.y - 1e-9
                    || v.x > self.bounds_max.x + 1e-9
                    || v.y > self.bounds_max.y + 1e-9
                {
                    return Err(ScenarioError::OutOfBounds(o.id));
                }
            }
        }
        if self.robot.length <= 0.0 || self.robot.width <= 0.0 {
            return Err(ScenarioError::BadField("robot dimensions must be positive".into()));
        }
        self.lidar.validate()?;
        self.camera.build()?;
        let body = self.robot.polytope().world_polygon(&self.robot.start);
        for o in &self.obstacles {
            if o.blocks_motion() && polygon_overlap_mtv(&body, &o.polygon).is_some() {
                return Err(ScenarioError::StartInCollision(o.id));
            }
        }
        Ok(())
    }

    /// Ground-truth movability labels, keyed by obstacle id.
    pub fn movability_truth(&self) -> HashMap<u32, bool> {
        self.obstacles
            .iter()
            .map(|o| (o.id, o.movable_truth))
            .collect()
    }

    pub fn obstacle(&self, id: u32) -> Option<&ObstacleBody> {
        self.obstacles.iter().find(|o| o.id == id)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        let dto: ScenarioDto = serde_json::from_str(&text)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
        let scenario = dto.into_scenario(name)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        let dto = ScenarioDto::from_scenario(self);
        std::fs::write(path, serde_json::to_string_pretty(&dto)?)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ObstacleDto {
    id: u32,
    vertices: Vec<[f64; 2]>,
    movable: bool,
    resistance: f64,
    class: ObstacleClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    height: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RobotDto {
    start: [f64; 3],
    goal: [f64; 3],
    length: f64,
    width: f64,
    push_capability: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ScenarioDto {
    bounds: [[f64; 2]; 2],
    obstacles: Vec<ObstacleDto>,
    robot: RobotDto,
    #[serde(default)]
    lidar: LidarModel,
    #[serde(default)]
    camera: CameraConfig,
    seed: u64,
}

impl ScenarioDto {
    fn into_scenario(self, name: String) -> Result<WorldScenario, ScenarioError> {
        Ok(WorldScenario {
            name,
            bounds_min: Vector2::new(self.bounds[0][0], self.bounds[0][1]),
            bounds_max: Vector2::new(self.bounds[1][0], self.bounds[1][1]),
            obstacles: self
                .obstacles
                .into_iter()
                .map(|o| ObstacleBody {
                    id: o.id,
                    polygon: o.vertices.iter().map(|v| Vector2::new(v[0], v[1])).collect(),
                    movable_truth: o.movable,
                    push_resistance: o.resistance,
                    class: o.class,
                    height: o.height.unwrap_or_else(|| o.class.default_height()),
                })
                .collect(),
            robot: RobotSpec {
                start: Pose2::new(self.robot.start[0], self.robot.start[1], self.robot.start[2]),
                goal: Pose2::new(self.robot.goal[0], self.robot.goal[1], self.robot.goal[2]),
                length: self.robot.length,
                width: self.robot.width,
                push_capability: self.robot.push_capability,
            },
            lidar: self.lidar,
            camera: self.camera,
            seed: self.seed,
        })
    }

    fn from_scenario(s: &WorldScenario) -> Self {
        Self {
            bounds: [
                [s.bounds_min.x, s.bounds_min.y],
                [s.bounds_max.x, s.bounds_max.y],
            ],
            obstacles: s
                .obstacles
                .iter()
                .map(|o| ObstacleDto {
                    id: o.id,
                    vertices: o.polygon.iter().map(|v| [v.x, v.y]).collect(),
                    movable: o.movable_truth,
                    resistance: o.push_resistance,
                    class: o.class,
                    height: Some(o.height),
                })
                .collect(),
            robot: RobotDto {
                start: [s.robot.start.x, s.robot.start.y, s.robot.start.theta],
                goal: [s.robot.goal.x, s.robot.goal.y, s.robot.goal.theta],
                length: s.robot.length,
                width: s.robot.width,
                push_capability: s.robot.push_capability,
            },
            lidar: s.lidar,
            camera: s.camera,
            seed: s.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenarios;

    #[test]
    fn scenario_json_round_trip() {
        let s = scenarios::case1(3);
        let dir = std::env::temp_dir().join("ctnav_world_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("case1.json");
        s.save(&path).unwrap();
        let loaded = WorldScenario::load(&path).unwrap();
        assert_eq!(loaded.obstacles.len(), s.obstacles.len());
        assert_eq!(loaded.robot.start, s.robot.start);
        assert_eq!(loaded.seed, s.seed);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let s = scenarios::case1(3);
        let mut value = serde_json::to_value(ScenarioDto::from_scenario(&s)).unwrap();
        value["surprise"] = serde_json::json!(1);
        let text = serde_json::to_string(&value).unwrap();
        let parsed: Result<ScenarioDto, _> = serde_json::from_str(&text);
        assert!(parsed.is_err());
    }

    #[test]
    fn start_in_collision_is_rejected() {
        let mut s = scenarios::case1(3);
        s.robot.start = Pose2::new(4.0, 3.0, 0.0);
        assert!(matches!(
            s.validate(),
            Err(ScenarioError::StartInCollision(_))
        ));
    }

    #[test]
    fn library_scenarios_validate() {
        for s in [
            scenarios::case1(1),
            scenarios::case2(2),
            scenarios::case3(3),
            scenarios::heavy_box(4),
            scenarios::curtain(5),
            scenarios::fxmy(4, 0, 6),
            scenarios::fxmy(1, 3, 7),
        ] {
            s.validate().unwrap_or_else(|e| panic!("{}: {e}", s.name));
        }
    }
}
