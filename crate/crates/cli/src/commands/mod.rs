pub mod report;
pub mod run;
pub mod sweep;
pub mod train;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use ctnav_core::dualdist::{DistanceEngine, MlpModel};
use ctnav_core::sim::{scenarios, Mode, WorldScenario};
use ctnav_core::RobotPolytope;

pub struct Globals {
    pub seed: u64,
    pub mode: Mode,
    pub out: PathBuf,
    pub exact_solver: bool,
    pub vlm_endpoint: Option<String>,
    pub vlm_timeout: f64,
}

pub const EXIT_TASK_FAILURE: u8 = 1;
pub const EXIT_CONFIG_ERROR: u8 = 2;

pub fn config_error(msg: impl std::fmt::Display) -> Result<ExitCode> {
    eprintln!("configuration error: {msg}");
    Ok(ExitCode::from(EXIT_CONFIG_ERROR))
}

/// Library name (`case1`, `fxmy:2,2`, ...) or a path to a scenario JSON.
pub fn load_scenario(spec: &str, seed: u64) -> Result<WorldScenario> {
    if let Some(s) = scenarios::by_name(spec, seed) {
        return Ok(s);
    }
    let path = Path::new(spec);
    if path.exists() {
        return WorldScenario::load(path).with_context(|| format!("loading scenario {spec}"));
    }
    bail!("unknown scenario '{spec}' (library name or file path)");
}

/// Distance engine per the global flags: exact solver, or the surrogate
/// model file.
pub fn build_engine(globals: &Globals, model: Option<&Path>) -> Result<DistanceEngine<f64>> {
    if globals.exact_solver {
        return Ok(DistanceEngine::exact(
            RobotPolytope::rectangle(0.322, 0.220).expect("default chassis"),
        ));
    }
    match model {
        Some(path) => {
            let model =
                MlpModel::load(path).with_context(|| format!("loading model {}", path.display()))?;
            Ok(DistanceEngine::surrogate(model))
        }
        None => bail!("no model file given; pass --model FILE or --exact-solver"),
    }
}

pub fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
}
