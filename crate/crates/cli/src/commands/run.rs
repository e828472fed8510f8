use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Args;

use ctnav_core::sim::{
    compute_metrics, run_episode, EpisodeConfig, EpisodeError, FilterChoice, TerminalStatus,
};

use super::{build_engine, ensure_out_dir, load_scenario, Globals};

#[derive(Args)]
pub struct RunArgs {
    /// Library scenario name (case1|case2|case3|heavybox|curtain|fxmy:F,M)
    /// or a scenario JSON path.
    #[arg(long)]
    pub scenario: String,
    /// Trained surrogate model (ignored with --exact-solver).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Movability filter: ground-truth | all-fixed | corrupted:PFN,PFP.
    /// A remote endpoint flag or environment variable overrides this.
    #[arg(long, default_value = "ground-truth")]
    pub filter: String,
    /// Episode timeout, simulated seconds.
    #[arg(long, default_value_t = 60.0)]
    pub timeout: f64,
    /// Safety margin d_min override, meters.
    #[arg(long)]
    pub d_min: Option<f64>,
    /// Trace file stem (default: the scenario name).
    #[arg(long)]
    pub tag: Option<String>,
}

pub fn parse_filter(spec: &str, globals: &Globals) -> Result<FilterChoice, String> {
    if let Some(url) = &globals.vlm_endpoint {
        return Ok(FilterChoice::Remote {
            endpoint: url.clone(),
            timeout_s: globals.vlm_timeout,
        });
    }
    match spec {
        "ground-truth" => Ok(FilterChoice::GroundTruth),
        "all-fixed" => Ok(FilterChoice::AllFixed),
        other => {
            let rest = other
                .strip_prefix("corrupted:")
                .ok_or_else(|| format!("unknown filter '{other}'"))?;
            let (pfn, pfp) = rest
                .split_once(',')
                .ok_or_else(|| "corrupted filter needs PFN,PFP".to_string())?;
            let p_false_neg: f64 = pfn.trim().parse().map_err(|e| format!("bad PFN: {e}"))?;
            let p_false_pos: f64 = pfp.trim().parse().map_err(|e| format!("bad PFP: {e}"))?;
            if !(0.0..=1.0).contains(&p_false_neg) || !(0.0..=1.0).contains(&p_false_pos) {
                return Err("flip probabilities must lie in [0, 1]".into());
            }
            Ok(FilterChoice::Corrupted {
                p_false_neg,
                p_false_pos,
            })
        }
    }
}

pub fn run(args: &RunArgs, globals: &Globals) -> Result<ExitCode> {
    let scenario = match load_scenario(&args.scenario, globals.seed) {
        Ok(s) => s,
        Err(e) => return super::config_error(e),
    };
    let filter = match parse_filter(&args.filter, globals) {
        Ok(f) => f,
        Err(e) => return super::config_error(e),
    };
    let engine = match build_engine(globals, args.model.as_deref()) {
        Ok(e) => e,
        Err(e) => return super::config_error(e),
    };

    let mut cfg = EpisodeConfig {
        filter,
        mode: globals.mode,
        timeout: args.timeout,
        seed: globals.seed,
        ..EpisodeConfig::default()
    };
    if let Some(d) = args.d_min {
        if d <= 0.0 {
            return super::config_error("d_min must be positive");
        }
        cfg.planner.d_min = d;
    }

    let trace = match run_episode(&scenario, &cfg, engine) {
        Ok(t) => t,
        Err(e @ (EpisodeError::Scenario(_) | EpisodeError::Config(_) | EpisodeError::BadConfig(_))) => {
            return super::config_error(e);
        }
        Err(e) => return Err(e.into()),
    };

    ensure_out_dir(&globals.out)?;
    let stem = args.tag.clone().unwrap_or_else(|| {
        format!("{}_seed{}", trace.scenario.replace(':', "_"), globals.seed)
    });
    let trace_path = globals.out.join(format!("{stem}.jsonl"));
    std::fs::write(&trace_path, trace.to_jsonl()).context("writing trace")?;
    let metrics = compute_metrics(&trace);
    let metrics_path = globals.out.join(format!("{stem}.metrics.json"));
    std::fs::write(&metrics_path, serde_json::to_string_pretty(&metrics)?)?;
    println!(
        "{}: {:?} in {:.1} s, {:.2} m at {:.2} m/s -> {}",
        trace.scenario,
        trace.status,
        metrics.nav_time,
        metrics.nav_distance,
        metrics.avg_speed,
        trace_path.display()
    );

    if trace.status == TerminalStatus::Success {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(super::EXIT_TASK_FAILURE))
    }
}
