use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Args;

use ctnav_core::sim::{
    compute_metrics, run_episode, scenarios, EpisodeConfig, FilterChoice, TerminalStatus,
};

use super::{build_engine, ensure_out_dir, Globals};

#[derive(Args)]
pub struct SweepArgs {
    /// Sweep family: fxmy | noise-dial.
    #[arg(long)]
    family: String,
    /// Levels: fxmy takes "F4M0,F3M1,..."; noise-dial takes false-negative
    /// probabilities "0,0.1,0.2,0.3".
    #[arg(long)]
    levels: String,
    /// Episodes per level; seeds are base_seed + index.
    #[arg(long, default_value_t = 10)]
    repetitions: usize,
    /// Scenario for the noise-dial family.
    #[arg(long, default_value = "fxmy:1,3")]
    scenario: String,
    /// Trained surrogate model (ignored with --exact-solver).
    #[arg(long)]
    model: Option<PathBuf>,
}

struct Row {
    level: String,
    success_rate: f64,
    mean_nav_time: f64,
    std_nav_time: f64,
    mean_avg_speed: f64,
    std_avg_speed: f64,
    mean_nav_distance: f64,
    std_nav_distance: f64,
    mean_f1: f64,
    failures: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    (mean, var.sqrt())
}

pub fn sweep(args: &SweepArgs, globals: &Globals) -> Result<ExitCode> {
    if args.repetitions == 0 {
        return super::config_error("repetitions must be >= 1");
    }
    let levels: Vec<String> = args
        .levels
        .split(',')
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    if levels.is_empty() {
        return super::config_error("no levels given");
    }

    let mut rows = Vec::new();
    for level in &levels {
        let mut times = Vec::new();
        let mut speeds = Vec::new();
        let mut dists = Vec::new();
        let mut f1s = Vec::new();
        let mut successes = 0usize;
        let mut failures = 0usize;
        for rep in 0..args.repetitions {
            let seed = globals.seed + rep as u64;
            let engine = match build_engine(globals, args.model.as_deref()) {
                Ok(e) => e,
                Err(e) => return super::config_error(e),
            };
            let (scenario, filter) = match args.family.as_str() {
                "fxmy" => {
                    let spec = parse_fxmy_level(level)
                        .ok_or_else(|| anyhow::anyhow!("bad fxmy level '{level}'"))?;
                    (
                        scenarios::fxmy(spec.0, spec.1, seed),
                        FilterChoice::GroundTruth,
                    )
                }
                "noise-dial" => {
                    let p: f64 = level
                        .parse()
                        .with_context(|| format!("bad noise level '{level}'"))?;
                    let scenario = match super::load_scenario(&args.scenario, seed) {
                        Ok(s) => s,
                        Err(e) => return super::config_error(e),
                    };
                    (
                        scenario,
                        FilterChoice::Corrupted {
                            p_false_neg: p,
                            p_false_pos: 0.0,
                        },
                    )
                }
                other => return super::config_error(format!("unknown family '{other}'")),
            };
            let cfg = EpisodeConfig {
                filter,
                mode: globals.mode,
                seed,
                ..EpisodeConfig::default()
            };
            match run_episode(&scenario, &cfg, engine) {
                Ok(trace) => {
                    let m = compute_metrics(&trace);
                    let mean_f1 = if trace.records.is_empty() {
                        0.0
                    } else {
                        trace.records.iter().map(|r| r.f1).sum::<f64>()
                            / trace.records.len() as f64
                    };
                    f1s.push(mean_f1);
                    if trace.status == TerminalStatus::Success {
                        successes += 1;
                        times.push(m.nav_time);
                        speeds.push(m.avg_speed);
                        dists.push(m.nav_distance);
                    } else {
                        failures += 1;
                    }
                }
                Err(e) => {
                    eprintln!("{level} rep {rep}: {e}");
                    failures += 1;
                }
            }
        }
        let (mt, st) = mean_std(&times);
        let (ms, ss) = mean_std(&speeds);
        let (md, sd) = mean_std(&dists);
        let (mf, _) = mean_std(&f1s);
        rows.push(Row {
            level: level.clone(),
            success_rate: successes as f64 / args.repetitions as f64,
            mean_nav_time: mt,
            std_nav_time: st,
            mean_avg_speed: ms,
            std_avg_speed: ss,
            mean_nav_distance: md,
            std_nav_distance: sd,
            mean_f1: mf,
            failures,
        });
    }

    let mut csv = String::from(
        "level,sr,meanNavTime,stdNavTime,meanAvgSpeed,stdAvgSpeed,meanNavDistance,stdNavDistance,meanF1,failures\n",
    );
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            r.level,
            r.success_rate,
            r.mean_nav_time,
            r.std_nav_time,
            r.mean_avg_speed,
            r.std_avg_speed,
            r.mean_nav_distance,
            r.std_nav_distance,
            r.mean_f1,
            r.failures
        )?;
    }
    ensure_out_dir(&globals.out)?;
    let path = globals.out.join(format!("sweep_{}.csv", args.family));
    std::fs::write(&path, &csv).context("writing sweep csv")?;
    print!("{csv}");
    println!("-> {}", path.display());
    Ok(ExitCode::SUCCESS)
}

/// "F4M0" / "f2m2" style level names.
fn parse_fxmy_level(level: &str) -> Option<(usize, usize)> {
    let lower = level.to_ascii_lowercase();
    let rest = lower.strip_prefix('f')?;
    let (f, m) = rest.split_once('m')?;
    let f: usize = f.parse().ok()?;
    let m: usize = m.parse().ok()?;
    (f + m <= 4).then_some((f, m))
}
