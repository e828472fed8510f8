use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;

use ctnav_core::dualdist::{
    closed_form_rect_distance, generate_demos, train_mlp, MlpModel, SamplingRanges, TrainConfig,
};
use ctnav_core::geometry::Pose2 as GenericPose;
use ctnav_core::RobotPolytope;

use super::{ensure_out_dir, Globals};

#[derive(Args)]
pub struct TrainArgs {
    /// Demonstration sample count.
    #[arg(long, default_value_t = 100_000)]
    count: usize,
    /// Annulus radial bounds in the body frame, meters.
    #[arg(long, default_value_t = 0.0)]
    r_min: f64,
    #[arg(long, default_value_t = 5.0)]
    r_max: f64,
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    #[arg(long, default_value_t = 0.06)]
    learning_rate: f64,
    #[arg(long, default_value_t = 24)]
    batch_size: usize,
    /// Chassis length and width, meters.
    #[arg(long, default_value_t = 0.322)]
    length: f64,
    #[arg(long, default_value_t = 0.220)]
    width: f64,
    /// Model output path (default: <out>/model.json).
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct TrainingReport {
    final_loss: f64,
    held_out_distance_mae: f64,
    rho_p99: f64,
    sample_count: usize,
    epochs: usize,
}

pub fn train(args: &TrainArgs, globals: &Globals) -> Result<ExitCode> {
    if args.r_min < 0.0 || args.r_min >= args.r_max {
        return super::config_error("sampling ranges require 0 <= r_min < r_max");
    }
    let polytope = match RobotPolytope::rectangle(args.length, args.width) {
        Ok(p) => p,
        Err(e) => return super::config_error(e),
    };
    ensure_out_dir(&globals.out)?;
    let ranges = SamplingRanges::new(args.r_min, args.r_max, args.count)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let demos = generate_demos(&ranges, &polytope, globals.seed)?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
        seed: globals.seed,
        ..TrainConfig::default()
    };
    let (model, report) = train_mlp(&demos, &cfg, &polytope)?;

    let model_path = args
        .model_out
        .clone()
        .unwrap_or_else(|| globals.out.join("model.json"));
    model.save(&model_path).context("writing model file")?;
    let report_path = globals.out.join("training_report.json");
    let doc = TrainingReport {
        final_loss: report.final_loss,
        held_out_distance_mae: report.held_out_distance_mae,
        rho_p99: report.rho_p99,
        sample_count: report.sample_count,
        epochs: report.epoch_losses.len(),
    };
    std::fs::write(&report_path, serde_json::to_string_pretty(&doc)?)?;
    println!(
        "model -> {} (held-out distance MAE {:.4} m, rho99 {:.4})",
        model_path.display(),
        report.held_out_distance_mae,
        report.rho_p99
    );
    if !report.final_loss.is_finite() {
        return Ok(ExitCode::from(super::EXIT_TASK_FAILURE));
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct EvalArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    /// Fresh evaluation sample count.
    #[arg(long, default_value_t = 10_000)]
    count: usize,
    #[arg(long, default_value_t = 0.0)]
    r_min: f64,
    #[arg(long, default_value_t = 5.0)]
    r_max: f64,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct EvalReport {
    distance_mae: f64,
    rho_p99: f64,
    sample_count: usize,
}

pub fn eval(args: &EvalArgs, globals: &Globals) -> Result<ExitCode> {
    let model = MlpModel::<f64>::load(&args.model)
        .with_context(|| format!("loading model {}", args.model.display()))?;
    let polytope = model.polytope().clone();
    let ranges = match SamplingRanges::new(args.r_min, args.r_max, args.count) {
        Ok(r) => r,
        Err(e) => return super::config_error(e),
    };
    // Fresh stream distinct from training.
    let demos = generate_demos(&ranges, &polytope, globals.seed ^ 0x65_76_61_6c)?;
    let pose = GenericPose::origin();
    let points: Vec<_> = demos.iter().map(|d| d.point).collect();
    let outs = model.infer_duals(&pose, &points);
    let mut abs = Vec::with_capacity(demos.len());
    let mut slacks = Vec::with_capacity(demos.len());
    for (d, o) in demos.iter().zip(&outs) {
        let exact = closed_form_rect_distance(&polytope, &pose, d.point)
            .map(|r| r.distance)
            .unwrap_or(d.distance);
        abs.push((o.distance - exact).abs());
        slacks.push(o.slack);
    }
    let mae = abs.iter().sum::<f64>() / abs.len().max(1) as f64;
    slacks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p99 = slacks
        .get(((slacks.len() as f64 * 0.99) as usize).min(slacks.len().saturating_sub(1)))
        .copied()
        .unwrap_or(0.0);
    ensure_out_dir(&globals.out)?;
    let doc = EvalReport {
        distance_mae: mae,
        rho_p99: p99,
        sample_count: demos.len(),
    };
    std::fs::write(
        globals.out.join("eval_report.json"),
        serde_json::to_string_pretty(&doc)?,
    )?;
    println!("distance MAE {mae:.4} m over {} samples (rho99 {p99:.4})", demos.len());
    Ok(ExitCode::SUCCESS)
}
