use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Args;

use ctnav_core::sim::StepRecord;

use super::{ensure_out_dir, Globals};

#[derive(Args)]
pub struct ReportArgs {
    /// Directory containing .jsonl traces (default: the output directory).
    #[arg(long)]
    traces: Option<PathBuf>,
}

/// One CSV per episode with columns {t, x, y, theta, v, psi, minDist}.
pub fn report(args: &ReportArgs, globals: &Globals) -> Result<ExitCode> {
    let dir = args.traces.clone().unwrap_or_else(|| globals.out.clone());
    if !dir.is_dir() {
        return super::config_error(format!("{} is not a directory", dir.display()));
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return super::config_error(format!("no .jsonl traces under {}", dir.display()));
    }
    ensure_out_dir(&globals.out)?;
    let mut written = 0usize;
    for path in entries {
        let text = std::fs::read_to_string(&path)?;
        let mut csv = String::from("t,x,y,theta,v,psi,minDist\n");
        let mut rows = 0usize;
        let mut corrupt = false;
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<StepRecord>(line) {
                Ok(r) => {
                    writeln!(
                        csv,
                        "{},{},{},{},{},{},{}",
                        r.t, r.x, r.y, r.theta, r.v, r.psi, r.min_dist
                    )?;
                    rows += 1;
                }
                Err(_) => {
                    // Terminal line or foreign content; terminal lines are
                    // expected exactly once at the end.
                    if serde_json::from_str::<serde_json::Value>(line)
                        .map(|v| v.get("terminal").is_none())
                        .unwrap_or(true)
                    {
                        corrupt = true;
                        break;
                    }
                }
            }
        }
        if corrupt {
            eprintln!("skipping corrupt trace {}", path.display());
            continue;
        }
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        let out_path = globals.out.join(format!("{stem}.series.csv"));
        std::fs::write(&out_path, &csv)
            .with_context(|| format!("writing {}", out_path.display()))?;
        println!("{} rows -> {}", rows, out_path.display());
        written += 1;
    }
    if written == 0 {
        return Ok(ExitCode::from(super::EXIT_TASK_FAILURE));
    }
    Ok(ExitCode::SUCCESS)
}
