//! σ sweep over worker processes, one `train` invocation per (σ, seed).

use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

use afg_core::model::Mode;
use afg_core::training::{sweep_sigma, StepLog, SweepRow};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{read_jsonl, write_json};
use crate::stages::{cell_dir, final_dev_metric, write_stamp, METRICS_LOG, SWEEP};

pub const THREADS_ENV: &str = "AFG_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

/// Worker cap from `AFG_THREADS`, defaulting to one.
pub fn worker_limit() -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::validation(anyhow::anyhow!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}

struct Worker {
    sigma: f64,
    seed: u64,
    child: Child,
}

fn finish(w: Worker) -> CliResult<()> {
    let Worker { sigma, seed, mut child } = w;
    let status = child.wait().map_err(CliError::runtime)?;
    match status.code() {
        Some(0) => Ok(()),
        Some(1) => Err(CliError::validation(anyhow::anyhow!("worker σ={sigma} seed={seed} rejected its input"))),
        _ => Err(CliError::runtime(anyhow::anyhow!("worker σ={sigma} seed={seed} failed ({status})"))),
    }
}

/// Launches every cell through `exe train ...`, at most `AFG_THREADS` at a
/// time, then aggregates the final dev metric of each cell.
pub fn run_sweep(
    exe: &Path,
    config: &RunConfig,
    input: &Path,
    run: &Path,
    sigmas: &[f64],
    seeds: &[u64],
    mode: Mode,
) -> CliResult<SweepTable> {
    if seeds.len() < 2 {
        return Err(CliError::validation(anyhow::anyhow!("a sigma sweep needs at least two seeds")));
    }
    config.validate()?;
    let resolved = run.join("config.json");
    write_json(&resolved, config)?;
    let limit = worker_limit()?;
    let mut running: Vec<Worker> = Vec::new();
    for &sigma in sigmas {
        for &seed in seeds {
            if running.len() >= limit {
                finish(running.remove(0))?;
            }
            let dir = cell_dir(run, sigma, seed);
            std::fs::create_dir_all(&dir).map_err(CliError::runtime)?;
            let log = std::fs::File::create(dir.join("worker.log")).map_err(CliError::runtime)?;
            let err = log.try_clone().map_err(CliError::runtime)?;
            let child = Command::new(exe)
                .arg("train")
                .arg("--config")
                .arg(&resolved)
                .arg("--in")
                .arg(input)
                .arg("--out")
                .arg(run)
                .args(["--sigma", &sigma.to_string(), "--seed", &seed.to_string(), "--mode", mode.as_str()])
                .stdin(Stdio::null())
                .stdout(log)
                .stderr(err)
                .spawn()
                .map_err(CliError::runtime)?;
            log::info!("started σ={sigma} seed={seed}");
            running.push(Worker { sigma, seed, child });
        }
    }
    for w in running {
        finish(w)?;
    }
    let rows = sweep_sigma(sigmas, seeds, |sigma, seed| {
        let path = cell_dir(run, sigma, seed).join(METRICS_LOG);
        let log: Vec<StepLog> = read_jsonl(&path).map_err(|e| afg_core::Error::Precondition(e.to_string()))?;
        final_dev_metric(&log)
            .ok_or_else(|| afg_core::Error::Precondition(format!("{} has no dev metric", path.display())))
    })?;
    let table = SweepTable {
        mode,
        seeds: seeds.to_vec(),
        rows,
    };
    write_json(&run.join(SWEEP), &table)?;
    write_stamp(run, "sweep-sigma", None, &[input], config)?;
    Ok(table)
}

pub fn checkpoint_paths(run: &Path, sigmas: &[f64], seeds: &[u64]) -> Vec<PathBuf> {
    sigmas
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&n| cell_dir(run, s, n).join(crate::stages::CHECKPOINT)))
        .collect()
}
