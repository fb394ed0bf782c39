//! Plain-text tables over evaluation reports and sweeps.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use afg_core::eval::MetricsReport;

use crate::error::{CliError, CliResult};
use crate::io::read_json;
use crate::stages::{REPORT, SWEEP};
use crate::sweep::SweepTable;

fn collect(dir: &Path, name: &str, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect(&p, name, out)?;
        } else if p.file_name().is_some_and(|n| n == name) {
            out.push(p);
        }
    }
    Ok(())
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// One row per evaluation report, one column per metric, values in percent.
pub fn metrics_table(reports: &[(String, MetricsReport)]) -> String {
    let metrics: BTreeSet<&str> = reports
        .iter()
        .flat_map(|(_, r)| r.metrics.keys().map(String::as_str))
        .collect();
    let width = reports.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut s = format!("{:<width$}  {:<6}  {:>6}", "run", "mode", "n");
    for m in &metrics {
        let _ = write!(s, "  {m:>12}");
    }
    s.push('\n');
    for (name, r) in reports {
        let _ = write!(s, "{name:<width$}  {:<6}  {:>6}", r.mode.as_str(), r.n_examples);
        for m in &metrics {
            let v = r.metrics.get(*m).map_or_else(|| "-".to_string(), |&v| pct(v));
            let _ = write!(s, "  {v:>12}");
        }
        s.push('\n');
    }
    s
}

pub fn sweep_table(t: &SweepTable) -> String {
    let mut s = format!("mode {}  seeds {:?}\n{:>6}  {:>8}  {:>8}\n", t.mode.as_str(), t.seeds, "sigma", "mean", "std");
    for r in &t.rows {
        let _ = writeln!(s, "{:>6}  {:>8}  {:>8}", r.sigma, pct(r.mean), pct(r.std));
    }
    s
}

/// Renders every `report.json` and `sweep.json` found under `dir`.
pub fn render(dir: &Path) -> CliResult<String> {
    if !dir.is_dir() {
        return Err(CliError::validation(anyhow::anyhow!("{} is not a directory", dir.display())));
    }
    let mut reports = Vec::new();
    collect(dir, REPORT, &mut reports).map_err(CliError::runtime)?;
    let mut sweeps = Vec::new();
    collect(dir, SWEEP, &mut sweeps).map_err(CliError::runtime)?;
    if reports.is_empty() && sweeps.is_empty() {
        return Err(CliError::validation(anyhow::anyhow!(
            "no {REPORT} or {SWEEP} under {}; run `afg eval` or `afg sweep-sigma` first",
            dir.display()
        )));
    }
    let mut out = String::new();
    if !reports.is_empty() {
        let mut rows = Vec::new();
        for p in &reports {
            let r: MetricsReport = read_json(p)?;
            let name = p
                .parent()
                .and_then(|d| d.strip_prefix(dir).ok())
                .map(|d| d.display().to_string())
                .filter(|d| !d.is_empty())
                .unwrap_or_else(|| ".".into());
            rows.push((name, r));
        }
        out.push_str(&metrics_table(&rows));
    }
    for p in &sweeps {
        let t: SweepTable = read_json(p)?;
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&sweep_table(&t));
    }
    Ok(out)
}
