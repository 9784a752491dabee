//! CSV and JSON reports plus the run manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::Serialize;

use crate::plan::ExperimentPlan;
use crate::runner::{scenario_hash, RunRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// CSV columns in output order. Timing columns come last so they can be
/// dropped when comparing runs.
pub const CSV_COLUMNS: [&str; 20] = [
    "scenario_id",
    "policy",
    "repetition",
    "status",
    "slots",
    "right_idle",
    "conservative",
    "success",
    "failure",
    "decision_accuracy",
    "modified_decision_accuracy",
    "beta",
    "interference",
    "discounted_return",
    "gamma",
    "total_reward",
    "final_avg_max_q",
    "error",
    "train_seconds",
    "wall_clock_per_decision",
];

/// Number of trailing timing columns in [`CSV_COLUMNS`].
pub const TIMING_COLUMNS: usize = 2;

fn float(v: f64) -> String {
    // `Display` for f64 prints the shortest string that parses back exactly.
    format!("{v}")
}

fn csv_row(r: &RunRecord) -> Vec<String> {
    let mut row = vec![
        r.scenario_id.clone(),
        r.policy.to_string(),
        r.repetition.to_string(),
        if r.ok() { "ok" } else { "failed" }.to_string(),
    ];
    match &r.metrics {
        Some(m) => {
            row.extend([
                m.slots.to_string(),
                m.counts.right_idle.to_string(),
                m.counts.conservative.to_string(),
                m.counts.success.to_string(),
                m.counts.failure.to_string(),
                float(m.decision_accuracy),
                float(m.modified_decision_accuracy),
                float(m.beta),
                float(m.interference),
                float(m.discounted_return),
                float(m.gamma),
                float(m.total_reward),
                m.avg_max_q_series
                    .as_ref()
                    .and_then(|s| s.last())
                    .map(|&v| float(v))
                    .unwrap_or_default(),
            ]);
        }
        None => row.extend(std::iter::repeat_n(String::new(), 13)),
    }
    row.push(r.error.clone().unwrap_or_default());
    row.push(float(r.train_seconds));
    row.push(
        r.metrics
            .as_ref()
            .map(|m| float(m.wall_clock_per_decision))
            .unwrap_or_default(),
    );
    debug_assert_eq!(row.len(), CSV_COLUMNS.len());
    row
}

pub fn write_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.write_record(csv_row(r))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct JsonReport<'a> {
    runs: &'a [RunRecord],
}

pub fn write_json<W: Write>(records: &[RunRecord], mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, &JsonReport { runs: records })?;
    writeln!(out)?;
    Ok(())
}

/// Writes `metrics.csv` or `metrics.json` into `dir` and returns its path.
pub fn emit_report(records: &[RunRecord], format: Format, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = dir.join(match format {
        Format::Csv => "metrics.csv",
        Format::Json => "metrics.json",
    });
    let file = BufWriter::new(
        File::create(&path).with_context(|| format!("cannot create {}", path.display()))?,
    );
    match format {
        Format::Csv => write_csv(records, file)?,
        Format::Json => write_json(records, file)?,
    }
    Ok(path)
}

#[derive(Serialize)]
struct ScenarioEntry<'a> {
    id: &'a str,
    sha256: String,
}

#[derive(Serialize)]
struct RunEntry<'a> {
    scenario_id: &'a str,
    policy: String,
    repetition: u32,
    eval_env_seed: u64,
    train_env_seed: u64,
    agent_seed: u64,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<&'a Path>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    plan: &'a ExperimentPlan,
    scenarios: Vec<ScenarioEntry<'a>>,
    runs: Vec<RunEntry<'a>>,
}

/// Everything needed to replay the runs: the resolved plan, scenario
/// hashes and every derived seed.
pub fn write_manifest(plan: &ExperimentPlan, records: &[RunRecord], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        plan,
        scenarios: plan
            .scenarios
            .iter()
            .map(|s| ScenarioEntry {
                id: &s.id,
                sha256: scenario_hash(&s.config),
            })
            .collect(),
        runs: records
            .iter()
            .map(|r| RunEntry {
                scenario_id: &r.scenario_id,
                policy: r.policy.to_string(),
                repetition: r.repetition,
                eval_env_seed: r.seeds.eval_env,
                train_env_seed: r.seeds.train_env,
                agent_seed: r.seeds.agent,
                status: if r.ok() { "ok" } else { "failed" },
                checkpoint: r.checkpoint.as_deref(),
            })
            .collect(),
    };
    let path = dir.join("manifest.json");
    let mut file = BufWriter::new(
        File::create(&path).with_context(|| format!("cannot create {}", path.display()))?,
    );
    serde_json::to_writer_pretty(&mut file, &manifest)?;
    writeln!(file)?;
    Ok(path)
}
