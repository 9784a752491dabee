use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dsa_cli::plan::{load_scenario, scenario_id, DEFAULT_OUT_DIR, DEFAULT_SLOTS};
use dsa_cli::runner::{
    probe_states, run_one, train_policy, RunRecord, RunSeeds, RunSpec, RunStatus, Trained,
    PROBE_STATES,
};
use dsa_cli::{
    emit_report, parse_config, run_experiment, write_manifest, ExperimentPlan, Format, HyperConfig,
    PolicyKind, Scenario,
};
use dsa_core::Telemetry;

#[derive(Parser)]
#[command(name = "dsa", version, about = "Dynamic spectrum access experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a learning policy on one scenario and save its checkpoint.
    Train(Common),
    /// Evaluate policies on one scenario.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Evaluate this checkpoint instead of training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run every scenario x policy x repetition of a plan.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Plan file; other flags override its values.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        repetitions: Option<u32>,
        /// Runs executed in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file; repeat for several.
    #[arg(long)]
    scenario: Vec<PathBuf>,
    /// Hyperparameter file.
    #[arg(long)]
    hyper: Option<PathBuf>,
    /// Policy name; repeat for several.
    #[arg(long)]
    policy: Vec<PolicyKind>,
    /// Evaluation slots.
    #[arg(long)]
    slots: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "DSA_OUT_DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

/// Distinguishes bad input (exit 2) from failures while running (exit 1).
enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

fn config<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Config)
}

fn running<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Run)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(common) => train(common),
        Command::Eval { common, checkpoint } => eval(common, checkpoint),
        Command::Sweep {
            common,
            plan,
            repetitions,
            jobs,
        } => sweep(common, plan, repetitions, jobs),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn build_plan(
    common: &Common,
    plan_file: Option<&Path>,
    repetitions: Option<u32>,
) -> Result<ExperimentPlan> {
    let mut plan = match plan_file {
        Some(path) => {
            if !common.scenario.is_empty() {
                bail!("--scenario cannot be combined with --plan");
            }
            parse_config(path)?
        }
        None => {
            if common.scenario.is_empty() {
                bail!("scenarios: give --scenario or --plan");
            }
            let scenarios = common
                .scenario
                .iter()
                .map(|p| {
                    Ok(Scenario {
                        id: scenario_id(p),
                        config: load_scenario(p)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            ExperimentPlan {
                out_dir: DEFAULT_OUT_DIR.into(),
                slots: DEFAULT_SLOTS,
                repetitions: 1,
                seed: 0,
                gamma: 0.9,
                beta: 0.5,
                policies: vec![
                    PolicyKind::Random,
                    PolicyKind::Improvident,
                    PolicyKind::Qlearning,
                    PolicyKind::Dqn,
                    PolicyKind::Genie,
                ],
                hyper: HyperConfig::default(),
                scenarios,
            }
        }
    };
    if let Some(h) = &common.hyper {
        plan.hyper = HyperConfig::load(h)?;
    }
    if !common.policy.is_empty() {
        plan.policies = common.policy.clone();
    }
    if let Some(s) = common.slots {
        plan.slots = s;
    }
    if let Some(s) = common.seed {
        plan.seed = s;
    }
    if let Some(o) = &common.out {
        plan.out_dir = o.clone();
    }
    if let Some(r) = repetitions {
        plan.repetitions = r;
    }
    plan.validate()?;
    Ok(plan)
}

fn finish(
    plan: &ExperimentPlan,
    records: &[RunRecord],
    format: Format,
) -> std::result::Result<bool, Failure> {
    let report = running(emit_report(records, format, &plan.out_dir))?;
    running(write_manifest(plan, records, &plan.out_dir))?;
    let failed: Vec<_> = records.iter().filter(|r| !r.ok()).collect();
    for r in &failed {
        eprintln!(
            "run {} {} r{} failed: {}",
            r.scenario_id,
            r.policy,
            r.repetition,
            r.error.as_deref().unwrap_or("")
        );
    }
    println!(
        "{} runs, {} failed; report at {}",
        records.len(),
        failed.len(),
        report.display()
    );
    Ok(failed.is_empty())
}

fn single_scenario(common: &Common) -> Result<()> {
    if common.scenario.len() != 1 {
        bail!("scenario: exactly one --scenario required");
    }
    Ok(())
}

fn train(mut common: Common) -> std::result::Result<bool, Failure> {
    config(single_scenario(&common))?;
    if common.policy.is_empty() {
        common.policy.push(PolicyKind::Dqn);
    }
    let plan = config(build_plan(&common, None, None))?;
    let &[kind] = plan.policies.as_slice() else {
        return Err(Failure::Config(anyhow::anyhow!(
            "policy: train takes one policy"
        )));
    };
    if !kind.learns() {
        return Err(Failure::Config(anyhow::anyhow!(
            "policy: {kind} has nothing to train"
        )));
    }
    let scenario = &plan.scenarios[0];
    let seeds = RunSeeds::new(plan.seed, &scenario.config, 0, kind);
    let probes = running(probe_states(&scenario.config, plan.seed, PROBE_STATES))?;
    let trained = running(train_policy(
        kind,
        &scenario.config,
        &plan.hyper,
        &seeds,
        probes,
    ))?;

    running(
        fs::create_dir_all(&plan.out_dir)
            .with_context(|| format!("cannot create {}", plan.out_dir.display())),
    )?;
    let path = plan.out_dir.join(format!(
        "{}_{}_r0.{}",
        scenario.id,
        kind,
        Trained::extension(kind)
    ));
    running(trained.save(&path))?;
    if let Trained::Dqn(agent) = &trained {
        running(write_telemetry(
            agent.telemetry(),
            &plan.out_dir.join("telemetry.csv"),
        ))?;
    }
    let record = RunRecord {
        scenario_id: scenario.id.clone(),
        policy: kind,
        repetition: 0,
        seeds,
        status: RunStatus::Ok,
        error: None,
        metrics: None,
        checkpoint: Some(path.clone()),
        train_seconds: 0.0,
    };
    running(write_manifest(&plan, &[record], &plan.out_dir))?;
    println!("checkpoint at {}", path.display());
    Ok(true)
}

fn write_telemetry(t: &Telemetry, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    );
    writeln!(out, "update,loss,max_q,avg_probe_max_q")?;
    for i in 0..t.loss.len() {
        let probe = if t.probe_max_q.is_empty() {
            String::new()
        } else {
            let sum: f64 = t.probe_max_q.iter().map(|trace| trace[i]).sum();
            format!("{}", sum / t.probe_max_q.len() as f64)
        };
        writeln!(out, "{},{},{},{}", i + 1, t.loss[i], t.max_q[i], probe)?;
    }
    out.flush()?;
    Ok(())
}

fn eval(common: Common, checkpoint: Option<PathBuf>) -> std::result::Result<bool, Failure> {
    config(single_scenario(&common))?;
    let plan = config(build_plan(&common, None, None))?;
    if checkpoint.is_some() {
        match plan.policies.as_slice() {
            [p] if p.learns() => {}
            _ => {
                return Err(Failure::Config(anyhow::anyhow!(
                    "checkpoint: needs exactly one learning --policy"
                )))
            }
        }
    }
    let records: Vec<_> = plan
        .policies
        .iter()
        .map(|&policy| {
            run_one(
                &plan,
                RunSpec {
                    scenario: 0,
                    policy,
                    repetition: 0,
                },
                Some(&plan.out_dir),
                checkpoint.as_deref(),
            )
        })
        .collect();
    finish(&plan, &records, common.format)
}

fn sweep(
    common: Common,
    plan_file: Option<PathBuf>,
    repetitions: Option<u32>,
    jobs: usize,
) -> std::result::Result<bool, Failure> {
    let plan = config(build_plan(&common, plan_file.as_deref(), repetitions))?;
    let checkpoints = plan.out_dir.join("checkpoints");
    let records = running(run_experiment(&plan, jobs, Some(&checkpoints)))?;
    finish(&plan, &records, common.format)
}
