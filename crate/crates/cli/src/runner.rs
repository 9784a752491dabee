//! Runs every scenario x policy x repetition of a plan.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use dsa_core::eval::{avg_max_q, run_evaluation};
use dsa_core::{
    AgentState, DqnAgent, Environment, GeniePolicy, IdlePolicy, ImprovidentPolicy, MetricsReport,
    NetworkParams, Policy, QLearningAgent, QTable, RandomPolicy, ScenarioConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::plan::{ExperimentPlan, HyperConfig, PolicyKind};

/// Number of fixed initial states whose max-Q is traced during DQN training.
pub const PROBE_STATES: usize = 10;

const PURPOSE_EVAL: u64 = 1;
const PURPOSE_TRAIN_ENV: u64 = 2;
const PURPOSE_AGENT: u64 = 3;
const PURPOSE_PROBE: u64 = 4;

/// Hashes a tuple of integers into a seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of the scenario's canonical TOML form.
pub fn scenario_hash(config: &ScenarioConfig) -> String {
    hex(&Sha256::digest(config.to_toml_string().as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RunSeeds {
    /// Shared by every policy of one scenario and repetition.
    pub eval_env: u64,
    pub train_env: u64,
    pub agent: u64,
}

impl RunSeeds {
    pub fn new(
        plan_seed: u64,
        config: &ScenarioConfig,
        repetition: u32,
        policy: PolicyKind,
    ) -> Self {
        let base = [plan_seed, config.env_seed, repetition as u64];
        let with =
            |purpose: u64, extra: u64| derive_seed(&[base[0], base[1], base[2], purpose, extra]);
        RunSeeds {
            eval_env: with(PURPOSE_EVAL, 0),
            train_env: with(PURPOSE_TRAIN_ENV, 0),
            agent: with(PURPOSE_AGENT, policy.index()),
        }
    }
}

/// Builds the scenario's environment with the trajectory seed replaced.
pub fn environment(config: &ScenarioConfig, env_seed: u64) -> Result<Environment> {
    let config = ScenarioConfig {
        env_seed,
        ..config.clone()
    };
    Ok(Environment::build(&config)?)
}

/// Agent states seen at the start of `count` independent trajectories.
pub fn probe_states(
    config: &ScenarioConfig,
    plan_seed: u64,
    count: usize,
) -> Result<Vec<AgentState>> {
    (0..count as u64)
        .map(|k| {
            let env = environment(
                config,
                derive_seed(&[plan_seed, config.env_seed, PURPOSE_PROBE, k]),
            )?;
            Ok(AgentState::initial(&env))
        })
        .collect()
}

pub enum Trained {
    Dqn(Box<DqnAgent>),
    QLearning(QLearningAgent),
}

impl Trained {
    pub fn policy(&mut self) -> &mut dyn Policy {
        match self {
            Trained::Dqn(a) => a.as_mut(),
            Trained::QLearning(a) => a,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let out = BufWriter::new(
            File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
        );
        match self {
            Trained::Dqn(a) => a.qnet().write_checkpoint(out)?,
            Trained::QLearning(a) => a.table().write_text(out)?,
        }
        Ok(())
    }

    pub fn load(
        kind: PolicyKind,
        path: &Path,
        env: &Environment,
        hyper: &HyperConfig,
    ) -> Result<Self> {
        let input = BufReader::new(
            File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
        );
        match kind {
            PolicyKind::Dqn => {
                let params = NetworkParams::read_checkpoint(input)?;
                if params.output_dim() != env.n_actions() {
                    return Err(anyhow!(
                        "checkpoint has {} outputs but the scenario has {} actions",
                        params.output_dim(),
                        env.n_actions()
                    ));
                }
                Ok(Trained::Dqn(Box::new(DqnAgent::from_params(
                    params,
                    hyper.dqn.clone(),
                ))))
            }
            PolicyKind::Qlearning => Ok(Trained::QLearning(QLearningAgent::from_table(
                QTable::read_text(input, env.n_actions())?,
            ))),
            other => Err(anyhow!("policy {other} has no checkpoint")),
        }
    }

    pub fn extension(kind: PolicyKind) -> &'static str {
        match kind {
            PolicyKind::Qlearning => "qtable",
            _ => "net",
        }
    }
}

/// Trains a learning policy on its own copy of the scenario.
pub fn train_policy(
    kind: PolicyKind,
    config: &ScenarioConfig,
    hyper: &HyperConfig,
    seeds: &RunSeeds,
    probes: Vec<AgentState>,
) -> Result<Trained> {
    let mut env = environment(config, seeds.train_env)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.agent);
    match kind {
        PolicyKind::Dqn => {
            let mut agent = DqnAgent::new(&env, &hyper.dqn, &mut rng)?;
            agent.set_probes(probes)?;
            let x0 = AgentState::initial(&env);
            agent.train_session(&mut env, x0, &mut rng, None)?;
            Ok(Trained::Dqn(Box::new(agent)))
        }
        PolicyKind::Qlearning => Ok(Trained::QLearning(QLearningAgent::train(
            &mut env,
            &hyper.qlearning,
            &mut rng,
        )?)),
        other => Err(anyhow!("policy {other} does not learn")),
    }
}

/// Outcome of one scenario x policy x repetition.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub scenario_id: String,
    pub policy: PolicyKind,
    pub repetition: u32,
    pub seeds: RunSeeds,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

impl RunRecord {
    pub fn ok(&self) -> bool {
        self.status == RunStatus::Ok
    }
}

/// One unit of work.
#[derive(Debug, Clone, Copy)]
pub struct RunSpec {
    pub scenario: usize,
    pub policy: PolicyKind,
    pub repetition: u32,
}

pub fn run_specs(plan: &ExperimentPlan) -> Vec<RunSpec> {
    let mut specs = Vec::new();
    for scenario in 0..plan.scenarios.len() {
        for repetition in 0..plan.repetitions {
            for &policy in &plan.policies {
                specs.push(RunSpec {
                    scenario,
                    policy,
                    repetition,
                });
            }
        }
    }
    specs
}

/// The non-learning policies; `None` for the ones that must be trained.
pub fn baseline_policy(
    kind: PolicyKind,
    env: &Environment,
    seeds: &RunSeeds,
) -> Result<Option<Box<dyn Policy>>> {
    Ok(match kind {
        PolicyKind::Random => Some(Box::new(RandomPolicy::new(ChaCha8Rng::seed_from_u64(
            seeds.agent,
        )))),
        PolicyKind::Improvident => Some(Box::new(ImprovidentPolicy::new(env)?)),
        PolicyKind::Genie => Some(Box::new(GeniePolicy)),
        PolicyKind::Idle => Some(Box::new(IdlePolicy)),
        PolicyKind::Qlearning | PolicyKind::Dqn => None,
    })
}

struct Evaluated {
    metrics: MetricsReport,
    train_seconds: f64,
    checkpoint: Option<PathBuf>,
}

fn execute(
    plan: &ExperimentPlan,
    spec: RunSpec,
    seeds: &RunSeeds,
    checkpoint_dir: Option<&Path>,
    preloaded: Option<&Path>,
) -> Result<Evaluated> {
    let scenario = &plan.scenarios[spec.scenario];
    let mut env = environment(&scenario.config, seeds.eval_env)?;
    let started = Instant::now();
    let mut baseline = baseline_policy(spec.policy, &env, seeds)?;
    let mut trained = match (&baseline, preloaded) {
        (Some(_), _) => None,
        (None, Some(path)) => Some(Trained::load(spec.policy, path, &env, &plan.hyper)?),
        (None, None) => {
            let probes = probe_states(&scenario.config, plan.seed, PROBE_STATES)?;
            Some(train_policy(
                spec.policy,
                &scenario.config,
                &plan.hyper,
                seeds,
                probes,
            )?)
        }
    };
    let train_seconds = started.elapsed().as_secs_f64();
    let policy: &mut dyn Policy = match (baseline.as_deref_mut(), trained.as_mut()) {
        (Some(p), _) => p,
        (None, Some(t)) => t.policy(),
        (None, None) => unreachable!("every policy is either fixed or trained"),
    };
    let mut metrics = run_evaluation(policy, &mut env, plan.slots, plan.gamma, plan.beta)?;

    let mut checkpoint = None;
    if let Some(t) = &trained {
        if let Trained::Dqn(agent) = t {
            let traces = &agent.telemetry().probe_max_q;
            if !traces.is_empty() && !traces[0].is_empty() {
                metrics.avg_max_q_series = Some(avg_max_q(traces)?);
            }
        }
        if let (Some(dir), None) = (checkpoint_dir, preloaded) {
            let path = dir.join(format!(
                "{}_{}_r{}.{}",
                scenario.id,
                spec.policy,
                spec.repetition,
                Trained::extension(spec.policy)
            ));
            t.save(&path)?;
            checkpoint = Some(path);
        }
    }
    Ok(Evaluated {
        metrics,
        train_seconds,
        checkpoint,
    })
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "run panicked".into())
}

/// Runs one spec, turning errors and panics into a failed record.
pub fn run_one(
    plan: &ExperimentPlan,
    spec: RunSpec,
    checkpoint_dir: Option<&Path>,
    preloaded: Option<&Path>,
) -> RunRecord {
    let scenario = &plan.scenarios[spec.scenario];
    let seeds = RunSeeds::new(plan.seed, &scenario.config, spec.repetition, spec.policy);
    let outcome = panic::catch_unwind(AssertUnwindSafe(|| {
        execute(plan, spec, &seeds, checkpoint_dir, preloaded)
    }))
    .unwrap_or_else(|payload| Err(anyhow!(panic_message(payload))));
    let mut record = RunRecord {
        scenario_id: scenario.id.clone(),
        policy: spec.policy,
        repetition: spec.repetition,
        seeds,
        status: RunStatus::Ok,
        error: None,
        metrics: None,
        checkpoint: None,
        train_seconds: 0.0,
    };
    match outcome {
        Ok(done) => {
            record.metrics = Some(done.metrics);
            record.checkpoint = done.checkpoint;
            record.train_seconds = done.train_seconds;
        }
        Err(e) => {
            record.status = RunStatus::Failed;
            record.error = Some(format!("{e:#}"));
        }
    }
    record
}

/// Runs the whole plan on up to `jobs` threads. Records come back in plan
/// order whatever the thread count.
pub fn run_experiment(
    plan: &ExperimentPlan,
    jobs: usize,
    checkpoint_dir: Option<&Path>,
) -> Result<Vec<RunRecord>> {
    if let Some(dir) = checkpoint_dir {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let specs = run_specs(plan);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()?;
    Ok(pool.install(|| {
        specs
            .par_iter()
            .map(|&spec| run_one(plan, spec, checkpoint_dir, None))
            .collect()
    }))
}
