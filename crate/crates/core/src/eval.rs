//! Slot classification and the evaluation metrics.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::policy::{AgentState, DecisionContext, Policy};

/// Outcome class of one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Situation {
    /// Idle while no segment could have carried the transmission.
    RightIdle,
    /// Idle although some segment would have worked.
    Conservative,
    Success,
    /// Failed transmission, i.e. interference with the primary users.
    Failure,
}

pub fn classify_step(action: usize, feedback: Option<bool>, feasible: bool) -> Situation {
    match (action, feedback) {
        (0, _) if feasible => Situation::Conservative,
        (0, _) => Situation::RightIdle,
        (_, Some(true)) => Situation::Success,
        (_, _) => Situation::Failure,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SituationCounts {
    pub right_idle: u64,
    pub conservative: u64,
    pub success: u64,
    pub failure: u64,
}

impl SituationCounts {
    pub fn record(&mut self, s: Situation) {
        match s {
            Situation::RightIdle => self.right_idle += 1,
            Situation::Conservative => self.conservative += 1,
            Situation::Success => self.success += 1,
            Situation::Failure => self.failure += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.right_idle + self.conservative + self.success + self.failure
    }

    /// Slots where the decision was right: a success or a justified idle.
    pub fn correct(&self) -> u64 {
        self.right_idle + self.success
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub slots: u64,
    pub counts: SituationCounts,
    pub decision_accuracy: f64,
    pub modified_decision_accuracy: f64,
    pub beta: f64,
    pub interference: f64,
    pub discounted_return: f64,
    pub gamma: f64,
    pub total_reward: f64,
    /// Per-update average max-Q from training, when the policy learned one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_max_q_series: Option<Vec<f64>>,
    /// Mean decision latency in seconds.
    pub wall_clock_per_decision: f64,
}

impl MetricsReport {
    pub fn from_counts(
        counts: SituationCounts,
        beta: f64,
        discounted_return: f64,
        gamma: f64,
        total_reward: f64,
        wall_clock_per_decision: f64,
    ) -> Result<Self> {
        let slots = counts.total();
        if slots == 0 {
            return Err(Error::InvalidArgument("no slots recorded".into()));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidArgument(format!(
                "beta {beta} outside [0, 1]"
            )));
        }
        let n = slots as f64;
        Ok(MetricsReport {
            slots,
            counts,
            decision_accuracy: counts.correct() as f64 / n,
            modified_decision_accuracy: (counts.correct() as f64
                + beta * counts.conservative as f64)
                / n,
            beta,
            interference: counts.failure as f64 / n,
            discounted_return,
            gamma,
            total_reward,
            avg_max_q_series: None,
            wall_clock_per_decision,
        })
    }
}

/// Runs `policy` for `slots` slots on `env`.
///
/// Each slot the environment moves to its next state, the policy picks an
/// action from the previous slot's agent state, and the action is executed in
/// the new state. The return is discounted from the first slot.
pub fn run_evaluation(
    policy: &mut dyn Policy,
    env: &mut Environment,
    slots: u64,
    gamma: f64,
    beta: f64,
) -> Result<MetricsReport> {
    run_evaluation_traced(policy, env, slots, gamma, beta, |_, _| {})
}

/// [`run_evaluation`] that also reports each slot's reward and situation.
pub fn run_evaluation_traced(
    policy: &mut dyn Policy,
    env: &mut Environment,
    slots: u64,
    gamma: f64,
    beta: f64,
    mut trace: impl FnMut(f64, Situation),
) -> Result<MetricsReport> {
    if slots == 0 {
        return Err(Error::InvalidArgument("slots must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!(
            "gamma {gamma} outside [0, 1]"
        )));
    }
    let mut counts = SituationCounts::default();
    let mut agent = AgentState::initial(env);
    let mut discounted = 0.0;
    let mut discount = 1.0;
    let mut total = 0.0;
    let mut thinking = Duration::ZERO;
    for _ in 0..slots {
        let current = env.state();
        let next = env.advance();
        let started = Instant::now();
        let action = policy.act(&DecisionContext {
            env,
            agent: &agent,
            current: &current,
            next: &next,
        })?;
        thinking += started.elapsed();
        let outcome = env.execute(&next, action)?;
        let situation = classify_step(action, outcome.feedback, env.feasible(&next));
        counts.record(situation);
        trace(outcome.reward, situation);
        discounted += discount * outcome.reward;
        discount *= gamma;
        total += outcome.reward;
        agent = AgentState::new(action, outcome.observation);
    }
    MetricsReport::from_counts(
        counts,
        beta,
        discounted,
        gamma,
        total,
        thinking.as_secs_f64() / slots as f64,
    )
}

/// Pointwise mean of per-update max-Q traces from several runs.
pub fn avg_max_q(runs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = runs.first() else {
        return Err(Error::InvalidArgument("no runs".into()));
    };
    if let Some(bad) = runs.iter().find(|r| r.len() != first.len()) {
        return Err(Error::DimensionMismatch {
            what: "max-Q traces",
            expected: first.len(),
            got: bad.len(),
        });
    }
    let n = runs.len() as f64;
    Ok((0..first.len())
        .map(|i| runs.iter().map(|r| r[i]).sum::<f64>() / n)
        .collect())
}

/// Trailing moving average; entry `i` averages `series[i+1-window..=i]`,
/// with shorter windows at the start.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (i, &v) in series.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= series[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}
