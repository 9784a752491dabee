//! Deep Q-network agent: state encoding, epsilon-greedy selection, replay,
//! target network, the training loop and the ACK-driven retraining monitor.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::neural::{adam_step, init_network_with_depth, NetworkParams, OptState};
use crate::policy::{linear_epsilon, AgentState, DecisionContext, Policy};
use crate::qtable::argmax;
use crate::replay::{ReplayMemory, Transition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub memory_size: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub epsilon_start: f64,
    /// Updates over which epsilon falls linearly to 0.
    pub epsilon_decay_steps: usize,
    /// Updates between target-network copies.
    pub target_sync_freq: usize,
    /// Updates per training session.
    pub max_train_iters: usize,
    /// Transitions collected before the first update.
    pub warmup_size: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl Hyperparams {
    /// Full-size settings: 300k replay memory, batches of 32, target copies
    /// every 200 updates, training after a 1000-transition warm-up.
    pub fn full() -> Self {
        Hyperparams {
            memory_size: 300_000,
            batch_size: 32,
            gamma: 0.9,
            learning_rate: 3e-4,
            epsilon_start: 0.9,
            epsilon_decay_steps: 10_000,
            target_sync_freq: 200,
            max_train_iters: 50_000,
            warmup_size: 1_000,
            hidden_width: 50,
            hidden_layers: 3,
        }
    }

    /// Same learning setup with a smaller replay memory.
    pub fn desk() -> Self {
        Hyperparams {
            memory_size: 50_000,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.batch_size > self.warmup_size {
            return Err(Error::config(
                "batch_size",
                format!(
                    "{} exceeds warmup_size {}",
                    self.batch_size, self.warmup_size
                ),
            ));
        }
        if self.warmup_size > self.memory_size {
            return Err(Error::config(
                "warmup_size",
                format!(
                    "{} exceeds memory_size {}",
                    self.warmup_size, self.memory_size
                ),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("gamma", "must lie in (0, 1)"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) {
            return Err(Error::config("epsilon_start", "must lie in [0, 1]"));
        }
        if self.target_sync_freq == 0 {
            return Err(Error::config("target_sync_freq", "must be at least 1"));
        }
        if self.hidden_width == 0 {
            return Err(Error::config("hidden_width", "must be positive"));
        }
        Ok(())
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self::desk()
    }
}

/// Input width for `n_actions` actions and segment length `segment_len`.
pub fn input_dim(n_actions: usize, segment_len: usize) -> usize {
    n_actions + segment_len
}

/// One-hot action (element `action` of the first `n_actions`) followed by
/// the observed bits.
pub fn encode_state(action: usize, observation: &BitString, n_actions: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n_actions + observation.len()];
    encode_into(&AgentState::new(action, *observation), n_actions, &mut out)?;
    Ok(out)
}

fn encode_into(x: &AgentState, n_actions: usize, out: &mut [f64]) -> Result<()> {
    if x.last_action >= n_actions {
        return Err(Error::InvalidAction {
            action: x.last_action,
            max: n_actions - 1,
        });
    }
    if out.len() != n_actions + x.observation.len() {
        return Err(Error::DimensionMismatch {
            what: "encoded state",
            expected: out.len(),
            got: n_actions + x.observation.len(),
        });
    }
    out.fill(0.0);
    out[x.last_action] = 1.0;
    for (slot, bit) in out[n_actions..].iter_mut().zip(x.observation.iter()) {
        *slot = bit as f64;
    }
    Ok(())
}

/// Inverse of [`encode_state`].
pub fn decode_state(encoded: &[f64], n_actions: usize) -> Result<AgentState> {
    if encoded.len() < n_actions {
        return Err(Error::DimensionMismatch {
            what: "encoded state",
            expected: n_actions,
            got: encoded.len(),
        });
    }
    let (hot, obs) = encoded.split_at(n_actions);
    let ones: Vec<usize> = (0..n_actions).filter(|&i| hot[i] == 1.0).collect();
    if ones.len() != 1 || hot.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument("action part is not one-hot".into()));
    }
    let bits = obs
        .iter()
        .map(|&v| match v {
            0.0 => Ok(0),
            1.0 => Ok(1),
            _ => Err(Error::InvalidArgument(format!("observation entry {v}"))),
        })
        .collect::<Result<Vec<u8>>>()?;
    Ok(AgentState::new(ones[0], BitString::from_bits(&bits)?))
}

/// Exploration rate after `iter` updates.
pub fn epsilon_at(iter: usize, hyper: &Hyperparams) -> f64 {
    linear_epsilon(hyper.epsilon_start, hyper.epsilon_decay_steps, iter)
}

fn choose<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}

/// Epsilon-greedy over the network's action values for encoded state `x`.
pub fn select_action<R: Rng + ?Sized>(
    qnet: &NetworkParams,
    x: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} outside [0, 1]"
        )));
    }
    Ok(choose(&qnet.forward(x)?, epsilon, rng))
}

/// `y_j = r_j + gamma * max_a Q_target(x'_j, a)`.
pub fn compute_targets(
    target: &NetworkParams,
    batch: &[&Transition],
    gamma: f64,
) -> Result<Vec<f64>> {
    let n_actions = target.output_dim();
    let mut buf = vec![0.0; target.input_dim()];
    batch
        .iter()
        .map(|t| {
            encode_into(&t.next_state, n_actions, &mut buf)?;
            let best = target
                .forward(&buf)?
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(t.reward + gamma * best)
        })
        .collect()
}

/// Copies the live network into the target network.
pub fn sync_target(qnet: &NetworkParams, target: &mut NetworkParams) {
    target.copy_from(qnet);
}

/// Record emitted after every update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    /// Update index within the current session, from 1.
    pub update: usize,
    pub loss: f64,
    /// `max_a Q(x_t, a)` of the state the agent acted from.
    pub max_q: f64,
    pub epsilon: f64,
    pub synced: bool,
}

/// Per-update traces across every training session of an agent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Telemetry {
    pub loss: Vec<f64>,
    pub max_q: Vec<f64>,
    pub updates: usize,
    pub syncs: usize,
    /// Environment slots consumed by training.
    pub slots: usize,
    pub sessions: usize,
    /// Per probe state, `max_a Q(probe, a)` after every update.
    pub probe_max_q: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    hyper: Hyperparams,
    qnet: NetworkParams,
    target: NetworkParams,
    opt: OptState,
    memory: ReplayMemory,
    telemetry: Telemetry,
    probes: Vec<AgentState>,
}

impl DqnAgent {
    /// Fresh agent sized for `env`; the target network starts as a copy.
    pub fn new<R: Rng + ?Sized>(
        env: &Environment,
        hyper: &Hyperparams,
        rng: &mut R,
    ) -> Result<Self> {
        hyper.validate()?;
        let qnet = init_network_with_depth(
            input_dim(env.n_actions(), env.segment_len()),
            hyper.hidden_width,
            hyper.hidden_layers,
            env.n_actions(),
            rng,
        )?;
        Ok(Self::from_params(qnet, hyper.clone()))
    }

    /// Wraps existing parameters, e.g. a loaded checkpoint.
    pub fn from_params(qnet: NetworkParams, hyper: Hyperparams) -> Self {
        DqnAgent {
            target: qnet.clone(),
            opt: OptState::new(&qnet),
            memory: ReplayMemory::new(hyper.memory_size.max(1)),
            qnet,
            hyper,
            telemetry: Telemetry::default(),
            probes: Vec::new(),
        }
    }

    /// Fixed states whose greedy value is recorded after every update.
    pub fn set_probes(&mut self, probes: Vec<AgentState>) -> Result<()> {
        for p in &probes {
            self.encode(p)?;
        }
        self.telemetry.probe_max_q = vec![Vec::new(); probes.len()];
        self.probes = probes;
        Ok(())
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn qnet(&self) -> &NetworkParams {
        &self.qnet
    }

    pub fn target(&self) -> &NetworkParams {
        &self.target
    }

    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }

    pub fn telemetry(&self) -> &Telemetry {
        &self.telemetry
    }

    pub fn n_actions(&self) -> usize {
        self.qnet.output_dim()
    }

    pub fn encode(&self, x: &AgentState) -> Result<Vec<f64>> {
        let mut buf = vec![0.0; self.qnet.input_dim()];
        encode_into(x, self.n_actions(), &mut buf)?;
        Ok(buf)
    }

    pub fn q_values(&self, x: &AgentState) -> Result<Vec<f64>> {
        self.qnet.forward(&self.encode(x)?)
    }

    pub fn greedy_action(&self, x: &AgentState) -> Result<usize> {
        Ok(argmax(&self.q_values(x)?))
    }

    pub fn sync_target(&mut self) {
        sync_target(&self.qnet, &mut self.target);
        self.telemetry.syncs += 1;
    }

    /// One minibatch update. Returns the loss.
    fn update<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<f64> {
        let batch = self.memory.sample(self.hyper.batch_size, rng);
        let targets = compute_targets(&self.target, &batch, self.hyper.gamma)?;
        let n_actions = self.n_actions();
        let inputs = batch
            .iter()
            .map(|t| {
                let mut buf = vec![0.0; self.qnet.input_dim()];
                encode_into(&t.state, n_actions, &mut buf)?;
                Ok(buf)
            })
            .collect::<Result<Vec<_>>>()?;
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let (loss, grads) = self.qnet.loss_and_gradients(&inputs, &actions, &targets)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                update: self.telemetry.updates + 1,
                loss,
            });
        }
        adam_step(
            &mut self.qnet,
            &grads,
            &mut self.opt,
            self.hyper.learning_rate,
        )?;
        Ok(loss)
    }

    /// Runs one training session from agent state `x`: act epsilon-greedily,
    /// store transitions, and once the memory holds `warmup_size` entries
    /// perform one update per slot until `max_train_iters` updates are done.
    /// Returns the agent state reached.
    pub fn train_session<R: Rng + ?Sized>(
        &mut self,
        env: &mut Environment,
        mut x: AgentState,
        rng: &mut R,
        mut observer: Option<&mut dyn FnMut(&IterationRecord)>,
    ) -> Result<AgentState> {
        let n_actions = self.n_actions();
        if n_actions != env.n_actions()
            || self.qnet.input_dim() != input_dim(n_actions, env.segment_len())
        {
            return Err(Error::DimensionMismatch {
                what: "network vs environment",
                expected: input_dim(env.n_actions(), env.segment_len()),
                got: self.qnet.input_dim(),
            });
        }
        self.telemetry.sessions += 1;
        let mut updates = 0;
        while updates < self.hyper.max_train_iters {
            let epsilon = epsilon_at(updates, &self.hyper);
            let q = self.q_values(&x)?;
            let max_q = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let action = choose(&q, epsilon, rng);
            let outcome = env.step(action)?;
            self.telemetry.slots += 1;
            let x_next = AgentState::new(action, outcome.observation);
            self.memory.push(Transition {
                state: x,
                action,
                reward: outcome.reward,
                next_state: x_next,
            });
            x = x_next;
            if self.memory.len() < self.hyper.warmup_size {
                continue;
            }
            let loss = self.update(rng)?;
            updates += 1;
            self.telemetry.updates += 1;
            self.telemetry.loss.push(loss);
            self.telemetry.max_q.push(max_q);
            let probe_values = self
                .probes
                .iter()
                .map(|p| {
                    Ok(self
                        .q_values(p)?
                        .into_iter()
                        .fold(f64::NEG_INFINITY, f64::max))
                })
                .collect::<Result<Vec<f64>>>()?;
            for (trace, v) in self.telemetry.probe_max_q.iter_mut().zip(probe_values) {
                trace.push(v);
            }
            let synced = updates % self.hyper.target_sync_freq == 0;
            if synced {
                self.sync_target();
            }
            if let Some(obs) = observer.as_mut() {
                obs(&IterationRecord {
                    update: updates,
                    loss,
                    max_q,
                    epsilon,
                    synced,
                });
            }
        }
        Ok(x)
    }

    /// Clears the replay memory and trains a new session.
    pub fn retrain<R: Rng + ?Sized>(
        &mut self,
        env: &mut Environment,
        x: AgentState,
        rng: &mut R,
    ) -> Result<AgentState> {
        self.memory.clear();
        self.train_session(env, x, rng, None)
    }
}

impl Policy for DqnAgent {
    fn name(&self) -> &str {
        "dqn"
    }

    fn act(&mut self, ctx: &DecisionContext<'_>) -> Result<usize> {
        self.greedy_action(ctx.agent)
    }
}

/// Builds and trains an agent on `env`, starting from the idle observation
/// of its current state.
pub fn train<R: Rng + ?Sized>(
    env: &mut Environment,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<DqnAgent> {
    let mut agent = DqnAgent::new(env, hyper, rng)?;
    let x0 = AgentState::initial(env);
    agent.train_session(env, x0, rng, None)?;
    Ok(agent)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorConfig {
    pub window_len: usize,
    /// Retrain when the reward summed over a full window falls below this.
    pub threshold: f64,
    /// Greedy slots to run; training slots are not counted.
    pub total_slots: usize,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            window_len: 500,
            threshold: 0.0,
            total_slots: 10_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MonitorReport {
    /// Reward of every greedy slot.
    pub rewards: Vec<f64>,
    /// Greedy-slot indices after which a retrain ran.
    pub retrain_after: Vec<usize>,
    /// Environment slot at which each retrain started.
    pub retrain_env_slot: Vec<u64>,
}

/// Acts greedily and retrains whenever the windowed reward drops below the
/// threshold. The window restarts after each retrain.
pub fn monitor_retrain<R: Rng + ?Sized>(
    agent: &mut DqnAgent,
    env: &mut Environment,
    config: &MonitorConfig,
    rng: &mut R,
) -> Result<MonitorReport> {
    if config.window_len == 0 {
        return Err(Error::InvalidArgument(
            "window_len must be at least 1".into(),
        ));
    }
    let mut report = MonitorReport::default();
    let mut window: VecDeque<f64> = VecDeque::with_capacity(config.window_len);
    let mut x = AgentState::initial(env);
    for slot in 0..config.total_slots {
        let action = agent.greedy_action(&x)?;
        let outcome = env.step(action)?;
        report.rewards.push(outcome.reward);
        x = AgentState::new(action, outcome.observation);
        if window.len() == config.window_len {
            window.pop_front();
        }
        window.push_back(outcome.reward);
        if window.len() == config.window_len && window.iter().sum::<f64>() < config.threshold {
            report.retrain_after.push(slot);
            report.retrain_env_slot.push(env.slot());
            x = agent.retrain(env, x, rng)?;
            window.clear();
        }
    }
    Ok(report)
}
