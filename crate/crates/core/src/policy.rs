//! Decision rules: the random baseline, the one-step lookahead policy with
//! oracle knowledge, the genie bound, and tabular Q-learning.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, Observation, SystemState};
use crate::error::{Error, Result};
use crate::oracle::{self, ENUMERATION_LIMIT};
use crate::qtable::{argmax_within, QTable, TableKey};

/// What the agent knows at decision time: its last action and what it sensed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AgentState {
    pub last_action: usize,
    pub observation: Observation,
}

impl AgentState {
    pub fn new(last_action: usize, observation: Observation) -> Self {
        AgentState {
            last_action,
            observation,
        }
    }

    /// The state before any decision: idle, sensing segment 1 of the current
    /// joint state.
    pub fn initial(env: &Environment) -> Self {
        let obs = env
            .observe(&env.state(), 1)
            .expect("segment 1 always exists");
        AgentState::new(0, obs)
    }
}

impl TableKey for AgentState {
    fn to_token(&self) -> String {
        format!("{}:{}", self.last_action, self.observation)
    }

    fn from_token(token: &str) -> Result<Self> {
        let (action, obs) = token
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("bad agent-state token {token:?}")))?;
        let last_action = action
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad action in {token:?}")))?;
        Ok(AgentState::new(last_action, obs.parse()?))
    }
}

/// Inputs to one decision.
///
/// `current` and `next` are oracle views of the true joint state before and
/// after the slot transition; only the oracle policies read them.
pub struct DecisionContext<'a> {
    pub env: &'a Environment,
    pub agent: &'a AgentState,
    pub current: &'a SystemState,
    pub next: &'a SystemState,
}

pub trait Policy {
    fn name(&self) -> &str;
    fn act(&mut self, ctx: &DecisionContext<'_>) -> Result<usize>;
}

/// Transmits on a uniformly chosen segment every slot; never idles.
pub struct RandomPolicy<R> {
    rng: R,
}

impl<R: Rng> RandomPolicy<R> {
    pub fn new(rng: R) -> Self {
        RandomPolicy { rng }
    }
}

pub fn random_action<R: Rng + ?Sized>(rng: &mut R, env: &Environment) -> usize {
    rng.random_range(1..=env.n_segments())
}

impl<R: Rng> Policy for RandomPolicy<R> {
    fn name(&self) -> &str {
        "random"
    }

    fn act(&mut self, ctx: &DecisionContext<'_>) -> Result<usize> {
        Ok(random_action(&mut self.rng, ctx.env))
    }
}

/// Always idle. Useful as a zero-reward reference.
pub struct IdlePolicy;

impl Policy for IdlePolicy {
    fn name(&self) -> &str {
        "idle"
    }

    fn act(&mut self, _ctx: &DecisionContext<'_>) -> Result<usize> {
        Ok(0)
    }
}

/// Picks the first segment that will satisfy the demand, peeking at the
/// realized next state.
pub struct GeniePolicy;

impl Policy for GeniePolicy {
    fn name(&self) -> &str {
        "genie"
    }

    fn act(&mut self, ctx: &DecisionContext<'_>) -> Result<usize> {
        Ok(oracle::genie_action(ctx.env, ctx.next))
    }
}

/// Expected rewards closer than this are treated as equal.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
struct SegmentPlan {
    /// Independent-channel slots that influence this segment.
    drivers: Vec<usize>,
    /// Per channel of the segment: position in `drivers` and inversion.
    channels: Vec<(usize, bool)>,
}

/// Maximizes the immediate expected reward given the true current state and
/// the transition matrix.
///
/// Each segment only depends on the independent channels feeding it, so the
/// success probability is computed by enumerating that subset instead of the
/// whole joint successor space.
#[derive(Debug, Clone)]
pub struct ImprovidentPolicy {
    n_channels: usize,
    demand: usize,
    segments: Vec<SegmentPlan>,
}

impl ImprovidentPolicy {
    pub fn new(env: &Environment) -> Result<Self> {
        let topo = env.topology();
        let c = env.segment_len();
        let segments = (0..env.n_segments())
            .map(|start| {
                let mut drivers: Vec<usize> =
                    (start..start + c).map(|ch| topo.driver(ch).0).collect();
                drivers.sort_unstable();
                drivers.dedup();
                if drivers.len() > ENUMERATION_LIMIT {
                    return Err(Error::EnumerationBound {
                        independents: drivers.len(),
                        limit: ENUMERATION_LIMIT,
                    });
                }
                let channels = (start..start + c)
                    .map(|ch| {
                        let (slot, invert) = topo.driver(ch);
                        let pos = drivers.binary_search(&slot).expect("driver listed");
                        (pos, invert)
                    })
                    .collect();
                Ok(SegmentPlan { drivers, channels })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ImprovidentPolicy {
            n_channels: env.n_channels(),
            demand: env.demand(),
            segments,
        })
    }

    /// Probability that each segment satisfies the demand in the next slot.
    pub fn success_probabilities(
        &self,
        env: &Environment,
        state: &SystemState,
    ) -> Result<Vec<f64>> {
        if state.len() != self.n_channels {
            return Err(Error::DimensionMismatch {
                what: "system state",
                expected: self.n_channels,
                got: state.len(),
            });
        }
        let m = env.matrix();
        let parents = env.topology().parents_of(state);
        Ok(self
            .segments
            .iter()
            .map(|seg| {
                let current: Vec<u8> = seg
                    .drivers
                    .iter()
                    .map(|&slot| ((parents >> slot) & 1) as u8)
                    .collect();
                let mut success = 0.0;
                for config in 0..1u64 << seg.drivers.len() {
                    let vacant = seg
                        .channels
                        .iter()
                        .filter(|&&(pos, invert)| ((config >> pos) & 1 == 1) == invert)
                        .count();
                    if vacant < self.demand {
                        continue;
                    }
                    success += current
                        .iter()
                        .enumerate()
                        .map(|(pos, &from)| m.prob(from, ((config >> pos) & 1) as u8))
                        .product::<f64>();
                }
                success
            })
            .collect())
    }

    /// Expected reward of every action, idle first.
    pub fn expected_rewards(&self, env: &Environment, state: &SystemState) -> Result<Vec<f64>> {
        let mut rewards = vec![0.0];
        rewards.extend(
            self.success_probabilities(env, state)?
                .into_iter()
                .map(|q| 4.0 * q - 2.0),
        );
        Ok(rewards)
    }

    /// Best action; rewards within rounding of each other count as tied.
    pub fn decide(&self, env: &Environment, state: &SystemState) -> Result<usize> {
        Ok(argmax_within(
            &self.expected_rewards(env, state)?,
            TIE_TOLERANCE,
        ))
    }
}

impl Policy for ImprovidentPolicy {
    fn name(&self) -> &str {
        "improvident"
    }

    fn act(&mut self, ctx: &DecisionContext<'_>) -> Result<usize> {
        self.decide(ctx.env, ctx.current)
    }
}

/// Greedy action of a table; unseen keys pick idle.
pub fn ql_select<K: TableKey>(table: &QTable<K>, x: &K) -> usize {
    table.best_action(x)
}

/// One Q-learning backup of `(x, action)` toward
/// `reward + gamma * max_a' q(x_next, a')`. Returns the new value.
pub fn ql_update<K: TableKey>(
    table: &mut QTable<K>,
    x: &K,
    action: usize,
    reward: f64,
    x_next: &K,
    alpha: f64,
    gamma: f64,
) -> f64 {
    let target = reward + gamma * table.max_value(x_next);
    let entry = &mut table.row_mut(x)[action];
    *entry += alpha * (target - *entry);
    *entry
}

/// Linear decay from `start` at step 0 to 0 at `decay_steps`.
pub fn linear_epsilon(start: f64, decay_steps: usize, step: usize) -> f64 {
    if decay_steps == 0 || step >= decay_steps {
        0.0
    } else {
        start * (1.0 - step as f64 / decay_steps as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QLearningConfig {
    /// Fixed learning rate.
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_decay_steps: usize,
    /// Interaction slots spent learning before the table is frozen.
    pub train_slots: usize,
}

impl Default for QLearningConfig {
    fn default() -> Self {
        QLearningConfig {
            alpha: 0.1,
            gamma: 0.9,
            epsilon_start: 0.9,
            epsilon_decay_steps: 10_000,
            train_slots: 50_000,
        }
    }
}

impl QLearningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config("qlearning.alpha", "must lie in (0, 1]"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("qlearning.gamma", "must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) {
            return Err(Error::config(
                "qlearning.epsilon_start",
                "must lie in [0, 1]",
            ));
        }
        Ok(())
    }
}

/// Tabular Q-learning over `(last action, observation)` keys.
#[derive(Debug, Clone)]
pub struct QLearningAgent {
    table: QTable<AgentState>,
}

impl QLearningAgent {
    pub fn from_table(table: QTable<AgentState>) -> Self {
        QLearningAgent { table }
    }

    pub fn table(&self) -> &QTable<AgentState> {
        &self.table
    }

    /// Learns online for `config.train_slots` slots with epsilon-greedy
    /// exploration over all actions.
    pub fn train<R: Rng + ?Sized>(
        env: &mut Environment,
        config: &QLearningConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let n_actions = env.n_actions();
        let mut table = QTable::new(n_actions);
        let mut x = AgentState::initial(env);
        for step in 0..config.train_slots {
            let eps = linear_epsilon(config.epsilon_start, config.epsilon_decay_steps, step);
            let action = if rng.random::<f64>() < eps {
                rng.random_range(0..n_actions)
            } else {
                ql_select(&table, &x)
            };
            let outcome = env.step(action)?;
            let x_next = AgentState::new(action, outcome.observation);
            ql_update(
                &mut table,
                &x,
                action,
                outcome.reward,
                &x_next,
                config.alpha,
                config.gamma,
            );
            x = x_next;
        }
        Ok(QLearningAgent { table })
    }
}

/// Tabular Q-learning fed the true joint state instead of the agent's view,
/// with step size `1 / (1 + visits(s, a))` and a constant exploration rate.
pub fn train_fully_observed<R: Rng + ?Sized>(
    env: &mut Environment,
    gamma: f64,
    epsilon: f64,
    steps: usize,
    rng: &mut R,
) -> Result<QTable<SystemState>> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma {gamma} outside (0, 1)"
        )));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} outside [0, 1]"
        )));
    }
    let n_actions = env.n_actions();
    let mut table = QTable::new(n_actions);
    let mut visits: QTable<SystemState> = QTable::new(n_actions);
    let mut s = env.state();
    for _ in 0..steps {
        let action = if rng.random::<f64>() < epsilon {
            rng.random_range(0..n_actions)
        } else {
            ql_select(&table, &s)
        };
        let outcome = env.step(action)?;
        let s_next = env.state();
        let n = &mut visits.row_mut(&s)[action];
        let alpha = 1.0 / (1.0 + *n);
        *n += 1.0;
        ql_update(
            &mut table,
            &s,
            action,
            outcome.reward,
            &s_next,
            alpha,
            gamma,
        );
        s = s_next;
    }
    Ok(table)
}

impl Policy for QLearningAgent {
    fn name(&self) -> &str {
        "qlearning"
    }

    fn act(&mut self, ctx: &DecisionContext<'_>) -> Result<usize> {
        Ok(ql_select(&self.table, ctx.agent))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BitString;
    use crate::env::{Correlation, Topology, TransitionMatrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state_key(bits: &[u8]) -> Result<SystemState> {
        BitString::from_bits(bits)
    }

    fn three_channel() -> Environment {
        let topo = Topology::new(3, &[0, 1], &[(2, 0, Correlation::Opposite)]).unwrap();
        let m = TransitionMatrix::new(0.8, 0.2, 0.8, 0.2).unwrap();
        Environment::new(2, 2, m, topo, 0).unwrap()
    }

    fn ctx_eval<P: Policy>(p: &mut P, env: &Environment, cur: &SystemState) -> usize {
        let agent = AgentState::initial(env);
        p.act(&DecisionContext {
            env,
            agent: &agent,
            current: cur,
            next: cur,
        })
        .unwrap()
    }

    #[test]
    fn improvident_matches_hand_values() {
        let env = three_channel();
        let p = ImprovidentPolicy::new(&env).unwrap();
        let s = env.state();
        let r = p.expected_rewards(&env, &s).unwrap();
        assert_eq!(r[0], 0.0);
        assert!((r[1] - 0.56).abs() < 1e-12);
        assert!((r[2] + 1.36).abs() < 1e-12);
        assert_eq!(p.decide(&env, &s).unwrap(), 1);
    }

    #[test]
    fn improvident_idles_when_all_negative() {
        let topo = Topology::new(3, &[0, 1, 2], &[]).unwrap();
        let env = Environment::new(2, 2, TransitionMatrix::identity(), topo, 0).unwrap();
        let mut p = ImprovidentPolicy::new(&env).unwrap();
        let busy = state_key(&[1, 0, 1]).unwrap();
        assert_eq!(ctx_eval(&mut p, &env, &busy), 0);
        let good = state_key(&[1, 0, 0]).unwrap();
        assert_eq!(ctx_eval(&mut p, &env, &good), 2);
        assert_eq!(env.execute(&good, 2).unwrap().reward, 2.0);
    }

    #[test]
    fn random_never_idles() {
        // N = C + 1 leaves two segments.
        let topo = Topology::new(4, &[0, 1, 2, 3], &[]).unwrap();
        let env = Environment::new(3, 1, TransitionMatrix::identity(), topo, 0).unwrap();
        let mut p = RandomPolicy::new(ChaCha8Rng::seed_from_u64(1));
        let s = env.state();
        let mut seen = [0usize; 3];
        for _ in 0..1000 {
            seen[ctx_eval(&mut p, &env, &s)] += 1;
        }
        assert_eq!(seen[0], 0);
        assert!(seen[1] > 0 && seen[2] > 0);
    }

    #[test]
    fn select_examples() {
        let mut t: QTable<AgentState> = QTable::new(4);
        let x = AgentState::new(0, BitString::zeros(2));
        assert_eq!(ql_select(&t, &x), 0);
        t.row_mut(&x).copy_from_slice(&[0.0, 1.5, -1.0, 0.3]);
        assert_eq!(ql_select(&t, &x), 1);
    }

    #[test]
    fn update_examples() {
        let x = AgentState::new(0, BitString::zeros(2));
        let y = AgentState::new(1, BitString::ones(2));
        let mut t: QTable<AgentState> = QTable::new(3);
        assert!((ql_update(&mut t, &x, 1, 2.0, &y, 0.1, 0.9) - 0.2).abs() < 1e-15);

        let mut t: QTable<AgentState> = QTable::new(3);
        t.set(&x, 2, 17.0);
        t.set(&y, 0, 3.0);
        let v = ql_update(&mut t, &x, 2, -2.0, &y, 1.0, 0.9);
        assert!((v - 0.7).abs() < 1e-12);
        // Only the updated entry moved.
        assert_eq!(t.get(&y, 0), 3.0);
        assert_eq!(t.get(&x, 0), 0.0);
    }

    #[test]
    fn update_contracts_toward_target() {
        let x = AgentState::new(0, BitString::zeros(2));
        let y = AgentState::new(1, BitString::ones(2));
        let mut t: QTable<AgentState> = QTable::new(2);
        t.set(&x, 1, 5.0);
        t.set(&y, 1, 1.0);
        let target = 2.0 + 0.9 * 1.0;
        let alpha = 0.3;
        let v = ql_update(&mut t, &x, 1, 2.0, &y, alpha, 0.9);
        assert!(((v - target).abs() - (1.0 - alpha) * (5.0 - target).abs()).abs() < 1e-12);
    }

    #[test]
    fn repeated_updates_reach_geometric_fixed_point() {
        let x = AgentState::new(1, BitString::zeros(1));
        let mut t: QTable<AgentState> = QTable::new(2);
        for _ in 0..2000 {
            ql_update(&mut t, &x, 1, 2.0, &x, 0.5, 0.9);
        }
        assert!((t.get(&x, 1) - 20.0).abs() < 1e-6);
    }

    #[test]
    fn epsilon_schedule() {
        assert_eq!(linear_epsilon(0.9, 10_000, 0), 0.9);
        assert!((linear_epsilon(0.9, 10_000, 5_000) - 0.45).abs() < 1e-15);
        assert_eq!(linear_epsilon(0.9, 10_000, 10_000), 0.0);
        assert_eq!(linear_epsilon(0.9, 10_000, 50_000), 0.0);
    }

    #[test]
    fn agent_state_token_round_trip() {
        let x = AgentState::new(17, "01100110".parse().unwrap());
        assert_eq!(x.to_token(), "17:01100110");
        assert_eq!(AgentState::from_token(&x.to_token()).unwrap(), x);
        assert!(AgentState::from_token("17-0110").is_err());
    }
}
