//! Correlated multichannel spectrum environment.
//!
//! A handful of independent channels follow the same two-state Markov chain;
//! every other channel copies (or inverts) one of them. The agent senses one
//! length-`C` segment per slot and transmits on it when the segment holds at
//! least `d` vacant channels.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};

/// Joint occupancy of all `N` channels (0 = vacant, 1 = occupied).
pub type SystemState = BitString;

/// The sensed bits of one segment.
pub type Observation = BitString;

const ROW_TOLERANCE: f64 = 1e-12;

/// Per-channel two-state transition matrix; row = current state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix {
    p00: f64,
    p01: f64,
    p10: f64,
    p11: f64,
}

impl TransitionMatrix {
    pub fn new(p00: f64, p01: f64, p10: f64, p11: f64) -> Result<Self> {
        for (name, p) in [("p00", p00), ("p01", p01), ("p10", p10), ("p11", p11)] {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::config(name, format!("{p} is not a probability")));
            }
        }
        if (p00 + p01 - 1.0).abs() > ROW_TOLERANCE {
            return Err(Error::config("p00", "row 0 does not sum to 1"));
        }
        if (p10 + p11 - 1.0).abs() > ROW_TOLERANCE {
            return Err(Error::config("p11", "row 1 does not sum to 1"));
        }
        Ok(TransitionMatrix { p00, p01, p10, p11 })
    }

    /// Matrix from the two self-transition probabilities.
    pub fn from_stay(p00: f64, p11: f64) -> Result<Self> {
        for (name, p) in [("p00", p00), ("p11", p11)] {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::config(name, format!("{p} is not a probability")));
            }
        }
        Self::new(p00, 1.0 - p00, 1.0 - p11, p11)
    }

    pub fn identity() -> Self {
        TransitionMatrix {
            p00: 1.0,
            p01: 0.0,
            p10: 0.0,
            p11: 1.0,
        }
    }

    /// Every channel flips each slot.
    pub fn anti_identity() -> Self {
        TransitionMatrix {
            p00: 0.0,
            p01: 1.0,
            p10: 1.0,
            p11: 0.0,
        }
    }

    pub fn p00(&self) -> f64 {
        self.p00
    }
    pub fn p01(&self) -> f64 {
        self.p01
    }
    pub fn p10(&self) -> f64 {
        self.p10
    }
    pub fn p11(&self) -> f64 {
        self.p11
    }

    pub fn prob(&self, from: u8, to: u8) -> f64 {
        match (from, to) {
            (0, 0) => self.p00,
            (0, _) => self.p01,
            (_, 0) => self.p10,
            _ => self.p11,
        }
    }

    /// Stationary probability of the vacant state; uniform for chains that
    /// never leave their initial state.
    pub fn stationary_vacant(&self) -> f64 {
        let leave = self.p01 + self.p10;
        if leave > 0.0 {
            self.p10 / leave
        } else {
            0.5
        }
    }

    /// Swaps the roles of vacant and occupied.
    pub fn inverted(&self) -> Self {
        TransitionMatrix {
            p00: self.p11,
            p01: self.p10,
            p10: self.p01,
            p11: self.p00,
        }
    }
}

/// Sign of the correlation between a dependent channel and its parent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Correlation {
    /// rho = +1, the channel copies its parent.
    Same,
    /// rho = -1, the channel is the complement of its parent.
    Opposite,
}

impl Correlation {
    pub fn from_rho(rho: i64) -> Result<Self> {
        match rho {
            1 => Ok(Correlation::Same),
            -1 => Ok(Correlation::Opposite),
            other => Err(Error::config("rho", format!("{other} is not +1 or -1"))),
        }
    }

    pub fn rho(self) -> i64 {
        match self {
            Correlation::Same => 1,
            Correlation::Opposite => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ChannelSource {
    /// Slot in the list of independent channels.
    Independent(usize),
    Copy {
        slot: usize,
        invert: bool,
    },
}

/// Which channels evolve on their own and which mirror another one.
///
/// Channel indices are 0-based here; the scenario file uses 1-based indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    independents: Vec<usize>,
    sources: Vec<ChannelSource>,
}

impl Topology {
    /// Builds from 0-based independents and `(child, parent, correlation)`
    /// triples.
    pub fn new(
        n_channels: usize,
        independents: &[usize],
        dependents: &[(usize, usize, Correlation)],
    ) -> Result<Self> {
        if independents.is_empty() {
            return Err(Error::config(
                "independents",
                "at least one channel required",
            ));
        }
        let mut sources: Vec<Option<ChannelSource>> = vec![None; n_channels];
        for (slot, &ch) in independents.iter().enumerate() {
            if ch >= n_channels {
                return Err(Error::config(
                    "independents",
                    format!("channel {} out of range 1..={n_channels}", ch + 1),
                ));
            }
            if sources[ch].is_some() {
                return Err(Error::config(
                    "independents",
                    format!("channel {} listed twice", ch + 1),
                ));
            }
            sources[ch] = Some(ChannelSource::Independent(slot));
        }
        for &(child, parent, corr) in dependents {
            if child >= n_channels {
                return Err(Error::config(
                    "dependents",
                    format!("channel {} out of range 1..={n_channels}", child + 1),
                ));
            }
            let slot = match independents.iter().position(|&p| p == parent) {
                Some(slot) => slot,
                None => {
                    return Err(Error::config(
                        "dependents",
                        format!(
                            "parent {} of channel {} is not an independent channel",
                            parent + 1,
                            child + 1
                        ),
                    ))
                }
            };
            if sources[child].is_some() {
                return Err(Error::config(
                    "dependents",
                    format!("channel {} assigned twice", child + 1),
                ));
            }
            sources[child] = Some(ChannelSource::Copy {
                slot,
                invert: corr == Correlation::Opposite,
            });
        }
        let sources = sources
            .into_iter()
            .enumerate()
            .map(|(ch, s)| {
                s.ok_or_else(|| {
                    Error::config(
                        "dependents",
                        format!("channel {} is neither independent nor dependent", ch + 1),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Topology {
            independents: independents.to_vec(),
            sources,
        })
    }

    /// Picks `n_independent` channels uniformly at random and gives every
    /// other channel a uniformly random independent parent. All dependents
    /// share one correlation sign.
    pub fn random<R: Rng + ?Sized>(
        n_channels: usize,
        n_independent: usize,
        corr: Correlation,
        rng: &mut R,
    ) -> Result<Self> {
        if n_independent == 0 || n_independent > n_channels {
            return Err(Error::config(
                "n_independent",
                format!("{n_independent} not in 1..={n_channels}"),
            ));
        }
        let mut independents = index::sample(rng, n_channels, n_independent).into_vec();
        independents.sort_unstable();
        let dependents: Vec<_> = (0..n_channels)
            .filter(|ch| !independents.contains(ch))
            .map(|ch| (ch, independents[rng.random_range(0..n_independent)], corr))
            .collect();
        Self::new(n_channels, &independents, &dependents)
    }

    pub fn n_channels(&self) -> usize {
        self.sources.len()
    }

    /// 0-based channel index of each independent channel.
    pub fn independents(&self) -> &[usize] {
        &self.independents
    }

    pub fn n_independent(&self) -> usize {
        self.independents.len()
    }

    /// `(child, parent, correlation)` for every dependent channel, 0-based.
    pub fn dependents(&self) -> impl Iterator<Item = (usize, usize, Correlation)> + '_ {
        self.sources
            .iter()
            .enumerate()
            .filter_map(move |(ch, src)| match *src {
                ChannelSource::Copy { slot, invert } => Some((
                    ch,
                    self.independents[slot],
                    if invert {
                        Correlation::Opposite
                    } else {
                        Correlation::Same
                    },
                )),
                ChannelSource::Independent(_) => None,
            })
    }

    /// For a channel, the index of the independent channel driving it (as a
    /// position in [`Topology::independents`]) and whether it is inverted.
    pub fn driver(&self, channel: usize) -> (usize, bool) {
        match self.sources[channel] {
            ChannelSource::Independent(slot) => (slot, false),
            ChannelSource::Copy { slot, invert } => (slot, invert),
        }
    }

    /// Expands a configuration of the independent channels (bit `j` = state of
    /// the `j`-th independent channel) into the full joint state.
    pub fn expand(&self, parents: u64) -> SystemState {
        let mut word = 0u64;
        for ch in 0..self.sources.len() {
            let (slot, invert) = self.driver(ch);
            let bit = ((parents >> slot) & 1) ^ invert as u64;
            word |= bit << ch;
        }
        SystemState::from_word(word, self.sources.len())
    }

    /// Inverse of [`Topology::expand`] on consistent states.
    pub fn parents_of(&self, state: &SystemState) -> u64 {
        self.independents
            .iter()
            .enumerate()
            .fold(0u64, |acc, (slot, &ch)| {
                acc | ((state.get(ch) as u64) << slot)
            })
    }

    /// Whether every dependent channel agrees with its parent.
    pub fn is_consistent(&self, state: &SystemState) -> bool {
        state.len() == self.n_channels() && self.expand(self.parents_of(state)) == *state
    }
}

/// Scenario file contents. Channel indices are 1-based.
///
/// The topology is either given explicitly (`independents` + `dependents`) or
/// generated from `n_independent`, `rho` and `topology_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_channels: usize,
    pub segment_len: usize,
    pub demand: usize,
    pub p00: f64,
    pub p11: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub independents: Option<Vec<usize>>,
    /// `[child, parent, rho]` triples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dependents: Option<Vec<[i64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_independent: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<i64>,
    pub env_seed: u64,
    #[serde(default)]
    pub topology_seed: u64,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Parse {
            line: e
                .span()
                .map(|s| text[..s.start].lines().count().max(1))
                .unwrap_or(0),
            msg: e.message().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn transition(&self) -> Result<TransitionMatrix> {
        TransitionMatrix::from_stay(self.p00, self.p11)
    }

    /// Checks every invariant and resolves the topology.
    pub fn topology(&self) -> Result<Topology> {
        let n = self.n_channels;
        let explicit = self.independents.is_some() || self.dependents.is_some();
        let auto = self.n_independent.is_some() || self.rho.is_some();
        match (explicit, auto) {
            (true, true) => Err(Error::config(
                "independents",
                "give either an explicit topology or n_independent/rho, not both",
            )),
            (false, false) => Err(Error::config(
                "independents",
                "missing topology: give independents/dependents or n_independent/rho",
            )),
            (true, false) => {
                let independents = self
                    .independents
                    .as_deref()
                    .ok_or_else(|| Error::config("independents", "missing"))?
                    .iter()
                    .map(|&ch| one_based(ch as i64, n, "independents"))
                    .collect::<Result<Vec<_>>>()?;
                let dependents = self
                    .dependents
                    .as_deref()
                    .unwrap_or(&[])
                    .iter()
                    .map(|&[child, parent, rho]| {
                        Ok((
                            one_based(child, n, "dependents")?,
                            one_based(parent, n, "dependents")?,
                            Correlation::from_rho(rho)?,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Topology::new(n, &independents, &dependents)
            }
            (false, true) => {
                let count = self
                    .n_independent
                    .ok_or_else(|| Error::config("n_independent", "missing"))?;
                let corr = Correlation::from_rho(
                    self.rho.ok_or_else(|| Error::config("rho", "missing"))?,
                )?;
                let mut rng = ChaCha8Rng::seed_from_u64(self.topology_seed);
                Topology::random(n, count, corr, &mut rng)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_dims(self.n_channels, self.segment_len, self.demand)?;
        self.transition()?;
        self.topology()?;
        Ok(())
    }
}

fn one_based(ch: i64, n: usize, field: &str) -> Result<usize> {
    if ch < 1 || ch as usize > n {
        return Err(Error::config(
            field,
            format!("channel {ch} out of range 1..={n}"),
        ));
    }
    Ok(ch as usize - 1)
}

fn check_dims(n: usize, c: usize, d: usize) -> Result<()> {
    if !(2..=BitString::MAX_LEN).contains(&n) {
        return Err(Error::config(
            "n_channels",
            format!("{n} not in 2..={}", BitString::MAX_LEN),
        ));
    }
    if c == 0 || c >= n {
        return Err(Error::config(
            "segment_len",
            format!("{c} must satisfy 1 <= segment_len < n_channels ({n})"),
        ));
    }
    if d == 0 || d > c {
        return Err(Error::config(
            "demand",
            format!("{d} must satisfy 1 <= demand <= segment_len ({c})"),
        ));
    }
    Ok(())
}

/// Number of vacant channels in 1-based segment `segment` of length
/// `segment_len`.
pub fn vacancy_count(state: &SystemState, segment: usize, segment_len: usize) -> Result<usize> {
    let segments = state.len().saturating_sub(segment_len) + 1;
    if segment == 0 || segment > segments || segment_len > state.len() {
        return Err(Error::SegmentOutOfRange {
            segment,
            max: segments,
        });
    }
    Ok(state.count_zeros_in(segment - 1, segment_len))
}

/// Whether some segment can carry a transmission needing `demand` channels.
pub fn feasible(state: &SystemState, demand: usize, segment_len: usize) -> bool {
    let segments = state.len().saturating_sub(segment_len) + 1;
    (0..segments).any(|start| state.count_zeros_in(start, segment_len) >= demand)
}

/// What happened in one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub action: usize,
    pub observation: Observation,
    /// ACK; `None` when the agent stayed idle.
    pub feedback: Option<bool>,
    pub reward: f64,
}

pub const REWARD_SUCCESS: f64 = 2.0;
pub const REWARD_FAILURE: f64 = -2.0;

/// Reward for an ACK bit: `4f - 2`.
pub fn reward_for(feedback: bool) -> f64 {
    4.0 * (feedback as u8 as f64) - 2.0
}

/// The live environment: dynamics, topology, current state and its RNG.
#[derive(Debug, Clone)]
pub struct Environment {
    segment_len: usize,
    demand: usize,
    matrix: TransitionMatrix,
    topology: Topology,
    state: SystemState,
    rng: ChaCha8Rng,
    slot: u64,
    schedule: Vec<(u64, TransitionMatrix)>,
}

impl Environment {
    /// Builds the environment described by a scenario file.
    pub fn build(config: &ScenarioConfig) -> Result<Self> {
        check_dims(config.n_channels, config.segment_len, config.demand)?;
        let matrix = config.transition()?;
        let topology = config.topology()?;
        Self::new(
            config.segment_len,
            config.demand,
            matrix,
            topology,
            config.env_seed,
        )
    }

    /// Builds from parts. The initial state draws each independent channel
    /// from the stationary law of `matrix`.
    pub fn new(
        segment_len: usize,
        demand: usize,
        matrix: TransitionMatrix,
        topology: Topology,
        env_seed: u64,
    ) -> Result<Self> {
        check_dims(topology.n_channels(), segment_len, demand)?;
        let mut rng = ChaCha8Rng::seed_from_u64(env_seed);
        let pi0 = matrix.stationary_vacant();
        let parents = (0..topology.n_independent()).fold(0u64, |acc, slot| {
            let occupied = rng.random::<f64>() >= pi0;
            acc | ((occupied as u64) << slot)
        });
        let state = topology.expand(parents);
        Ok(Environment {
            segment_len,
            demand,
            matrix,
            topology,
            state,
            rng,
            slot: 0,
            schedule: Vec::new(),
        })
    }

    pub fn n_channels(&self) -> usize {
        self.topology.n_channels()
    }

    pub fn segment_len(&self) -> usize {
        self.segment_len
    }

    pub fn demand(&self) -> usize {
        self.demand
    }

    /// `N - C + 1`.
    pub fn n_segments(&self) -> usize {
        self.n_channels() - self.segment_len + 1
    }

    /// `N - C + 2`: idle plus one action per segment.
    pub fn n_actions(&self) -> usize {
        self.n_segments() + 1
    }

    pub fn matrix(&self) -> &TransitionMatrix {
        &self.matrix
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn state(&self) -> SystemState {
        self.state
    }

    /// Number of transitions taken so far.
    pub fn slot(&self) -> u64 {
        self.slot
    }

    /// Overrides the current state; it must be consistent with the topology.
    pub fn set_state(&mut self, state: SystemState) -> Result<()> {
        if !self.topology.is_consistent(&state) {
            return Err(Error::InvalidArgument(format!(
                "state {state} violates the channel topology"
            )));
        }
        self.state = state;
        Ok(())
    }

    /// Replaces the dynamics for every transition into slot `from_slot` and
    /// later.
    pub fn schedule_transition(&mut self, from_slot: u64, matrix: TransitionMatrix) {
        self.schedule.push((from_slot, matrix));
        self.schedule.sort_by_key(|&(slot, _)| slot);
    }

    /// Samples a successor of `state` under the current dynamics.
    pub fn advance_from<R: Rng + ?Sized>(&self, state: &SystemState, rng: &mut R) -> SystemState {
        transition(&self.matrix, &self.topology, state, rng)
    }

    /// Moves the environment one slot forward and returns the new state.
    pub fn advance(&mut self) -> SystemState {
        self.slot += 1;
        while let Some(&(from, matrix)) = self.schedule.first() {
            if from > self.slot {
                break;
            }
            self.matrix = matrix;
            self.schedule.remove(0);
        }
        self.state = transition(&self.matrix, &self.topology, &self.state, &mut self.rng);
        self.state
    }

    pub fn vacancy_count(&self, state: &SystemState, segment: usize) -> Result<usize> {
        vacancy_count(state, segment, self.segment_len)
    }

    pub fn feasible(&self, state: &SystemState) -> bool {
        feasible(state, self.demand, self.segment_len)
    }

    /// Sensed bits of a 1-based segment.
    pub fn observe(&self, state: &SystemState, segment: usize) -> Result<Observation> {
        if segment == 0 || segment > self.n_segments() {
            return Err(Error::SegmentOutOfRange {
                segment,
                max: self.n_segments(),
            });
        }
        Ok(state.slice(segment - 1, self.segment_len))
    }

    /// Applies `action` in the slot whose state is `state_next`.
    pub fn execute(&self, state_next: &SystemState, action: usize) -> Result<StepOutcome> {
        if action >= self.n_actions() {
            return Err(Error::InvalidAction {
                action,
                max: self.n_actions() - 1,
            });
        }
        if action == 0 {
            return Ok(StepOutcome {
                action,
                observation: self.observe(state_next, 1)?,
                feedback: None,
                reward: 0.0,
            });
        }
        let ack = self.vacancy_count(state_next, action)? >= self.demand;
        Ok(StepOutcome {
            action,
            observation: self.observe(state_next, action)?,
            feedback: Some(ack),
            reward: reward_for(ack),
        })
    }

    /// Advances one slot and executes `action` in it.
    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if action >= self.n_actions() {
            return Err(Error::InvalidAction {
                action,
                max: self.n_actions() - 1,
            });
        }
        let next = self.advance();
        self.execute(&next, action)
    }
}

fn transition<R: Rng + ?Sized>(
    matrix: &TransitionMatrix,
    topology: &Topology,
    state: &SystemState,
    rng: &mut R,
) -> SystemState {
    let parents = topology.parents_of(state);
    let next = (0..topology.n_independent()).fold(0u64, |acc, slot| {
        let vacant_prob = if (parents >> slot) & 1 == 0 {
            matrix.p00
        } else {
            matrix.p10
        };
        let occupied = rng.random::<f64>() >= vacant_prob;
        acc | ((occupied as u64) << slot)
    });
    topology.expand(next)
}
