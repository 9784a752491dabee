//! Dynamic spectrum sensing and aggregation over correlated channels.
//!
//! A single secondary user picks, each slot, either to stay idle or to sense
//! and aggregate one length-`C` segment of `N` channels; the transmission
//! succeeds when the segment has at least `d` vacant channels. The crate
//! provides the channel simulator ([`env`]), exact references ([`oracle`]),
//! the baseline policies ([`policy`]), a small neural network ([`neural`]),
//! the DQN agent ([`dqn`]) and the evaluation metrics ([`eval`]).

pub mod bits;
pub mod dqn;
pub mod env;
pub mod error;
pub mod eval;
pub mod neural;
pub mod oracle;
pub mod policy;
pub mod qtable;
pub mod replay;

pub use bits::BitString;
pub use dqn::{DqnAgent, Hyperparams, MonitorConfig, MonitorReport, Telemetry};
pub use env::{
    Correlation, Environment, Observation, ScenarioConfig, StepOutcome, SystemState, Topology,
    TransitionMatrix,
};
pub use error::{Error, Result};
pub use eval::{MetricsReport, Situation, SituationCounts};
pub use neural::{NetworkParams, OptState};
pub use policy::{
    AgentState, DecisionContext, GeniePolicy, IdlePolicy, ImprovidentPolicy, Policy,
    QLearningAgent, QLearningConfig, RandomPolicy,
};
pub use qtable::QTable;
pub use replay::{ReplayMemory, Transition};
