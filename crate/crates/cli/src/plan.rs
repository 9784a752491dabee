//! Experiment plans: which scenarios to run, with which policies and
//! settings, and where to put the results.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use dsa_core::{Hyperparams, QLearningConfig, ScenarioConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Random,
    Improvident,
    Qlearning,
    Dqn,
    Genie,
    Idle,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Random,
        PolicyKind::Improvident,
        PolicyKind::Qlearning,
        PolicyKind::Dqn,
        PolicyKind::Genie,
        PolicyKind::Idle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Improvident => "improvident",
            PolicyKind::Qlearning => "qlearning",
            PolicyKind::Dqn => "dqn",
            PolicyKind::Genie => "genie",
            PolicyKind::Idle => "idle",
        }
    }

    pub fn learns(self) -> bool {
        matches!(self, PolicyKind::Qlearning | PolicyKind::Dqn)
    }

    /// Stable small integer used when deriving seeds.
    pub fn index(self) -> u64 {
        PolicyKind::ALL
            .iter()
            .position(|&p| p == self)
            .expect("listed") as u64
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .with_context(|| {
                let names: Vec<_> = PolicyKind::ALL.iter().map(|p| p.name()).collect();
                format!("unknown policy {s:?}; expected one of {}", names.join(", "))
            })
    }
}

/// DQN and Q-learning settings, as stored in a hyperparameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    #[serde(default)]
    pub dqn: Hyperparams,
    #[serde(default)]
    pub qlearning: QLearningConfig,
}

impl Default for HyperConfig {
    fn default() -> Self {
        HyperConfig {
            dqn: Hyperparams::desk(),
            qlearning: QLearningConfig::default(),
        }
    }
}

impl HyperConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: HyperConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read(path)?;
        Self::from_toml_str(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.dqn.validate().context("[dqn]")?;
        self.qlearning.validate().context("[qlearning]")?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub config: ScenarioConfig,
}

/// A fully resolved plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub out_dir: PathBuf,
    pub slots: u64,
    pub repetitions: u32,
    pub seed: u64,
    pub gamma: f64,
    pub beta: f64,
    pub policies: Vec<PolicyKind>,
    pub hyper: HyperConfig,
    pub scenarios: Vec<Scenario>,
}

pub const DEFAULT_SLOTS: u64 = 10_000;
pub const DEFAULT_OUT_DIR: &str = "runs";

/// Plan file as written by hand: scenarios may be inline or paths, and the
/// hyperparameters may live in their own file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    #[serde(default)]
    out_dir: Option<PathBuf>,
    #[serde(default)]
    slots: Option<u64>,
    #[serde(default)]
    repetitions: Option<u32>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    gamma: Option<f64>,
    #[serde(default)]
    beta: Option<f64>,
    policies: Vec<PolicyKind>,
    #[serde(default)]
    hyper: Option<HyperConfig>,
    #[serde(default)]
    hyper_file: Option<PathBuf>,
    scenarios: Vec<ScenarioEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioEntry {
    id: String,
    #[serde(default)]
    path: Option<PathBuf>,
    #[serde(default)]
    config: Option<ScenarioConfig>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = read(path)?;
    ScenarioConfig::from_toml_str(&text).with_context(|| format!("in {}", path.display()))
}

/// Scenario id derived from a file name: `scenarios/s01.toml` gives `s01`.
pub fn scenario_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into())
}

/// Reads and validates a plan file. Relative paths inside it are resolved
/// against the file's directory.
pub fn parse_config(path: &Path) -> Result<ExperimentPlan> {
    let text = read(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    ExperimentPlan::from_toml_str(&text, base).with_context(|| format!("in {}", path.display()))
}

impl ExperimentPlan {
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let file: PlanFile = toml::from_str(text)?;
        let hyper = match (file.hyper, file.hyper_file) {
            (Some(_), Some(_)) => bail!("hyper_file: give either [hyper] or hyper_file, not both"),
            (Some(h), None) => h,
            (None, Some(p)) => HyperConfig::load(&base.join(p))?,
            (None, None) => HyperConfig::default(),
        };
        let scenarios = file
            .scenarios
            .into_iter()
            .map(|entry| {
                let config = match (entry.path, entry.config) {
                    (Some(p), None) => load_scenario(&base.join(p))?,
                    (None, Some(c)) => c,
                    _ => bail!(
                        "scenarios: entry {:?} needs exactly one of `path` or `config`",
                        entry.id
                    ),
                };
                Ok(Scenario {
                    id: entry.id,
                    config,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let plan = ExperimentPlan {
            out_dir: file.out_dir.unwrap_or_else(|| DEFAULT_OUT_DIR.into()),
            slots: file.slots.unwrap_or(DEFAULT_SLOTS),
            repetitions: file.repetitions.unwrap_or(1),
            seed: file.seed,
            gamma: file.gamma.unwrap_or(0.9),
            beta: file.beta.unwrap_or(0.5),
            policies: file.policies,
            hyper,
            scenarios,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Self-contained TOML form; parsing it back yields an equal plan.
    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots == 0 {
            bail!("slots: must be at least 1");
        }
        if self.repetitions == 0 {
            bail!("repetitions: must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            bail!("gamma: {} outside [0, 1]", self.gamma);
        }
        if !(0.0..=1.0).contains(&self.beta) {
            bail!("beta: {} outside [0, 1]", self.beta);
        }
        if self.policies.is_empty() {
            bail!("policies: at least one policy required");
        }
        let mut seen = HashSet::new();
        for p in &self.policies {
            if !seen.insert(p) {
                bail!("policies: {p} listed twice");
            }
        }
        if self.scenarios.is_empty() {
            bail!("scenarios: at least one scenario required");
        }
        let mut ids = HashSet::new();
        for s in &self.scenarios {
            if s.id.is_empty()
                || s.id
                    .contains(|c: char| c.is_whitespace() || c == '/' || c == ',')
            {
                bail!(
                    "scenarios: id {:?} must be non-empty without spaces, commas or slashes",
                    s.id
                );
            }
            if !ids.insert(&s.id) {
                bail!("scenarios: duplicate id {:?}", s.id);
            }
            s.config
                .validate()
                .with_context(|| format!("scenario {:?}", s.id))?;
        }
        if self.policies.iter().any(|p| p.learns()) {
            self.hyper.validate()?;
        }
        Ok(())
    }
}
