use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::env::PanelSpec;
use crate::error::{Error, Result};
use crate::sim::{FeedbackMode, SimulatorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Arrange exactly `M*N` candidates; `Null` is disabled.
    ReOrg,
    /// Choose `M*N` of `K > M*N` candidates and arrange them.
    SelectReOrg,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::ReOrg => "re_org",
            Task::SelectReOrg => "select_re_org",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "re_org" => Ok(Task::ReOrg),
            "select_re_org" => Ok(Task::SelectReOrg),
            other => Err(Error::config("task", format!("unknown task `{other}`"))),
        }
    }
}

/// One experiment: task, simulator, agent and run lengths.
///
/// Stored as TOML. Sections `[panel]`, `[sim]` and `[agent]` map onto
/// [`PanelSpec`], [`SimulatorConfig`] and [`AgentConfig`]; any key left out
/// takes the task's default and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seed: u64,
    pub train_episodes: usize,
    pub eval_episodes: usize,
    /// Episodes between points of the evaluation curve.
    pub eval_every: usize,
    /// Fixed users scored at every evaluation-curve point.
    pub eval_users: usize,
    pub feedback: FeedbackMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub panel: PanelSpec,
    pub sim: SimulatorConfig,
    pub agent: AgentConfig,
}

impl ExperimentConfig {
    /// 2x3 panel, six candidates, no `Null`.
    pub fn re_org() -> Self {
        Self {
            task: Task::ReOrg,
            seed: 0,
            train_episodes: 10_000,
            eval_episodes: 1_000,
            eval_every: 250,
            eval_users: 200,
            feedback: FeedbackMode::Sampled,
            out_dir: None,
            panel: PanelSpec {
                rows: 2,
                cols: 3,
                allow_null: false,
                null_penalty: 0.1,
            },
            sim: SimulatorConfig {
                list_len: 6,
                ..SimulatorConfig::default()
            },
            agent: AgentConfig::default(),
        }
    }

    /// 2x3 panel filled from sixteen candidates, `Null` penalty 0.1.
    pub fn select_re_org() -> Self {
        Self {
            task: Task::SelectReOrg,
            panel: PanelSpec {
                allow_null: true,
                ..Self::re_org().panel
            },
            sim: SimulatorConfig {
                list_len: 16,
                ..SimulatorConfig::default()
            },
            ..Self::re_org()
        }
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::ReOrg => Self::re_org(),
            Task::SelectReOrg => Self::select_re_org(),
        }
    }

    /// Copies the top-level seed into the sub-configs.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sim.seed = seed;
        self.agent.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.panel.validate()?;
        self.sim.validate()?;
        self.agent.validate()?;
        let (k, slots) = (self.sim.list_len, self.panel.slots());
        match self.task {
            Task::ReOrg => {
                if self.panel.allow_null {
                    return Err(Error::config("panel.allow_null", "re_org has no Null action"));
                }
                if k != slots {
                    return Err(Error::config(
                        "sim.list_len",
                        format!("re_org needs exactly rows*cols = {slots} candidates, got {k}"),
                    ));
                }
            }
            Task::SelectReOrg => {
                if !self.panel.allow_null {
                    return Err(Error::config("panel.allow_null", "select_re_org needs the Null action"));
                }
                if k <= slots {
                    return Err(Error::config(
                        "sim.list_len",
                        format!("select_re_org needs more than rows*cols = {slots} candidates, got {k}"),
                    ));
                }
            }
        }
        if !self.sim.dim.is_multiple_of(self.agent.attention_heads) {
            return Err(Error::config(
                "agent.attention_heads",
                format!("must divide sim.dim = {}", self.sim.dim),
            ));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be positive"));
        }
        if self.eval_users == 0 {
            return Err(Error::config("eval_users", "must be positive"));
        }
        Ok(())
    }

    /// Parses a TOML document, filling absent keys from the task defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        let task = match user.get("task") {
            None => Task::ReOrg,
            Some(toml::Value::String(s)) => s.parse()?,
            Some(_) => return Err(Error::config("task", "must be a string")),
        };
        let mut merged = toml::Table::try_from(Self::for_task(task))
            .map_err(|e| Error::config("config", e.to_string()))?;
        merge(&mut merged, user);
        let config: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("config", e.to_string()))?;
        let seed = config.seed;
        let config = config.with_seed(seed);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Independent stream seed for one purpose of a run.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
