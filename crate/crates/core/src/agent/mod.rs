//! Dueling deep-Q agent: state encoder, epsilon-greedy acting, replay
//! memory, target network and the training loop.

mod dqn;
mod qnet;
mod replay;

pub use dqn::{
    argmax_legal, fit_batch, greedy_action, loss_and_backward, select_action, td_targets,
    train_step,
};
pub use qnet::{sync_target, NetworkShape, QCache, QNetwork, QOutput, TargetNetwork};
pub use replay::ReplayMemory;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{rollout_placement, Panel, PanelSpec, RankingList, StepRecord};
use crate::error::{Error, Result};
use crate::nn::{OptimizerKind, Optimizer, Parameterized, TensorArchive};

/// Source of requests and user feedback for training.
pub trait Environment {
    /// A fresh candidate list for the next episode.
    fn next_request(&mut self) -> Result<Arc<RankingList>>;

    /// Rewards an episode's trajectory after its panel has been shown.
    fn feedback(&mut self, panel: &Panel, trajectory: Vec<StepRecord>) -> Result<Vec<StepRecord>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Episodes over which epsilon decays linearly; half the run when unset.
    pub epsilon_decay_episodes: Option<usize>,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    /// Target network refresh period, in train steps.
    pub target_sync_every: u64,
    pub replay_capacity: usize,
    /// Records stored before the first train step.
    pub warmup: usize,
    pub train_steps_per_env_step: usize,
    pub time_dim: usize,
    pub action_dim: usize,
    pub gru_hidden: usize,
    pub attention_heads: usize,
    pub hidden_widths: Vec<usize>,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: None,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            batch_size: 32,
            target_sync_every: 200,
            replay_capacity: 10_000,
            warmup: 500,
            train_steps_per_env_step: 1,
            time_dim: 8,
            action_dim: 8,
            gru_hidden: 16,
            attention_heads: 2,
            hidden_widths: vec![64, 32],
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str| format!("agent.{name}");
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config(field("gamma"), "must lie in (0, 1)"));
        }
        for (name, v) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(field(name), "must lie in [0, 1]"));
            }
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(field("learning_rate"), "must be finite and nonnegative"));
        }
        let positive = [
            ("batch_size", self.batch_size),
            ("replay_capacity", self.replay_capacity),
            ("time_dim", self.time_dim),
            ("action_dim", self.action_dim),
            ("gru_hidden", self.gru_hidden),
            ("attention_heads", self.attention_heads),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(field(name), "must be positive"));
            }
        }
        if self.target_sync_every == 0 {
            return Err(Error::config(field("target_sync_every"), "must be positive"));
        }
        if self.replay_capacity < self.batch_size {
            return Err(Error::config(field("replay_capacity"), "must be at least batch_size"));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::config(field("hidden_widths"), "widths must be positive"));
        }
        Ok(())
    }

    pub fn network_shape(&self, panel: PanelSpec, item_dim: usize, list_len: usize) -> NetworkShape {
        NetworkShape {
            panel,
            item_dim,
            list_len,
            time_dim: self.time_dim,
            action_dim: self.action_dim,
            gru_hidden: self.gru_hidden,
            attention_heads: self.attention_heads,
            hidden_widths: self.hidden_widths.clone(),
        }
    }

    /// Linear decay from `epsilon_start` to `epsilon_end`, then constant.
    pub fn epsilon_at(&self, episode: usize, planned_episodes: usize) -> f64 {
        let horizon = self
            .epsilon_decay_episodes
            .unwrap_or(planned_episodes / 2);
        if episode >= horizon {
            return self.epsilon_end;
        }
        let frac = episode as f64 / horizon as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    fn make_optimizer(&self) -> Optimizer {
        Optimizer::new(self.optimizer, self.learning_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub total_reward: f64,
    /// Mean loss of the train steps run after this episode, if any.
    pub loss: Option<f64>,
    pub epsilon: f64,
    pub steps: usize,
}

/// Single-writer training state: online and target networks, optimizer,
/// replay memory and exploration RNG.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: AgentConfig,
    online: QNetwork,
    target: TargetNetwork,
    optimizer: Optimizer,
    memory: ReplayMemory,
    rng: ChaCha8Rng,
    planned_episodes: usize,
    episodes_done: usize,
    train_steps: u64,
}

const CHECKPOINT_KIND: &str = "panel-mdp-agent";

impl Trainer {
    pub fn new(config: AgentConfig, shape: NetworkShape, planned_episodes: usize) -> Result<Self> {
        config.validate()?;
        shape.panel.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let online = QNetwork::new(shape, &mut init_rng)?;
        let target = TargetNetwork::from_online(&online);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            optimizer: config.make_optimizer(),
            memory: ReplayMemory::new(config.replay_capacity),
            config,
            online,
            target,
            rng,
            planned_episodes,
            episodes_done: 0,
            train_steps: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn network(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &TargetNetwork {
        &self.target
    }

    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn epsilon(&self) -> f64 {
        self.config.epsilon_at(self.episodes_done, self.planned_episodes)
    }

    pub fn into_network(self) -> QNetwork {
        self.online
    }

    /// Rolls out one epsilon-greedy episode, stores its rewarded transitions
    /// and runs the scheduled train steps.
    pub fn run_episode<E: Environment + ?Sized>(&mut self, env: &mut E) -> Result<EpisodeStats> {
        let epsilon = self.epsilon();
        let spec = *self.online.panel();
        let list = env.next_request()?;
        let (panel, trajectory) = {
            let net = &self.online;
            let rng = &mut self.rng;
            rollout_placement(|s| select_action(net, s, &spec, epsilon, rng), list, &spec)?
        };
        let trajectory = env.feedback(&panel, trajectory)?;
        let total_reward = trajectory.iter().map(|r| r.reward).sum();
        let steps = trajectory.len();
        for record in trajectory {
            self.memory.store(record);
        }

        let mut losses = Vec::new();
        let ready = self.memory.len() >= self.config.warmup.max(self.config.batch_size);
        if ready {
            for _ in 0..steps * self.config.train_steps_per_env_step {
                let loss = train_step(
                    &mut self.online,
                    &self.target,
                    &self.memory,
                    &mut self.optimizer,
                    self.config.batch_size,
                    self.config.gamma,
                    &mut self.rng,
                )?;
                losses.push(loss);
                self.train_steps += 1;
                if self.train_steps.is_multiple_of(self.config.target_sync_every) {
                    sync_target(&self.online, &mut self.target)?;
                }
            }
        }
        let stats = EpisodeStats {
            episode: self.episodes_done,
            total_reward,
            loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            epsilon,
            steps,
        };
        self.episodes_done += 1;
        Ok(stats)
    }

    /// Serializes networks, optimizer moments, counters and RNG position.
    /// The replay memory is not persisted.
    pub fn checkpoint(&self) -> TensorArchive {
        let mut tensors = self.online.to_named_tensors();
        for mut t in self.target.network().to_named_tensors() {
            t.name = format!("target/{}", t.name);
            tensors.push(t);
        }
        tensors.extend(self.optimizer.state_tensors());
        let metadata = serde_json::json!({
            "kind": CHECKPOINT_KIND,
            "agent_config": self.config,
            "network_shape": self.online.shape(),
            "planned_episodes": self.planned_episodes,
            "episodes_done": self.episodes_done,
            "train_steps": self.train_steps,
            "epsilon": self.epsilon(),
            "optimizer_steps": self.optimizer.steps(),
            "rng_word_pos": self.rng.get_word_pos().to_string(),
        });
        TensorArchive::new(self.config.seed, metadata, tensors)
    }

    pub fn restore(archive: &TensorArchive) -> Result<Self> {
        let meta = &archive.metadata;
        if meta["kind"] != CHECKPOINT_KIND {
            return Err(Error::Checkpoint("not an agent checkpoint".into()));
        }
        let field = |name: &str| -> Result<&serde_json::Value> {
            meta.get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing metadata field `{name}`")))
        };
        let mut config: AgentConfig = serde_json::from_value(field("agent_config")?.clone())?;
        config.seed = archive.seed;
        let online = network_from_archive(archive)?;
        let mut target = TargetNetwork::from_online(&online);
        let target_tensors: Vec<_> = archive
            .tensors
            .iter()
            .filter_map(|t| {
                t.name.strip_prefix("target/").map(|n| crate::nn::NamedTensor {
                    name: n.to_string(),
                    ..t.clone()
                })
            })
            .collect();
        target.network_mut().load_named_tensors(&target_tensors)?;
        let optimizer = Optimizer::restore(
            config.optimizer,
            config.learning_rate,
            serde_json::from_value(field("optimizer_steps")?.clone())?,
            &archive.tensors,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let pos: u128 = field("rng_word_pos")?
            .as_str()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Checkpoint("bad rng_word_pos".into()))?;
        rng.set_word_pos(pos);
        Ok(Self {
            memory: ReplayMemory::new(config.replay_capacity),
            planned_episodes: serde_json::from_value(field("planned_episodes")?.clone())?,
            episodes_done: serde_json::from_value(field("episodes_done")?.clone())?,
            train_steps: serde_json::from_value(field("train_steps")?.clone())?,
            config,
            online,
            target,
            optimizer,
            rng,
        })
    }
}

/// Rebuilds the online network stored in an agent checkpoint.
pub fn network_from_archive(archive: &TensorArchive) -> Result<QNetwork> {
    let shape: NetworkShape = serde_json::from_value(
        archive
            .metadata
            .get("network_shape")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("missing network_shape".into()))?,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = QNetwork::new(shape, &mut rng)?;
    net.load_named_tensors(&archive.tensors)?;
    Ok(net)
}

/// Trains a fresh agent for `episodes` episodes.
pub fn train<E: Environment + ?Sized>(
    env: &mut E,
    shape: NetworkShape,
    config: &AgentConfig,
    episodes: usize,
) -> Result<(QNetwork, Vec<EpisodeStats>)> {
    let mut trainer = Trainer::new(config.clone(), shape, episodes)?;
    let metrics = (0..episodes)
        .map(|_| trainer.run_episode(env))
        .collect::<Result<Vec<_>>>()?;
    Ok((trainer.into_network(), metrics))
}
