use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{derive_seed, ExperimentConfig, Task};
use super::metrics::{
    compute_auc, write_eval_curve_csv, write_metrics_csv, EvalPoint, MetricsRow,
};
use crate::agent::{argmax_legal, greedy_action, network_from_archive, NetworkShape, QNetwork, Trainer};
use crate::baselines::{
    brute_force_optimal, random_policy, row_major_policy, selection_scores, PolicyKind, DEFAULT_ENUMERATION_CAP,
};
use crate::env::{assign_rewards, legal_actions, rollout_placement, Panel, RankingList, RewardSpec, StepRecord};
use crate::error::{Error, Result};
use crate::nn::TensorArchive;
use crate::sim::{
    expected_episode_reward, generate_catalog, sample_feedback, top_by_affinity, Catalog, ExaminationGrid,
    SimEnvironment, SyntheticUser,
};

const STREAM_CATALOG: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_CURVE_USERS: u64 = 3;
const STREAM_EVAL_USERS: u64 = 4;
const STREAM_EVAL_POLICY: u64 = 5;
const STREAM_EVAL_FEEDBACK: u64 = 6;

pub const CHECKPOINT_STEM: &str = "checkpoint";
pub const CATALOG_STEM: &str = "catalog";

/// The simulated world of one experiment: validated config, catalog and
/// examination grid.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    catalog: Arc<Catalog>,
    grid: ExaminationGrid,
}

/// A fixed user with the candidate list served to them.
pub type Request = (SyntheticUser, Arc<RankingList>);

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_CATALOG));
        let catalog = Arc::new(generate_catalog(&config.sim, &mut rng));
        let grid = crate::sim::examination_weights(
            config.panel.rows,
            config.panel.cols,
            config.sim.row_decay,
            config.sim.middle_bias,
        )?;
        Ok(Self { config, catalog, grid })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn grid(&self) -> &ExaminationGrid {
        &self.grid
    }

    pub fn network_shape(&self) -> NetworkShape {
        self.config
            .agent
            .network_shape(self.config.panel, self.config.sim.dim, self.config.sim.list_len)
    }

    pub fn null_penalty(&self) -> f64 {
        self.config.panel.effective_null_penalty()
    }

    /// The request stream used for training.
    pub fn training_env(&self) -> Result<SimEnvironment> {
        SimEnvironment::new(
            Arc::clone(&self.catalog),
            self.config.sim.clone(),
            self.config.panel,
            self.config.feedback,
            derive_seed(self.config.seed, STREAM_TRAIN),
        )
    }

    fn requests(&self, n: usize, stream: u64) -> Result<Vec<Request>> {
        let mut env = SimEnvironment::new(
            Arc::clone(&self.catalog),
            self.config.sim.clone(),
            self.config.panel,
            self.config.feedback,
            derive_seed(self.config.seed, stream),
        )?;
        (0..n).map(|_| env.sample_request()).collect()
    }

    /// The fixed users behind the evaluation curve.
    pub fn curve_requests(&self) -> Result<Vec<Request>> {
        self.requests(self.config.eval_users, STREAM_CURVE_USERS)
    }

    /// Fresh held-out requests for evaluation.
    pub fn eval_requests(&self, n: usize) -> Result<Vec<Request>> {
        self.requests(n, STREAM_EVAL_USERS)
    }

    /// Fails unless `net` was built for this experiment's panel and lists.
    pub fn check_network(&self, net: &QNetwork) -> Result<()> {
        let want = self.network_shape();
        let got = net.shape();
        if got.panel.rows != want.panel.rows
            || got.panel.cols != want.panel.cols
            || got.panel.allow_null != want.panel.allow_null
            || got.item_dim != want.item_dim
            || got.list_len < want.list_len
        {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained for a {}x{} panel (null {}), d={}, K={}; config needs {}x{} (null {}), d={}, K={}",
                got.panel.rows,
                got.panel.cols,
                got.panel.allow_null,
                got.item_dim,
                got.list_len,
                want.panel.rows,
                want.panel.cols,
                want.panel.allow_null,
                want.item_dim,
                want.list_len
            )));
        }
        Ok(())
    }
}

/// A policy ready to place items.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    Learned(&'a QNetwork),
    RowMajor,
    Random,
    Oracle,
}

impl Policy<'_> {
    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Learned(_) => PolicyKind::LearnedQ,
            Policy::RowMajor => PolicyKind::RowMajor,
            Policy::Random => PolicyKind::Random,
            Policy::Oracle => PolicyKind::BruteForceOracle,
        }
    }
}

/// One placement with per-candidate selection scores.
#[derive(Debug, Clone)]
pub struct Played {
    pub panel: Panel,
    pub trajectory: Vec<StepRecord>,
    /// Aligned with `trajectory`; higher means more worth placing.
    pub scores: Vec<f64>,
}

/// `Q(s, best legal slot) - Q(s, Null)` for the current candidate.
pub fn selection_score(q: &[f64], state: &crate::env::EnvState, spec: &crate::env::PanelSpec) -> f64 {
    let best_slot = legal_actions(state, spec)
        .into_iter()
        .filter(|a| !a.is_null())
        .map(|a| q[a.encode(spec)])
        .fold(f64::NEG_INFINITY, f64::max);
    best_slot - q[spec.null_code()]
}

/// Places one request with `policy`; learned policies act greedily.
pub fn play(
    exp: &Experiment,
    policy: Policy<'_>,
    user: &SyntheticUser,
    list: Arc<RankingList>,
    rng: &mut ChaCha8Rng,
) -> Result<Played> {
    let spec = exp.config.panel;
    match policy {
        Policy::Learned(net) => {
            let mut scores = Vec::new();
            let (panel, trajectory) = rollout_placement(
                |s| {
                    let q = net.q_values(s)?;
                    scores.push(selection_score(&q, s, &spec));
                    argmax_legal(&q, s, &spec)
                        .map(|(a, _)| a)
                        .ok_or(Error::EmptyInput("legal action set"))
                },
                list,
                &spec,
            )?;
            Ok(Played {
                panel,
                trajectory,
                scores,
            })
        }
        Policy::RowMajor | Policy::Random | Policy::Oracle => {
            let (panel, trajectory) = match policy {
                Policy::RowMajor => row_major_policy(list, &spec)?,
                Policy::Random => random_policy(list, &spec, rng)?,
                _ => {
                    let sol = brute_force_optimal(
                        user,
                        list,
                        &spec,
                        &exp.grid,
                        exp.null_penalty(),
                        DEFAULT_ENUMERATION_CAP,
                    )?;
                    (sol.panel, sol.trajectory)
                }
            };
            let scores = selection_scores(policy.kind(), &trajectory, rng);
            Ok(Played {
                panel,
                trajectory,
                scores,
            })
        }
    }
}

/// Mean greedy expected reward of `net` over `requests`.
pub fn mean_expected_reward(exp: &Experiment, net: &QNetwork, requests: &[Request]) -> Result<f64> {
    let spec = exp.config.panel;
    let mut total = 0.0;
    for (user, list) in requests {
        let (panel, trajectory) = rollout_placement(|s| greedy_action(net, s, &spec), Arc::clone(list), &spec)?;
        total += expected_episode_reward(user, &panel, &exp.grid, &trajectory, exp.null_penalty());
    }
    Ok(total / requests.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEval {
    pub episode: usize,
    pub realized_reward: f64,
    pub expected_reward: f64,
    pub placed: usize,
    pub nulls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: PolicyKind,
    pub task: Task,
    pub episodes: usize,
    /// Mean realized reward under sampled feedback.
    pub average_reward: f64,
    /// Mean analytic expected reward.
    pub average_expected_reward: f64,
    /// Pooled selection AUC; only for `select_re_org`.
    pub auc: Option<f64>,
    pub per_episode: Vec<EpisodeEval>,
}

/// Evaluates `policy` on `episodes` held-out requests.
pub fn evaluate(exp: &Experiment, policy: Policy<'_>, episodes: usize) -> Result<EvalReport> {
    let requests = exp.eval_requests(episodes)?;
    let mut policy_rng = ChaCha8Rng::seed_from_u64(derive_seed(exp.config.seed, STREAM_EVAL_POLICY));
    let mut feedback_rng = ChaCha8Rng::seed_from_u64(derive_seed(exp.config.seed, STREAM_EVAL_FEEDBACK));
    let spec = exp.config.panel;
    let rewards = RewardSpec::for_panel(&spec);
    let mut per_episode = Vec::with_capacity(episodes);
    let (mut all_scores, mut all_labels) = (Vec::new(), Vec::new());
    for (episode, (user, list)) in requests.into_iter().enumerate() {
        let played = play(exp, policy, &user, Arc::clone(&list), &mut policy_rng)?;
        let purchased = sample_feedback(&user, &played.panel, &exp.grid, &mut feedback_rng);
        let rewarded = assign_rewards(played.trajectory.clone(), purchased, &rewards, &spec)?;
        let nulls = played.trajectory.iter().filter(|r| r.action.is_null()).count();
        per_episode.push(EpisodeEval {
            episode,
            realized_reward: rewarded.iter().map(|r| r.reward).sum(),
            expected_reward: expected_episode_reward(
                &user,
                &played.panel,
                &exp.grid,
                &played.trajectory,
                exp.null_penalty(),
            ),
            placed: played.panel.filled_count(),
            nulls,
        });
        if exp.config.task == Task::SelectReOrg {
            let labels = top_by_affinity(&user, &list, spec.slots());
            all_scores.extend(&played.scores);
            all_labels.extend(played.trajectory.iter().map(|r| labels[r.state.t]));
        }
    }
    let n = per_episode.len().max(1) as f64;
    let auc = if exp.config.task == Task::SelectReOrg && !per_episode.is_empty() {
        Some(compute_auc(&all_scores, &all_labels)?)
    } else {
        None
    };
    Ok(EvalReport {
        policy: policy.kind(),
        task: exp.config.task,
        episodes: per_episode.len(),
        average_reward: per_episode.iter().map(|e| e.realized_reward).sum::<f64>() / n,
        average_expected_reward: per_episode.iter().map(|e| e.expected_reward).sum::<f64>() / n,
        auc,
        per_episode,
    })
}

/// In-memory result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub metrics: Vec<MetricsRow>,
    pub curve: Vec<EvalPoint>,
}

/// Trains on fresh simulated requests, scoring the greedy policy on the
/// fixed curve users every `eval_every` episodes and after the last one.
pub fn train_experiment(exp: &Experiment) -> Result<TrainOutcome> {
    let config = &exp.config;
    let mut trainer = Trainer::new(config.agent.clone(), exp.network_shape(), config.train_episodes)?;
    let mut env = exp.training_env()?;
    let curve_users = exp.curve_requests()?;
    let mut metrics = Vec::with_capacity(config.train_episodes);
    let mut curve = vec![EvalPoint {
        episode: 0,
        mean_expected_reward: mean_expected_reward(exp, trainer.network(), &curve_users)?,
    }];
    for episode in 0..config.train_episodes {
        let start = Instant::now();
        let stats = trainer.run_episode(&mut env)?;
        metrics.push(MetricsRow {
            episode,
            total_reward: stats.total_reward,
            loss: stats.loss,
            epsilon: stats.epsilon,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        let done = episode + 1;
        if done % config.eval_every == 0 || done == config.train_episodes {
            curve.push(EvalPoint {
                episode: done,
                mean_expected_reward: mean_expected_reward(exp, trainer.network(), &curve_users)?,
            });
        }
    }
    Ok(TrainOutcome {
        trainer,
        metrics,
        curve,
    })
}

/// Hex SHA-256 of every listed file, keyed by file name.
pub fn write_manifest(out: &Path, files: &[PathBuf], extra: serde_json::Value) -> Result<PathBuf> {
    let mut hashes = serde_json::Map::new();
    for f in files {
        let digest = Sha256::digest(fs::read(f)?);
        let name = f
            .strip_prefix(out)
            .unwrap_or(f)
            .to_string_lossy()
            .into_owned();
        hashes.insert(name, serde_json::Value::String(hex::encode(digest)));
    }
    let manifest = serde_json::json!({ "files": hashes, "run": extra });
    let path = out.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub episodes: usize,
    pub train_steps: u64,
    pub final_epsilon: f64,
    pub mean_reward_last_100: f64,
    pub curve: Vec<EvalPoint>,
    pub files: Vec<PathBuf>,
}

/// Trains and writes `checkpoint.{json,bin}`, `catalog.{json,bin}`,
/// `metrics.csv`, `eval_curve.csv`, `config.toml` and `manifest.json`
/// under `out`.
pub fn run_training(config: &ExperimentConfig, out: &Path) -> Result<TrainingSummary> {
    let exp = Experiment::new(config.clone())?;
    let outcome = train_experiment(&exp)?;
    fs::create_dir_all(out)?;

    let mut files = Vec::new();
    let (json, bin) = outcome.trainer.checkpoint().save(out, CHECKPOINT_STEM)?;
    files.extend([json, bin]);
    let (json, bin) = exp.catalog.to_archive(config.seed).save(out, CATALOG_STEM)?;
    files.extend([json, bin]);

    let metrics_path = out.join("metrics.csv");
    write_metrics_csv(&outcome.metrics, fs::File::create(&metrics_path)?)?;
    files.push(metrics_path);
    let curve_path = out.join("eval_curve.csv");
    write_eval_curve_csv(&outcome.curve, fs::File::create(&curve_path)?)?;
    files.push(curve_path);
    let config_path = out.join("config.toml");
    fs::write(&config_path, config.to_toml_string()?)?;
    files.push(config_path);

    let manifest = write_manifest(
        out,
        &files,
        serde_json::json!({
            "command": "train",
            "task": config.task,
            "seed": config.seed,
            "episodes": config.train_episodes,
        }),
    )?;
    files.push(manifest);

    let tail = &outcome.metrics[outcome.metrics.len().saturating_sub(100)..];
    Ok(TrainingSummary {
        episodes: outcome.metrics.len(),
        train_steps: outcome.trainer.train_steps(),
        final_epsilon: outcome.trainer.epsilon(),
        mean_reward_last_100: tail.iter().map(|m| m.total_reward).sum::<f64>() / tail.len().max(1) as f64,
        curve: outcome.curve,
        files,
    })
}

/// Loads the online network of a checkpoint; `path` may name the manifest,
/// the data file, or the directory holding `checkpoint.json`.
pub fn load_checkpoint_network(path: &Path) -> Result<QNetwork> {
    let (dir, stem) = if path.is_dir() {
        (path.to_path_buf(), CHECKPOINT_STEM.to_string())
    } else {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Checkpoint(format!("bad checkpoint path {}", path.display())))?;
        (
            path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
            stem.to_string(),
        )
    };
    network_from_archive(&TensorArchive::load(&dir, &stem)?)
}

/// Evaluates a baseline, or the learned network at `checkpoint`, and writes
/// `eval_<policy>.json` plus a manifest under `out` when given.
pub fn run_eval(
    config: &ExperimentConfig,
    kind: PolicyKind,
    checkpoint: Option<&Path>,
    episodes: usize,
    out: Option<&Path>,
) -> Result<EvalReport> {
    let exp = Experiment::new(config.clone())?;
    let net = match (kind, checkpoint) {
        (PolicyKind::LearnedQ, Some(path)) => Some(load_checkpoint_network(path)?),
        (PolicyKind::LearnedQ, None) => {
            return Err(Error::config("checkpoint", "the learned policy needs --checkpoint"))
        }
        _ => None,
    };
    if let Some(net) = &net {
        exp.check_network(net)?;
    }
    let policy = match kind {
        PolicyKind::LearnedQ => Policy::Learned(net.as_ref().expect("loaded above")),
        PolicyKind::RowMajor => Policy::RowMajor,
        PolicyKind::Random => Policy::Random,
        PolicyKind::BruteForceOracle => Policy::Oracle,
    };
    let report = evaluate(&exp, policy, episodes)?;
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        let path = out.join(format!("eval_{kind}.json"));
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        fs::write(&path, text)?;
        write_manifest(
            out,
            &[path],
            serde_json::json!({ "command": "eval", "policy": kind, "seed": config.seed, "episodes": episodes }),
        )?;
    }
    Ok(report)
}

/// One row of a policy comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub policy: PolicyKind,
    pub average_reward: f64,
    pub average_expected_reward: f64,
    pub auc: Option<f64>,
}

/// Evaluates every applicable policy on the same held-out requests. The
/// oracle is skipped when its enumeration exceeds the cap, the learned
/// policy when no checkpoint is given.
pub fn compare(
    config: &ExperimentConfig,
    checkpoint: Option<&Path>,
    episodes: usize,
    out: Option<&Path>,
) -> Result<Vec<CompareRow>> {
    let exp = Experiment::new(config.clone())?;
    let net = checkpoint.map(load_checkpoint_network).transpose()?;
    if let Some(net) = &net {
        exp.check_network(net)?;
    }
    let mut policies = Vec::new();
    if let Some(net) = &net {
        policies.push(Policy::Learned(net));
    }
    policies.extend([Policy::RowMajor, Policy::Random]);
    if crate::baselines::enumeration_size(config.sim.list_len, &config.panel) <= DEFAULT_ENUMERATION_CAP {
        policies.push(Policy::Oracle);
    }
    let mut rows = Vec::new();
    for p in policies {
        let r = evaluate(&exp, p, episodes)?;
        rows.push(CompareRow {
            policy: r.policy,
            average_reward: r.average_reward,
            average_expected_reward: r.average_expected_reward,
            auc: r.auc,
        });
    }
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        let path = out.join("compare.csv");
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(&path)
            .map_err(|e| Error::Io(e.into()))?;
        for row in &rows {
            w.serialize(row).map_err(|e| Error::Io(e.into()))?;
        }
        w.flush()?;
        write_manifest(
            out,
            &[path],
            serde_json::json!({ "command": "compare", "seed": config.seed, "episodes": episodes }),
        )?;
    }
    Ok(rows)
}
