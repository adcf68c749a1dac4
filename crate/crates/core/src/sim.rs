//! Synthetic grid users.
//!
//! A user purchases at most one item per panel. Slot `(m, n)` holding item
//! `i` has propensity `q = w[m][n] * sigmoid(u . e(i))`, where the
//! examination weight `w[m][n] = rho^(m-1) * mu^|n - c|` decays slowly by
//! row and peaks at the middle column `c = (N + 1) / 2`. Feedback is one
//! categorical draw: slot `k` with probability `q_k / (1 + Q)`, nothing with
//! probability `1 / (1 + Q)`, where `Q` sums the propensities of filled
//! slots. That makes the expected episode reward `Q / (1 + Q) - xi * #Null`.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::agent::Environment;
use crate::env::{
    assign_rewards, is_terminal, Item, Panel, PanelSpec, RankingList, RewardSpec, SlotAction,
    StepRecord,
};
use crate::error::{Error, Result};
use crate::nn::{NamedTensor, TensorArchive};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    pub catalog_size: usize,
    /// Embedding dimension `d`.
    pub dim: usize,
    /// Candidates per request (`K`).
    pub list_len: usize,
    /// `rho`, attention kept from one row to the next.
    pub row_decay: f64,
    /// `mu`, attention kept per column of distance from the middle.
    pub middle_bias: f64,
    /// Std. dev. of the Gaussian noise in the upstream ranking score.
    pub rank_noise: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            catalog_size: 200,
            dim: 16,
            list_len: 6,
            row_decay: 0.8,
            middle_bias: 0.8,
            rank_noise: 0.1,
            seed: 0,
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.list_len == 0 {
            return Err(Error::config("sim.list_len", "must be at least 1"));
        }
        if self.dim == 0 {
            return Err(Error::config("sim.dim", "must be positive"));
        }
        if self.catalog_size < self.list_len {
            return Err(Error::config(
                "sim.catalog_size",
                format!("must be at least list_len ({})", self.list_len),
            ));
        }
        check_unit_interval("sim.row_decay", self.row_decay)?;
        check_unit_interval("sim.middle_bias", self.middle_bias)?;
        if !(self.rank_noise >= 0.0) || !self.rank_noise.is_finite() {
            return Err(Error::config("sim.rank_noise", "must be finite and nonnegative"));
        }
        Ok(())
    }
}

fn check_unit_interval(field: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v <= 1.0) {
        return Err(Error::config(field, format!("must lie in (0, 1], got {v}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticUser {
    pub id: u64,
    pub preference: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExaminationGrid {
    rows: usize,
    cols: usize,
    row_decay: f64,
    middle_bias: f64,
    weights: Vec<f64>,
}

impl ExaminationGrid {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_decay(&self) -> f64 {
        self.row_decay
    }

    pub fn middle_bias(&self) -> f64 {
        self.middle_bias
    }

    /// 1-based lookup.
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[(row - 1) * self.cols + (col - 1)]
    }

    /// Weights as nested rows.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.weights.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }
}

pub fn examination_weights(rows: usize, cols: usize, row_decay: f64, middle_bias: f64) -> Result<ExaminationGrid> {
    if rows == 0 || cols == 0 {
        return Err(Error::config("panel", "grid must have at least one slot"));
    }
    check_unit_interval("sim.row_decay", row_decay)?;
    check_unit_interval("sim.middle_bias", middle_bias)?;
    let center = (cols as f64 + 1.0) / 2.0;
    let mut weights = Vec::with_capacity(rows * cols);
    for m in 1..=rows {
        for n in 1..=cols {
            let dist = (n as f64 - center).abs();
            weights.push(row_decay.powi(m as i32 - 1) * middle_bias.powf(dist));
        }
    }
    Ok(ExaminationGrid {
        rows,
        cols,
        row_decay,
        middle_bias,
        weights,
    })
}

pub fn affinity(user: &SyntheticUser, item: &Item) -> f64 {
    user.preference
        .iter()
        .zip(&item.embedding)
        .map(|(a, b)| a * b)
        .sum()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `w[row][col] * sigmoid(u . e(item))`.
pub fn purchase_propensity(user: &SyntheticUser, item: &Item, slot: (usize, usize), grid: &ExaminationGrid) -> f64 {
    grid.weight(slot.0, slot.1) * sigmoid(affinity(user, item))
}

/// Propensities of the filled slots, in row-major order.
pub fn slot_propensities(user: &SyntheticUser, panel: &Panel, grid: &ExaminationGrid) -> Vec<((usize, usize), f64)> {
    panel
        .filled()
        .map(|(slot, item)| (slot, purchase_propensity(user, item, slot, grid)))
        .collect()
}

/// Probability that the user purchases nothing, followed by the purchase
/// probability of each filled slot.
pub fn feedback_distribution(
    user: &SyntheticUser,
    panel: &Panel,
    grid: &ExaminationGrid,
) -> (f64, Vec<((usize, usize), f64)>) {
    let props = slot_propensities(user, panel, grid);
    let total: f64 = props.iter().map(|(_, q)| q).sum();
    let norm = 1.0 + total;
    (
        1.0 / norm,
        props.into_iter().map(|(s, q)| (s, q / norm)).collect(),
    )
}

/// A single categorical draw; `None` means no purchase.
pub fn sample_feedback<R: Rng + ?Sized>(
    user: &SyntheticUser,
    panel: &Panel,
    grid: &ExaminationGrid,
    rng: &mut R,
) -> Option<(usize, usize)> {
    let (_, slots) = feedback_distribution(user, panel, grid);
    if slots.is_empty() {
        return None;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (slot, p) in slots {
        acc += p;
        if u < acc {
            return Some(slot);
        }
    }
    None
}

/// `Q / (1 + Q) - xi * #Null`, for unit purchase reward and zero otherwise.
pub fn expected_episode_reward(
    user: &SyntheticUser,
    panel: &Panel,
    grid: &ExaminationGrid,
    trajectory: &[StepRecord],
    null_penalty: f64,
) -> f64 {
    let nulls = trajectory.iter().filter(|r| r.action.is_null()).count();
    expected_panel_reward(user, panel, grid) - null_penalty * nulls as f64
}

/// Purchase probability of the panel as a whole.
pub fn expected_panel_reward(user: &SyntheticUser, panel: &Panel, grid: &ExaminationGrid) -> f64 {
    let total: f64 = slot_propensities(user, panel, grid).iter().map(|(_, q)| q).sum();
    total / (1.0 + total)
}

/// Credits each placement with its expected reward instead of a sampled
/// purchase. Step rewards then sum to [`expected_episode_reward`].
pub fn assign_expected_rewards(
    mut trajectory: Vec<StepRecord>,
    user: &SyntheticUser,
    panel: &Panel,
    grid: &ExaminationGrid,
    rewards: &RewardSpec,
    spec: &PanelSpec,
) -> Vec<StepRecord> {
    let (_, slots) = feedback_distribution(user, panel, grid);
    for record in &mut trajectory {
        record.reward = match record.action {
            SlotAction::Null => -rewards.null_penalty,
            SlotAction::Slot { row, col } => {
                let p = slots
                    .iter()
                    .find(|(s, _)| *s == (row, col))
                    .map_or(0.0, |(_, p)| *p);
                rewards.non_purchase_reward + (rewards.purchase_reward - rewards.non_purchase_reward) * p
            }
        };
        record.terminal = is_terminal(&record.next_state, spec);
    }
    trajectory
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    dim: usize,
    items: Vec<Item>,
}

fn gaussian_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    let scale = 1.0 / (dim as f64).sqrt();
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect()
}

impl Catalog {
    pub fn new(items: Vec<Item>) -> Result<Self> {
        let list = RankingList::new(items)?;
        Ok(Self {
            dim: list.dim(),
            items: list.items().to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn to_archive(&self, seed: u64) -> TensorArchive {
        TensorArchive::new(
            seed,
            serde_json::json!({ "kind": "catalog" }),
            vec![
                NamedTensor {
                    name: "ids".into(),
                    shape: vec![self.items.len()],
                    data: self.items.iter().map(|i| i.id as f64).collect(),
                },
                NamedTensor {
                    name: "embeddings".into(),
                    shape: vec![self.items.len(), self.dim],
                    data: self.items.iter().flat_map(|i| i.embedding.iter().copied()).collect(),
                },
            ],
        )
    }

    pub fn from_archive(archive: &TensorArchive) -> Result<Self> {
        let (ids, rows) = id_and_rows(archive, "embeddings")?;
        Self::new(ids.into_iter().zip(rows).map(|(id, e)| Item::new(id, e)).collect())
    }

    pub fn save(&self, dir: &Path, stem: &str, seed: u64) -> Result<()> {
        self.to_archive(seed).save(dir, stem).map(|_| ())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        Self::from_archive(&TensorArchive::load(dir, stem)?)
    }
}

fn id_and_rows(archive: &TensorArchive, name: &str) -> Result<(Vec<u64>, Vec<Vec<f64>>)> {
    let missing = |n: &str| Error::Checkpoint(format!("missing tensor `{n}`"));
    let ids = archive.get("ids").ok_or_else(|| missing("ids"))?;
    let rows = archive.get(name).ok_or_else(|| missing(name))?;
    if rows.shape.len() != 2 || rows.shape[0] != ids.data.len() {
        return Err(Error::Shape(format!("`{name}` shape {:?} does not match ids", rows.shape)));
    }
    let dim = rows.shape[1];
    Ok((
        ids.data.iter().map(|&v| v as u64).collect(),
        rows.data.chunks(dim.max(1)).map(<[f64]>::to_vec).collect(),
    ))
}

pub fn save_users(users: &[SyntheticUser], dir: &Path, stem: &str, seed: u64) -> Result<()> {
    let dim = users.first().map_or(0, |u| u.preference.len());
    TensorArchive::new(
        seed,
        serde_json::json!({ "kind": "users" }),
        vec![
            NamedTensor {
                name: "ids".into(),
                shape: vec![users.len()],
                data: users.iter().map(|u| u.id as f64).collect(),
            },
            NamedTensor {
                name: "preferences".into(),
                shape: vec![users.len(), dim],
                data: users.iter().flat_map(|u| u.preference.iter().copied()).collect(),
            },
        ],
    )
    .save(dir, stem)
    .map(|_| ())
}

pub fn load_users(dir: &Path, stem: &str) -> Result<Vec<SyntheticUser>> {
    let archive = TensorArchive::load(dir, stem)?;
    let (ids, rows) = id_and_rows(&archive, "preferences")?;
    Ok(ids
        .into_iter()
        .zip(rows)
        .map(|(id, preference)| SyntheticUser { id, preference })
        .collect())
}

/// I.i.d. `N(0, 1/d)` item embeddings with ids `0..catalog_size`.
pub fn generate_catalog<R: Rng + ?Sized>(config: &SimulatorConfig, rng: &mut R) -> Catalog {
    let items = (0..config.catalog_size as u64)
        .map(|id| Item::new(id, gaussian_vector(config.dim, rng)))
        .collect();
    Catalog {
        dim: config.dim,
        items,
    }
}

pub fn generate_user<R: Rng + ?Sized>(config: &SimulatorConfig, id: u64, rng: &mut R) -> SyntheticUser {
    SyntheticUser {
        id,
        preference: gaussian_vector(config.dim, rng),
    }
}

/// Top `k` catalog items by `u . e(i) + N(0, noise^2)`, best first.
pub fn initial_ranking<R: Rng + ?Sized>(
    user: &SyntheticUser,
    catalog: &Catalog,
    k: usize,
    noise: f64,
    rng: &mut R,
) -> Result<RankingList> {
    if k == 0 {
        return Err(Error::config("sim.list_len", "must be at least 1"));
    }
    if k > catalog.len() {
        return Err(Error::config(
            "sim.list_len",
            format!("{k} exceeds the catalog size {}", catalog.len()),
        ));
    }
    let mut scored: Vec<(f64, &Item)> = catalog
        .items()
        .iter()
        .map(|item| {
            let eps: f64 = rng.sample(StandardNormal);
            (affinity(user, item) + noise * eps, item)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.id.cmp(&b.1.id)));
    RankingList::new(scored.into_iter().take(k).map(|(_, i)| i.clone()).collect())
}

/// Whether each list item is among the `top` items of the list by true affinity.
pub fn top_by_affinity(user: &SyntheticUser, list: &RankingList, top: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..list.len()).collect();
    let aff: Vec<f64> = list.items().iter().map(|i| affinity(user, i)).collect();
    order.sort_by(|&a, &b| aff[b].total_cmp(&aff[a]).then(a.cmp(&b)));
    let mut labels = vec![false; list.len()];
    for &i in order.iter().take(top) {
        labels[i] = true;
    }
    labels
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    /// One sampled purchase per panel.
    Sampled,
    /// Each placement is credited with its purchase probability.
    Expected,
}

/// A request stream over a fixed catalog with fresh users per episode.
#[derive(Debug, Clone)]
pub struct SimEnvironment {
    catalog: Arc<Catalog>,
    grid: ExaminationGrid,
    config: SimulatorConfig,
    spec: PanelSpec,
    rewards: RewardSpec,
    mode: FeedbackMode,
    fixed: Option<(SyntheticUser, Arc<RankingList>)>,
    current: Option<SyntheticUser>,
    next_user_id: u64,
    rng: ChaCha8Rng,
}

impl SimEnvironment {
    pub fn new(
        catalog: Arc<Catalog>,
        config: SimulatorConfig,
        spec: PanelSpec,
        mode: FeedbackMode,
        stream_seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if catalog.dim() != config.dim {
            return Err(Error::config("sim.dim", "does not match the catalog"));
        }
        let grid = examination_weights(spec.rows, spec.cols, config.row_decay, config.middle_bias)?;
        Ok(Self {
            catalog,
            grid,
            config,
            spec,
            rewards: RewardSpec::for_panel(&spec),
            mode,
            fixed: None,
            current: None,
            next_user_id: 0,
            rng: ChaCha8Rng::seed_from_u64(stream_seed),
        })
    }

    /// Serve the same user and list on every episode.
    pub fn with_fixed_request(mut self, user: SyntheticUser, list: Arc<RankingList>) -> Self {
        self.fixed = Some((user, list));
        self
    }

    pub fn grid(&self) -> &ExaminationGrid {
        &self.grid
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn current_user(&self) -> Option<&SyntheticUser> {
        self.current.as_ref()
    }

    /// Draws a fresh user and the upstream list for them.
    pub fn sample_request(&mut self) -> Result<(SyntheticUser, Arc<RankingList>)> {
        if let Some((user, list)) = &self.fixed {
            return Ok((user.clone(), Arc::clone(list)));
        }
        let user = generate_user(&self.config, self.next_user_id, &mut self.rng);
        self.next_user_id += 1;
        let list = initial_ranking(
            &user,
            &self.catalog,
            self.config.list_len,
            self.config.rank_noise,
            &mut self.rng,
        )?;
        Ok((user, Arc::new(list)))
    }
}

impl Environment for SimEnvironment {
    fn next_request(&mut self) -> Result<Arc<RankingList>> {
        let (user, list) = self.sample_request()?;
        self.current = Some(user);
        Ok(list)
    }

    fn feedback(&mut self, panel: &Panel, trajectory: Vec<StepRecord>) -> Result<Vec<StepRecord>> {
        let user = self
            .current
            .as_ref()
            .ok_or_else(|| Error::InconsistentFeedback("feedback requested before any request".into()))?;
        match self.mode {
            FeedbackMode::Sampled => {
                let purchased = sample_feedback(user, panel, &self.grid, &mut self.rng);
                assign_rewards(trajectory, purchased, &self.rewards, &self.spec)
            }
            FeedbackMode::Expected => Ok(assign_expected_rewards(
                trajectory,
                user,
                panel,
                &self.grid,
                &self.rewards,
                &self.spec,
            )),
        }
    }
}
