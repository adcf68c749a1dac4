//! Panel MDP mechanics.
//!
//! A state is `(list, t, history)`. At step `t` the candidate ranked `t + 1`
//! is either placed into an empty slot or discarded with [`SlotAction::Null`].
//! Slots are 1-based `(row, col)`; time steps are 0-based.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: u64,
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl Item {
    pub fn new(id: u64, embedding: Vec<f64>) -> Self {
        Self {
            id,
            embedding,
            metadata: BTreeMap::new(),
        }
    }
}

/// Candidates in upstream rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingList {
    items: Vec<Item>,
}

impl RankingList {
    pub fn new(items: Vec<Item>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyInput("ranking list"));
        }
        let dim = items[0].embedding.len();
        let mut seen = std::collections::HashSet::with_capacity(items.len());
        for item in &items {
            if item.embedding.len() != dim {
                return Err(Error::Shape(format!(
                    "item {} has embedding dim {}, expected {dim}",
                    item.id,
                    item.embedding.len()
                )));
            }
            if !seen.insert(item.id) {
                return Err(Error::InvalidPlacement(format!(
                    "duplicate item id {} in ranking list",
                    item.id
                )));
            }
        }
        Ok(Self { items })
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

    pub fn dim(&self) -> usize {
        self.items[0].embedding.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelSpec {
    pub rows: usize,
    pub cols: usize,
    pub allow_null: bool,
    /// Penalty `xi` for discarding a candidate. Ignored when `allow_null` is false.
    pub null_penalty: f64,
}

impl PanelSpec {
    pub fn new(rows: usize, cols: usize, allow_null: bool, null_penalty: f64) -> Result<Self> {
        let spec = Self {
            rows,
            cols,
            allow_null,
            null_penalty,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 {
            return Err(Error::config("panel.rows", "must be positive"));
        }
        if self.cols == 0 {
            return Err(Error::config("panel.cols", "must be positive"));
        }
        if !(self.null_penalty >= 0.0) || !self.null_penalty.is_finite() {
            return Err(Error::config(
                "panel.null_penalty",
                "must be a finite nonnegative number",
            ));
        }
        Ok(())
    }

    pub fn slots(&self) -> usize {
        self.rows * self.cols
    }

    /// Size of the fixed action set: every slot plus `Null`.
    ///
    /// The network always carries a `Null` output, even for specs with
    /// `allow_null == false`; legality masking removes it there.
    pub fn num_actions(&self) -> usize {
        self.slots() + 1
    }

    /// Integer code of the `Null` action.
    pub fn null_code(&self) -> usize {
        self.slots()
    }

    pub fn effective_null_penalty(&self) -> f64 {
        if self.allow_null {
            self.null_penalty
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SlotAction {
    Slot { row: usize, col: usize },
    Null,
}

impl SlotAction {
    pub fn slot(row: usize, col: usize) -> Self {
        SlotAction::Slot { row, col }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, SlotAction::Null)
    }

    /// Row-major slot index; `Null` maps to `rows * cols`.
    pub fn encode(&self, spec: &PanelSpec) -> usize {
        match *self {
            SlotAction::Slot { row, col } => (row - 1) * spec.cols + (col - 1),
            SlotAction::Null => spec.null_code(),
        }
    }

    pub fn decode(code: usize, spec: &PanelSpec) -> Result<Self> {
        if code == spec.null_code() {
            Ok(SlotAction::Null)
        } else if code < spec.slots() {
            Ok(SlotAction::Slot {
                row: code / spec.cols + 1,
                col: code % spec.cols + 1,
            })
        } else {
            Err(Error::Index {
                index: code,
                rows: spec.num_actions(),
            })
        }
    }

    fn in_bounds(&self, spec: &PanelSpec) -> bool {
        match *self {
            SlotAction::Slot { row, col } => {
                (1..=spec.rows).contains(&row) && (1..=spec.cols).contains(&col)
            }
            SlotAction::Null => true,
        }
    }
}

impl fmt::Display for SlotAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotAction::Slot { row, col } => write!(f, "({row},{col})"),
            SlotAction::Null => f.write_str("NULL"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActionHistory(Vec<SlotAction>);

impl ActionHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_actions(actions: Vec<SlotAction>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for a in &actions {
            if !a.is_null() && !seen.insert(*a) {
                return Err(Error::IllegalAction {
                    action: a.to_string(),
                    t: actions.len(),
                });
            }
        }
        Ok(Self(actions))
    }

    pub fn actions(&self) -> &[SlotAction] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn placed(&self) -> usize {
        self.0.iter().filter(|a| !a.is_null()).count()
    }

    pub fn nulls(&self) -> usize {
        self.0.len() - self.placed()
    }

    fn contains_slot(&self, action: &SlotAction) -> bool {
        !action.is_null() && self.0.contains(action)
    }
}

/// `s_t = [L, t, H_t]`. The list is shared between all states of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub list: Arc<RankingList>,
    pub t: usize,
    pub history: ActionHistory,
}

impl EnvState {
    pub fn initial(list: Arc<RankingList>) -> Self {
        Self {
            list,
            t: 0,
            history: ActionHistory::new(),
        }
    }

    /// The candidate processed at this step, if any remain.
    pub fn current_item(&self) -> Option<&Item> {
        self.list.items().get(self.t)
    }

    /// Occupancy mask over row-major slot codes.
    pub fn occupied(&self, spec: &PanelSpec) -> Vec<bool> {
        let mut mask = vec![false; spec.slots()];
        for a in self.history.actions() {
            if !a.is_null() {
                mask[a.encode(spec)] = true;
            }
        }
        mask
    }

    /// Legality mask over all `rows * cols + 1` action codes.
    pub fn legal_mask(&self, spec: &PanelSpec) -> Vec<bool> {
        let mut mask: Vec<bool> = self.occupied(spec).into_iter().map(|o| !o).collect();
        mask.push(spec.allow_null);
        mask
    }
}

/// `A_t`: all slots not yet chosen, plus `Null` when the spec allows it.
/// Returned in action-code order.
pub fn legal_actions(state: &EnvState, spec: &PanelSpec) -> Vec<SlotAction> {
    let mut out = Vec::with_capacity(spec.num_actions());
    for row in 1..=spec.rows {
        for col in 1..=spec.cols {
            let a = SlotAction::slot(row, col);
            if !state.history.contains_slot(&a) {
                out.push(a);
            }
        }
    }
    if spec.allow_null {
        out.push(SlotAction::Null);
    }
    out
}

pub fn is_legal(state: &EnvState, spec: &PanelSpec, action: SlotAction) -> bool {
    if !action.in_bounds(spec) {
        return false;
    }
    match action {
        SlotAction::Null => spec.allow_null,
        slot => !state.history.contains_slot(&slot),
    }
}

/// Advances one step and appends `action` to the history.
pub fn transition(state: &EnvState, action: SlotAction, spec: &PanelSpec) -> Result<EnvState> {
    if state.t >= state.list.len() {
        return Err(Error::EpisodeExhausted {
            t: state.t,
            len: state.list.len(),
        });
    }
    if !is_legal(state, spec, action) {
        return Err(Error::IllegalAction {
            action: action.to_string(),
            t: state.t,
        });
    }
    let mut actions = state.history.0.clone();
    actions.push(action);
    Ok(EnvState {
        list: Arc::clone(&state.list),
        t: state.t + 1,
        history: ActionHistory(actions),
    })
}

/// True once the list is exhausted or no slot is left.
pub fn is_terminal(state: &EnvState, spec: &PanelSpec) -> bool {
    state.t >= state.list.len() || state.history.placed() >= spec.slots()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    spec: PanelSpec,
    grid: Vec<Option<Item>>,
}

impl Panel {
    pub fn empty(spec: PanelSpec) -> Self {
        Self {
            spec,
            grid: vec![None; spec.slots()],
        }
    }

    pub fn spec(&self) -> &PanelSpec {
        &self.spec
    }

    pub fn get(&self, row: usize, col: usize) -> Option<&Item> {
        if !(1..=self.spec.rows).contains(&row) || !(1..=self.spec.cols).contains(&col) {
            return None;
        }
        self.grid[(row - 1) * self.spec.cols + (col - 1)].as_ref()
    }

    /// Cells in row-major order.
    pub fn cells(&self) -> &[Option<Item>] {
        &self.grid
    }

    /// Filled cells as `((row, col), item)`.
    pub fn filled(&self) -> impl Iterator<Item = ((usize, usize), &Item)> + '_ {
        let cols = self.spec.cols;
        self.grid
            .iter()
            .enumerate()
            .filter_map(move |(i, c)| c.as_ref().map(|item| ((i / cols + 1, i % cols + 1), item)))
    }

    pub fn filled_count(&self) -> usize {
        self.grid.iter().filter(|c| c.is_some()).count()
    }

    pub fn is_full(&self) -> bool {
        self.grid.iter().all(Option::is_some)
    }

    pub fn contains_item(&self, id: u64) -> bool {
        self.grid.iter().flatten().any(|i| i.id == id)
    }
}

/// `P_a <- item`. Consumes and returns the panel.
pub fn apply_placement(mut panel: Panel, action: SlotAction, item: &Item) -> Result<Panel> {
    let (row, col) = match action {
        SlotAction::Null => {
            return Err(Error::InvalidPlacement(
                "the Null action does not place an item".into(),
            ))
        }
        SlotAction::Slot { row, col } => (row, col),
    };
    if !action.in_bounds(&panel.spec) {
        return Err(Error::InvalidPlacement(format!(
            "slot {action} outside a {}x{} panel",
            panel.spec.rows, panel.spec.cols
        )));
    }
    if panel.contains_item(item.id) {
        return Err(Error::InvalidPlacement(format!(
            "item {} is already on the panel",
            item.id
        )));
    }
    let cell = &mut panel.grid[action.encode(&panel.spec)];
    if cell.is_some() {
        return Err(Error::SlotConflict { row, col });
    }
    *cell = Some(item.clone());
    Ok(panel)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub state: EnvState,
    pub action: SlotAction,
    pub reward: f64,
    pub next_state: EnvState,
    pub terminal: bool,
}

impl StepRecord {
    /// Id of the candidate this step acted on.
    pub fn item_id(&self) -> u64 {
        self.state.list.items()[self.state.t].id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub purchase_reward: f64,
    pub non_purchase_reward: f64,
    pub null_penalty: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            purchase_reward: 1.0,
            non_purchase_reward: 0.0,
            null_penalty: 0.1,
        }
    }
}

impl RewardSpec {
    pub fn for_panel(spec: &PanelSpec) -> Self {
        Self {
            null_penalty: spec.effective_null_penalty(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.purchase_reward > self.non_purchase_reward) {
            return Err(Error::config(
                "rewards.purchase_reward",
                "must exceed non_purchase_reward",
            ));
        }
        if !(self.null_penalty >= 0.0) {
            return Err(Error::config("rewards.null_penalty", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Runs the online placement loop with an arbitrary policy.
///
/// Candidates are processed in list order until the list is exhausted or the
/// panel is full. Rewards in the returned trajectory are all zero; see
/// [`assign_rewards`].
pub fn rollout_placement<P>(
    mut policy: P,
    list: Arc<RankingList>,
    spec: &PanelSpec,
) -> Result<(Panel, Vec<StepRecord>)>
where
    P: FnMut(&EnvState) -> Result<SlotAction>,
{
    let mut panel = Panel::empty(*spec);
    let mut state = EnvState::initial(list);
    let mut trajectory = Vec::new();
    while !is_terminal(&state, spec) {
        let action = policy(&state)?;
        let next = transition(&state, action, spec)?;
        if !action.is_null() {
            let item = &state.list.items()[state.t];
            panel = apply_placement(panel, action, item)?;
        }
        let terminal = is_terminal(&next, spec);
        trajectory.push(StepRecord {
            state,
            action,
            reward: 0.0,
            next_state: next.clone(),
            terminal,
        });
        state = next;
    }
    Ok((panel, trajectory))
}

/// Credits full-panel feedback back onto the steps of an episode.
///
/// The step that placed the purchased slot receives `purchase_reward`, other
/// placements `non_purchase_reward`, and every `Null` step `-xi`.
pub fn assign_rewards(
    mut trajectory: Vec<StepRecord>,
    purchased_slot: Option<(usize, usize)>,
    rewards: &RewardSpec,
    spec: &PanelSpec,
) -> Result<Vec<StepRecord>> {
    if let Some((row, col)) = purchased_slot {
        let target = SlotAction::slot(row, col);
        if !trajectory.iter().any(|r| r.action == target) {
            return Err(Error::InconsistentFeedback(format!(
                "purchased slot {target} was never filled in this episode"
            )));
        }
    }
    let purchased = purchased_slot.map(|(row, col)| SlotAction::slot(row, col));
    for record in &mut trajectory {
        record.reward = match record.action {
            SlotAction::Null => -rewards.null_penalty,
            slot if Some(slot) == purchased => rewards.purchase_reward,
            _ => rewards.non_purchase_reward,
        };
        record.terminal = is_terminal(&record.next_state, spec);
    }
    Ok(trajectory)
}

/// One line of the trajectory JSON-lines format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryLine {
    pub t: usize,
    pub action: usize,
    pub reward: f64,
    pub terminal: bool,
    pub item_id: u64,
}

pub fn trajectory_lines(trajectory: &[StepRecord], spec: &PanelSpec) -> Vec<TrajectoryLine> {
    trajectory
        .iter()
        .map(|r| TrajectoryLine {
            t: r.state.t,
            action: r.action.encode(spec),
            reward: r.reward,
            terminal: r.terminal,
            item_id: r.item_id(),
        })
        .collect()
}

pub fn write_trajectory_jsonl<W: Write>(
    mut out: W,
    trajectory: &[StepRecord],
    spec: &PanelSpec,
) -> Result<()> {
    for line in trajectory_lines(trajectory, spec) {
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trajectory_jsonl<R: BufRead>(input: R) -> Result<Vec<TrajectoryLine>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i as u64 + 1,
            reason: e.to_string(),
        })?;
        out.push(parsed);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(k: usize) -> Arc<RankingList> {
        let items = (1..=k as u64).map(|id| Item::new(id, vec![id as f64, 0.0])).collect();
        Arc::new(RankingList::new(items).unwrap())
    }

    fn spec22() -> PanelSpec {
        PanelSpec::new(2, 2, true, 0.1).unwrap()
    }

    fn state_with(history: Vec<SlotAction>, k: usize) -> EnvState {
        EnvState {
            list: list(k),
            t: history.len(),
            history: ActionHistory::from_actions(history).unwrap(),
        }
    }

    #[test]
    fn initial_action_space_is_full() {
        let s = EnvState::initial(list(5));
        let legal = legal_actions(&s, &spec22());
        assert_eq!(
            legal,
            vec![
                SlotAction::slot(1, 1),
                SlotAction::slot(1, 2),
                SlotAction::slot(2, 1),
                SlotAction::slot(2, 2),
                SlotAction::Null
            ]
        );
    }

    #[test]
    fn null_survives_and_slots_are_consumed() {
        let s = state_with(vec![SlotAction::slot(1, 1), SlotAction::Null], 5);
        assert_eq!(
            legal_actions(&s, &spec22()),
            vec![
                SlotAction::slot(1, 2),
                SlotAction::slot(2, 1),
                SlotAction::slot(2, 2),
                SlotAction::Null
            ]
        );
        let full = state_with(
            vec![
                SlotAction::slot(1, 1),
                SlotAction::slot(1, 2),
                SlotAction::slot(2, 1),
                SlotAction::slot(2, 2),
            ],
            5,
        );
        assert_eq!(legal_actions(&full, &spec22()), vec![SlotAction::Null]);
        assert!(is_terminal(&full, &spec22()));
    }

    #[test]
    fn transition_appends_history() {
        let s0 = EnvState::initial(list(5));
        let s1 = transition(&s0, SlotAction::slot(1, 2), &spec22()).unwrap();
        assert_eq!(s1.t, 1);
        assert_eq!(s1.history.actions(), &[SlotAction::slot(1, 2)]);
        assert!(Arc::ptr_eq(&s0.list, &s1.list));

        let s3 = state_with(
            vec![SlotAction::slot(1, 1), SlotAction::Null, SlotAction::slot(2, 2)],
            5,
        );
        let s4 = transition(&s3, SlotAction::Null, &spec22()).unwrap();
        assert_eq!(s4.t, 4);
        assert_eq!(s4.history.actions().last(), Some(&SlotAction::Null));
    }

    #[test]
    fn transition_errors() {
        let s = state_with(vec![SlotAction::slot(1, 1)], 5);
        assert!(matches!(
            transition(&s, SlotAction::slot(1, 1), &spec22()),
            Err(Error::IllegalAction { .. })
        ));
        assert!(matches!(
            transition(&s, SlotAction::slot(3, 1), &spec22()),
            Err(Error::IllegalAction { .. })
        ));
        let no_null = PanelSpec::new(2, 2, false, 0.0).unwrap();
        assert!(transition(&s, SlotAction::Null, &no_null).is_err());

        let done = state_with(vec![SlotAction::Null, SlotAction::slot(1, 1)], 2);
        assert!(matches!(
            transition(&done, SlotAction::slot(1, 2), &spec22()),
            Err(Error::EpisodeExhausted { .. })
        ));
    }

    #[test]
    fn terminal_conditions() {
        let spec = spec22();
        let exhausted = state_with(vec![SlotAction::Null; 3], 3);
        assert!(is_terminal(&exhausted, &spec));
        let mid = state_with(vec![SlotAction::slot(1, 1)], 5);
        assert!(!is_terminal(&mid, &spec));
    }

    #[test]
    fn placement_and_conflicts() {
        let spec = spec22();
        let item7 = Item::new(7, vec![0.0]);
        let panel = apply_placement(Panel::empty(spec), SlotAction::slot(2, 1), &item7).unwrap();
        assert_eq!(panel.get(2, 1).map(|i| i.id), Some(7));
        assert_eq!(panel.filled_count(), 1);

        let item8 = Item::new(8, vec![0.0]);
        let err = apply_placement(panel.clone(), SlotAction::slot(2, 1), &item8).unwrap_err();
        assert!(matches!(err, Error::SlotConflict { row: 2, col: 1 }));
        let err = apply_placement(panel, SlotAction::Null, &item8).unwrap_err();
        assert!(matches!(err, Error::InvalidPlacement(_)));

        let mut p = Panel::empty(spec);
        for code in 0..4 {
            let a = SlotAction::decode(code, &spec).unwrap();
            p = apply_placement(p, a, &Item::new(code as u64, vec![0.0])).unwrap();
        }
        assert!(p.is_full());
    }

    fn scripted(actions: Vec<SlotAction>) -> impl FnMut(&EnvState) -> Result<SlotAction> {
        move |s: &EnvState| Ok(actions[s.t])
    }

    #[test]
    fn rollout_discards_second_item() {
        let actions = vec![
            SlotAction::slot(1, 1),
            SlotAction::Null,
            SlotAction::slot(1, 2),
            SlotAction::slot(2, 1),
            SlotAction::slot(2, 2),
        ];
        let (panel, traj) = rollout_placement(scripted(actions), list(5), &spec22()).unwrap();
        assert_eq!(traj.len(), 5);
        assert!(panel.is_full());
        let ids: Vec<u64> = panel.cells().iter().map(|c| c.as_ref().unwrap().id).collect();
        assert_eq!(ids, vec![1, 3, 4, 5]);
        assert!(!panel.contains_item(2));
        assert!(traj.iter().all(|r| r.reward == 0.0));
        assert!(traj.last().unwrap().terminal);
        assert!(traj[..4].iter().all(|r| !r.terminal));
    }

    #[test]
    fn short_list_leaves_empty_cells() {
        let actions = vec![
            SlotAction::slot(1, 1),
            SlotAction::slot(1, 2),
            SlotAction::slot(2, 1),
        ];
        let (panel, traj) = rollout_placement(scripted(actions), list(3), &spec22()).unwrap();
        assert_eq!(traj.len(), 3);
        assert_eq!(panel.filled_count(), 3);
        assert!(panel.get(2, 2).is_none());
        assert_eq!(traj.last().unwrap().next_state.t, 3);
    }

    #[test]
    fn rollout_rejects_illegal_policy() {
        let actions = vec![SlotAction::slot(1, 1), SlotAction::slot(1, 1)];
        let err = rollout_placement(scripted(actions), list(3), &spec22()).unwrap_err();
        assert!(matches!(err, Error::IllegalAction { t: 1, .. }));
    }

    fn fig1_trajectory() -> Vec<StepRecord> {
        let actions = vec![
            SlotAction::slot(1, 1),
            SlotAction::Null,
            SlotAction::slot(1, 2),
            SlotAction::slot(2, 1),
            SlotAction::slot(2, 2),
        ];
        rollout_placement(scripted(actions), list(5), &spec22()).unwrap().1
    }

    #[test]
    fn rewards_for_purchase_and_null() {
        let spec = spec22();
        let rewards = RewardSpec::for_panel(&spec);
        let traj = assign_rewards(fig1_trajectory(), Some((1, 2)), &rewards, &spec).unwrap();
        let r: Vec<f64> = traj.iter().map(|r| r.reward).collect();
        assert_eq!(r, vec![0.0, -0.1, 1.0, 0.0, 0.0]);
        let total: f64 = r.iter().sum();
        assert!((total - (1.0 - 0.1)).abs() < 1e-12);

        let none = assign_rewards(fig1_trajectory(), None, &rewards, &spec).unwrap();
        let r: Vec<f64> = none.iter().map(|r| r.reward).collect();
        assert_eq!(r, vec![0.0, -0.1, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn rewards_reject_unfilled_purchase() {
        let spec = spec22();
        let actions = vec![SlotAction::slot(1, 1), SlotAction::Null, SlotAction::Null];
        let (_, traj) = rollout_placement(scripted(actions), list(3), &spec).unwrap();
        let err = assign_rewards(traj, Some((2, 2)), &RewardSpec::for_panel(&spec), &spec);
        assert!(matches!(err, Err(Error::InconsistentFeedback(_))));
    }

    #[test]
    fn action_codes_are_row_major() {
        let spec = PanelSpec::new(2, 3, true, 0.1).unwrap();
        assert_eq!(SlotAction::slot(1, 1).encode(&spec), 0);
        assert_eq!(SlotAction::slot(2, 1).encode(&spec), 3);
        assert_eq!(SlotAction::Null.encode(&spec), 6);
        for code in 0..=6 {
            assert_eq!(SlotAction::decode(code, &spec).unwrap().encode(&spec), code);
        }
        assert!(SlotAction::decode(7, &spec).is_err());
    }

    #[test]
    fn jsonl_roundtrip() {
        let spec = spec22();
        let traj = assign_rewards(
            fig1_trajectory(),
            Some((2, 2)),
            &RewardSpec::for_panel(&spec),
            &spec,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trajectory_jsonl(&mut buf, &traj, &spec).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"t":0,"action":0,"reward":0.0,"terminal":false,"item_id":1}"#
        );
        let parsed = read_trajectory_jsonl(&buf[..]).unwrap();
        assert_eq!(parsed, trajectory_lines(&traj, &spec));
        assert_eq!(parsed[1].action, 4);
        assert_eq!(parsed[1].reward, -0.1);
    }

    #[test]
    fn ranking_list_rejects_duplicates_and_empty() {
        assert!(RankingList::new(vec![]).is_err());
        let dup = vec![Item::new(1, vec![0.0]), Item::new(1, vec![1.0])];
        assert!(RankingList::new(dup).is_err());
        let ragged = vec![Item::new(1, vec![0.0]), Item::new(2, vec![1.0, 2.0])];
        assert!(matches!(RankingList::new(ragged), Err(Error::Shape(_))));
    }
}
