//! Reference placement policies: the row-major heuristic used to adapt
//! one-dimensional re-rankers to a grid, a uniformly random placement, and an
//! exhaustive oracle for small instances.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{rollout_placement, Panel, PanelSpec, RankingList, SlotAction, StepRecord};
use crate::error::{Error, Result};
use crate::sim::{expected_episode_reward, purchase_propensity, ExaminationGrid, SyntheticUser};

/// Largest number of complete trajectories the oracle will enumerate.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    RowMajor,
    Random,
    #[serde(rename = "oracle")]
    BruteForceOracle,
    #[serde(rename = "learned")]
    LearnedQ,
}

impl PolicyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::RowMajor => "row_major",
            Self::Random => "random",
            Self::BruteForceOracle => "oracle",
            Self::LearnedQ => "learned",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row_major" => Ok(Self::RowMajor),
            "random" => Ok(Self::Random),
            "oracle" => Ok(Self::BruteForceOracle),
            "learned" => Ok(Self::LearnedQ),
            other => Err(Error::config(
                "policy",
                format!("unknown policy `{other}` (expected learned, row_major, random or oracle)"),
            )),
        }
    }
}

/// A finished placement: the panel and the (unrewarded) trajectory behind it.
pub type Placement = (Panel, Vec<StepRecord>);

/// Item `k` (0-based) goes to the `k`-th slot in row-major order.
pub fn row_major_policy(list: Arc<RankingList>, spec: &PanelSpec) -> Result<Placement> {
    rollout_placement(|s| SlotAction::decode(s.t, spec), list, spec)
}

/// Chooses `min(K, M*N)` items uniformly at random and assigns them to a
/// uniformly random set of distinct slots. Skipped items get `Null`.
///
/// Without `Null` every item is placed until the panel is full, so the chosen
/// set is forced to be the first `min(K, M*N)` items.
pub fn random_policy<R: Rng + ?Sized>(list: Arc<RankingList>, spec: &PanelSpec, rng: &mut R) -> Result<Placement> {
    let k = list.len();
    let n = k.min(spec.slots());
    let mut chosen = vec![false; k];
    if spec.allow_null {
        for i in sample(rng, k, n) {
            chosen[i] = true;
        }
    } else {
        chosen[..n].iter_mut().for_each(|c| *c = true);
    }
    let mut slots: Vec<usize> = (0..spec.slots()).collect();
    slots.shuffle(rng);
    let mut next = slots.into_iter();
    rollout_placement(
        |s| {
            if chosen[s.t] {
                let code = next.next().expect("one slot per chosen item");
                SlotAction::decode(code, spec)
            } else {
                Ok(SlotAction::Null)
            }
        },
        list,
        spec,
    )
}

/// Number of complete trajectories of the placement MDP for a list of `k`
/// candidates.
pub fn enumeration_size(k: usize, spec: &PanelSpec) -> u128 {
    let slots = spec.slots();
    // count[p] = trajectories from the current step with p slots filled
    let mut count = vec![1u128; slots + 1];
    for _ in 0..k {
        let mut next = vec![1u128; slots + 1];
        for p in 0..slots {
            let place = (slots - p) as u128 * count[p + 1];
            let skip = if spec.allow_null { count[p] } else { 0 };
            next[p] = place.saturating_add(skip);
        }
        count = next;
    }
    count[0]
}

/// Maximizer of the expected episode reward found by exhaustive search.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub panel: Panel,
    pub trajectory: Vec<StepRecord>,
    pub expected_reward: f64,
}

const TIE_TOLERANCE: f64 = 1e-12;

struct Search<'a> {
    /// Propensity of candidate `t` in slot `code`.
    q: Vec<Vec<f64>>,
    spec: &'a PanelSpec,
    xi: f64,
    used: Vec<bool>,
    actions: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
}

impl Search<'_> {
    fn run(&mut self, t: usize, placed: usize, q_sum: f64, nulls: usize) {
        if t == self.q.len() || placed == self.spec.slots() {
            let value = q_sum / (1.0 + q_sum) - self.xi * nulls as f64;
            if self.best.as_ref().is_none_or(|(b, _)| value > b + TIE_TOLERANCE) {
                self.best = Some((value, self.actions.clone()));
            }
            return;
        }
        for code in 0..self.spec.slots() {
            if self.used[code] {
                continue;
            }
            self.used[code] = true;
            self.actions.push(code);
            self.run(t + 1, placed + 1, q_sum + self.q[t][code], nulls);
            self.actions.pop();
            self.used[code] = false;
        }
        if self.spec.allow_null {
            self.actions.push(self.spec.null_code());
            self.run(t + 1, placed, q_sum, nulls + 1);
            self.actions.pop();
        }
    }
}

/// Enumerates every legal trajectory and returns one maximizing
/// `Q / (1 + Q) - xi * #Null`. Ties within `1e-12` keep the trajectory whose
/// action-code sequence is lexicographically smallest.
pub fn brute_force_optimal(
    user: &SyntheticUser,
    list: Arc<RankingList>,
    spec: &PanelSpec,
    grid: &ExaminationGrid,
    null_penalty: f64,
    cap: u128,
) -> Result<OracleSolution> {
    if grid.rows() != spec.rows || grid.cols() != spec.cols {
        return Err(Error::Shape(format!(
            "examination grid is {}x{}, panel is {}x{}",
            grid.rows(),
            grid.cols(),
            spec.rows,
            spec.cols
        )));
    }
    let size = enumeration_size(list.len(), spec);
    if size > cap {
        return Err(Error::EnumerationCap { size, cap });
    }
    let xi = if spec.allow_null { null_penalty } else { 0.0 };
    let q = list
        .items()
        .iter()
        .map(|item| {
            (0..spec.slots())
                .map(|code| {
                    let (row, col) = (code / spec.cols + 1, code % spec.cols + 1);
                    purchase_propensity(user, item, (row, col), grid)
                })
                .collect()
        })
        .collect();
    let mut search = Search {
        q,
        spec,
        xi,
        used: vec![false; spec.slots()],
        actions: Vec::new(),
        best: None,
    };
    search.run(0, 0, 0.0, 0);
    let (_, codes) = search.best.expect("at least one trajectory");
    let mut script = codes.into_iter();
    let (panel, trajectory) = rollout_placement(
        |_| SlotAction::decode(script.next().expect("scripted action"), spec),
        list,
        spec,
    )?;
    let expected_reward = expected_episode_reward(user, &panel, grid, &trajectory, xi);
    Ok(OracleSolution {
        panel,
        trajectory,
        expected_reward,
    })
}

/// Per-candidate selection scores of a baseline trajectory, aligned with the
/// processed steps: row-major ranks earlier items higher, random scores are
/// uniform noise, and the oracle scores placed items 1 and skipped items 0.
pub fn selection_scores<R: Rng + ?Sized>(kind: PolicyKind, trajectory: &[StepRecord], rng: &mut R) -> Vec<f64> {
    trajectory
        .iter()
        .map(|r| match kind {
            PolicyKind::RowMajor => -(r.state.t as f64),
            PolicyKind::Random => rng.random(),
            PolicyKind::BruteForceOracle | PolicyKind::LearnedQ => {
                if r.action.is_null() {
                    0.0
                } else {
                    1.0
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Item;
    use crate::sim::examination_weights;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn list(k: usize) -> Arc<RankingList> {
        Arc::new(RankingList::new((0..k as u64).map(|i| Item::new(i + 1, vec![i as f64])).collect()).unwrap())
    }

    fn ids(panel: &Panel) -> Vec<Option<u64>> {
        panel.cells().iter().map(|c| c.as_ref().map(|i| i.id)).collect()
    }

    #[test]
    fn row_major_fills_rows_left_to_right() {
        let spec = PanelSpec::new(2, 3, false, 0.0).unwrap();
        let (panel, traj) = row_major_policy(list(6), &spec).unwrap();
        assert_eq!(ids(&panel), (1..=6).map(Some).collect::<Vec<_>>());
        assert!(traj.iter().all(|r| !r.action.is_null()));

        let small = PanelSpec::new(2, 2, true, 0.1).unwrap();
        let (panel, _) = row_major_policy(list(2), &small).unwrap();
        assert_eq!(ids(&panel), vec![Some(1), Some(2), None, None]);
        assert_eq!(ids(&row_major_policy(list(2), &small).unwrap().0), ids(&panel));
    }

    #[test]
    fn random_policy_is_injective_and_seeded() {
        let spec = PanelSpec::new(2, 3, true, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let (panel, traj) = random_policy(list(10), &spec, &mut rng).unwrap();
            assert!(panel.is_full());
            let mut seen: Vec<u64> = panel.filled().map(|(_, i)| i.id).collect();
            seen.sort();
            seen.dedup();
            assert_eq!(seen.len(), 6);
            assert!(traj.len() <= 10);
        }
        let a = random_policy(list(10), &spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = random_policy(list(10), &spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn enumeration_counts() {
        let no_null = PanelSpec::new(2, 2, false, 0.0).unwrap();
        assert_eq!(enumeration_size(4, &no_null), 24);
        let one = PanelSpec::new(1, 1, true, 0.1).unwrap();
        // place first, or skip then place/skip the second
        assert_eq!(enumeration_size(2, &one), 3);
        let select = PanelSpec::new(2, 3, true, 0.1).unwrap();
        assert!(enumeration_size(16, &select) > DEFAULT_ENUMERATION_CAP);
    }

    #[test]
    fn oracle_refuses_large_instances() {
        let spec = PanelSpec::new(2, 3, true, 0.1).unwrap();
        let grid = examination_weights(2, 3, 0.8, 0.8).unwrap();
        let user = SyntheticUser { id: 0, preference: vec![1.0] };
        let err = brute_force_optimal(&user, list(16), &spec, &grid, 0.1, DEFAULT_ENUMERATION_CAP);
        assert!(matches!(err, Err(Error::EnumerationCap { .. })));
    }

    #[test]
    fn single_slot_placement_beats_skipping() {
        let spec = PanelSpec::new(1, 1, true, 0.1).unwrap();
        let grid = examination_weights(1, 1, 1.0, 1.0).unwrap();
        // sigmoid(ln 9) = 0.9
        let user = SyntheticUser { id: 0, preference: vec![9f64.ln()] };
        let l = Arc::new(RankingList::new(vec![Item::new(1, vec![1.0])]).unwrap());
        let sol = brute_force_optimal(&user, l, &spec, &grid, 0.1, DEFAULT_ENUMERATION_CAP).unwrap();
        assert!((sol.expected_reward - 0.9 / 1.9).abs() < 1e-12);
        assert!((sol.expected_reward - 0.4737).abs() < 1e-4);
        assert_eq!(sol.trajectory[0].action, SlotAction::slot(1, 1));
    }

    #[test]
    fn uniform_grid_ties_break_lexicographically() {
        let spec = PanelSpec::new(2, 2, false, 0.0).unwrap();
        let grid = examination_weights(2, 2, 1.0, 1.0).unwrap();
        let user = SyntheticUser { id: 0, preference: vec![0.3] };
        let sol = brute_force_optimal(&user, list(4), &spec, &grid, 0.0, DEFAULT_ENUMERATION_CAP).unwrap();
        let codes: Vec<usize> = sol.trajectory.iter().map(|r| r.action.encode(&spec)).collect();
        assert_eq!(codes, vec![0, 1, 2, 3]);
    }

    #[test]
    fn best_item_goes_to_a_middle_slot() {
        let spec = PanelSpec::new(2, 3, false, 0.0).unwrap();
        let grid = examination_weights(2, 3, 0.8, 0.8).unwrap();
        let user = SyntheticUser { id: 0, preference: vec![1.0] };
        let items = [0.2, -1.0, 3.0, 0.5, -0.3, 1.1];
        let l = Arc::new(
            RankingList::new(items.iter().enumerate().map(|(i, &v)| Item::new(i as u64, vec![v])).collect()).unwrap(),
        );
        let sol = brute_force_optimal(&user, l, &spec, &grid, 0.0, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(sol.panel.get(1, 2).unwrap().id, 2);
    }

    #[test]
    fn policy_kind_names_roundtrip() {
        for k in [PolicyKind::RowMajor, PolicyKind::Random, PolicyKind::BruteForceOracle, PolicyKind::LearnedQ] {
            assert_eq!(k.as_str().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("greedy".parse::<PolicyKind>().is_err());
    }
}
