#![allow(dead_code)]

use std::sync::Arc;

use panel_mdp_core::env::{
    is_terminal, legal_actions, rollout_placement, EnvState, Item, PanelSpec, RankingList, SlotAction,
};
use rand::Rng;

pub fn random_list<R: Rng>(k: usize, dim: usize, rng: &mut R) -> Arc<RankingList> {
    let items = (0..k as u64)
        .map(|id| Item::new(id * 7 + 3, (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    Arc::new(RankingList::new(items).unwrap())
}

pub fn random_spec<R: Rng>(rng: &mut R) -> PanelSpec {
    PanelSpec::new(
        rng.random_range(1..=3),
        rng.random_range(1..=3),
        rng.random_bool(0.5),
        rng.random_range(0.0..0.5),
    )
    .unwrap()
}

/// Plays one uniformly random legal episode and returns every violated
/// environment invariant.
pub fn episode_violations<R: Rng>(spec: &PanelSpec, list: Arc<RankingList>, rng: &mut R) -> Vec<String> {
    let mut violations = Vec::new();
    let mut prev_legal: Option<(Vec<SlotAction>, SlotAction)> = None;
    let result = rollout_placement(
        |s: &EnvState| {
            let legal = legal_actions(s, spec);
            if s.history.len() != s.t {
                violations.push(format!("|H_t| = {} at t = {}", s.history.len(), s.t));
            }
            if let Some((before, chosen)) = &prev_legal {
                let expected: Vec<SlotAction> = before
                    .iter()
                    .copied()
                    .filter(|a| a.is_null() || a != chosen)
                    .collect();
                if legal != expected {
                    violations.push(format!("action space after {chosen}: {legal:?} != {expected:?}"));
                }
            }
            if spec.allow_null != legal.contains(&SlotAction::Null) {
                violations.push("Null availability does not follow allow_null".into());
            }
            let a = legal[rng.random_range(0..legal.len())];
            prev_legal = Some((legal, a));
            Ok(a)
        },
        Arc::clone(&list),
        spec,
    );
    let (panel, trajectory) = match result {
        Ok(v) => v,
        Err(e) => {
            violations.push(format!("rollout failed: {e}"));
            return violations;
        }
    };
    let mut ids: Vec<u64> = panel.filled().map(|(_, i)| i.id).collect();
    let n = ids.len();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != n {
        violations.push("an item occupies two slots".into());
    }
    let placed: Vec<SlotAction> = trajectory.iter().map(|r| r.action).filter(|a| !a.is_null()).collect();
    let mut distinct = placed.clone();
    distinct.sort_by_key(|a| a.encode(spec));
    distinct.dedup();
    if distinct.len() != placed.len() || placed.len() != panel.filled_count() {
        violations.push("slot used twice".into());
    }
    let last = match trajectory.last() {
        Some(r) => &r.next_state,
        None => {
            violations.push("empty trajectory".into());
            return violations;
        }
    };
    let should_end = last.t >= list.len() || panel.is_full();
    if !is_terminal(last, spec) || !should_end {
        violations.push("episode did not end exactly at exhaustion or a full panel".into());
    }
    for r in &trajectory[..trajectory.len() - 1] {
        if r.terminal {
            violations.push(format!("early terminal flag at t = {}", r.state.t));
        }
    }
    if !trajectory.last().unwrap().terminal {
        violations.push("missing terminal flag".into());
    }
    violations
}
