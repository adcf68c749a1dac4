//! Action selection, bootstrap targets and the squared TD loss.

use rand::Rng;

use super::qnet::{QNetwork, TargetNetwork};
use crate::env::{legal_actions, EnvState, PanelSpec, SlotAction, StepRecord};
use crate::error::{Error, Result};
use crate::nn::Optimizer;

/// Best legal action by Q-value; ties go to the lowest action code.
pub fn argmax_legal(q: &[f64], state: &EnvState, spec: &PanelSpec) -> Option<(SlotAction, f64)> {
    let mut best: Option<(SlotAction, f64)> = None;
    for a in legal_actions(state, spec) {
        let v = q[a.encode(spec)];
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((a, v));
        }
    }
    best
}

pub fn greedy_action(net: &QNetwork, state: &EnvState, spec: &PanelSpec) -> Result<SlotAction> {
    let q = net.q_values(state)?;
    argmax_legal(&q, state, spec)
        .map(|(a, _)| a)
        .ok_or(Error::EmptyInput("legal action set"))
}

/// Epsilon-greedy over the legal actions only.
pub fn select_action<R: Rng + ?Sized>(
    net: &QNetwork,
    state: &EnvState,
    spec: &PanelSpec,
    epsilon: f64,
    rng: &mut R,
) -> Result<SlotAction> {
    let explore = rng.random::<f64>() < epsilon;
    if explore {
        let legal = legal_actions(state, spec);
        if legal.is_empty() {
            return Err(Error::EmptyInput("legal action set"));
        }
        Ok(legal[rng.random_range(0..legal.len())])
    } else {
        greedy_action(net, state, spec)
    }
}

/// `y = r` on terminal transitions, else `r + gamma * max_{a' in A(s')} Q(s', a'; target)`.
pub fn td_targets(
    batch: &[StepRecord],
    target: &TargetNetwork,
    gamma: f64,
    spec: &PanelSpec,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("TD batch"));
    }
    batch
        .iter()
        .map(|record| {
            if record.terminal {
                return Ok(record.reward);
            }
            let q = target.q_values(&record.next_state)?;
            let (_, best) = argmax_legal(&q, &record.next_state, spec)
                .ok_or(Error::EmptyInput("legal action set"))?;
            Ok(record.reward + gamma * best)
        })
        .collect()
}

/// Mean squared TD error over `batch`; accumulates its gradient into `net`
/// without updating any parameter.
pub fn loss_and_backward(
    net: &mut QNetwork,
    batch: &[StepRecord],
    targets: &[f64],
) -> Result<f64> {
    if batch.len() != targets.len() || batch.is_empty() {
        return Err(Error::Shape(format!(
            "{} records for {} targets",
            batch.len(),
            targets.len()
        )));
    }
    let spec = *net.panel();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut dq = vec![0.0; spec.num_actions()];
    for (record, &y) in batch.iter().zip(targets) {
        let (out, cache) = net.forward(&record.state)?;
        let a = record.action.encode(&spec);
        let err = out.q[a] - y;
        loss += err * err * scale;
        dq.iter_mut().for_each(|g| *g = 0.0);
        dq[a] = 2.0 * err * scale;
        net.backward(&cache, &dq)?;
    }
    Ok(loss)
}

/// One gradient update on a fixed batch; returns the pre-update loss.
pub fn fit_batch(
    net: &mut QNetwork,
    optimizer: &mut Optimizer,
    batch: &[StepRecord],
    targets: &[f64],
) -> Result<f64> {
    use crate::nn::Parameterized;
    net.zero_grad();
    let loss = loss_and_backward(net, batch, targets)?;
    if !loss.is_finite() {
        net.zero_grad();
        return Err(Error::Numeric(format!(
            "TD loss is {loss} (batch of {}, targets {:?})",
            batch.len(),
            &targets[..targets.len().min(4)]
        )));
    }
    optimizer.step(net)?;
    Ok(loss)
}

/// Samples a batch, builds frozen targets and applies one optimizer step.
pub fn train_step<R: Rng + ?Sized>(
    net: &mut QNetwork,
    target: &TargetNetwork,
    memory: &super::ReplayMemory,
    optimizer: &mut Optimizer,
    batch_size: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<f64> {
    let batch = memory.sample(batch_size, rng)?;
    let spec = *net.panel();
    let targets = td_targets(&batch, target, gamma, &spec)?;
    fit_batch(net, optimizer, &batch, &targets)
}
