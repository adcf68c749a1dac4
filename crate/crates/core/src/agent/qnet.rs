use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvState, PanelSpec};
use crate::error::{Error, Result};
use crate::nn::{
    AttentionBlock, AttentionCache, DenseCache, DenseStack, EmbeddingTable, GruCache, GruCell,
    ParamTensor, Parameterized,
};

/// Everything that fixes the parameter layout of a [`QNetwork`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub panel: PanelSpec,
    /// Item embedding dimension; also the attention model dimension.
    pub item_dim: usize,
    /// Longest list the time embedding covers (`K`).
    pub list_len: usize,
    pub time_dim: usize,
    pub action_dim: usize,
    pub gru_hidden: usize,
    pub attention_heads: usize,
    pub hidden_widths: Vec<usize>,
}

impl NetworkShape {
    pub fn num_actions(&self) -> usize {
        self.panel.num_actions()
    }

    /// Width of the state encoding `concat(e(L), e(t), e(H))`.
    pub fn state_dim(&self) -> usize {
        self.item_dim + self.time_dim + self.gru_hidden
    }

    fn mlp_dims(&self, out: usize) -> Vec<usize> {
        let mut dims = vec![self.state_dim()];
        dims.extend(&self.hidden_widths);
        dims.push(out);
        dims
    }
}

/// Dueling Q-network: `Q(s,a) = V(s) + A(s,a) - mean_a' A(s,a')`.
///
/// The mean runs over the full fixed action set, `Null` included, whatever
/// the current legal set is.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    shape: NetworkShape,
    list_attention: AttentionBlock,
    time_embedding: EmbeddingTable,
    action_embedding: EmbeddingTable,
    history_gru: GruCell,
    advantage: DenseStack,
    value: DenseStack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QOutput {
    pub q: Vec<f64>,
    pub value: f64,
    pub advantage: Vec<f64>,
}

pub struct QCache {
    attention: AttentionCache,
    t: usize,
    history: Vec<usize>,
    gru: GruCache,
    advantage: DenseCache,
    value: DenseCache,
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(shape: NetworkShape, rng: &mut R) -> Result<Self> {
        if shape.list_len == 0 {
            return Err(Error::Shape("time embedding needs at least one step".into()));
        }
        let list_attention = AttentionBlock::new("list_attention", shape.item_dim, shape.attention_heads, rng)?;
        let time_embedding = EmbeddingTable::new("time_embedding", shape.list_len, shape.time_dim, rng)?;
        let action_embedding =
            EmbeddingTable::new("action_embedding", shape.num_actions(), shape.action_dim, rng)?;
        let history_gru = GruCell::new("history_gru", shape.action_dim, shape.gru_hidden, rng)?;
        let advantage = DenseStack::new("advantage", &shape.mlp_dims(shape.num_actions()), rng)?;
        let value = DenseStack::new("value", &shape.mlp_dims(1), rng)?;
        Ok(Self {
            shape,
            list_attention,
            time_embedding,
            action_embedding,
            history_gru,
            advantage,
            value,
        })
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    pub fn panel(&self) -> &PanelSpec {
        &self.shape.panel
    }

    fn history_codes(&self, state: &EnvState) -> Vec<usize> {
        let panel = &self.shape.panel;
        state.history.actions().iter().map(|a| a.encode(panel)).collect()
    }

    fn encode_cached(&self, state: &EnvState) -> Result<(Vec<f64>, AttentionCache, Vec<usize>, GruCache)> {
        if state.list.dim() != self.shape.item_dim {
            return Err(Error::Shape(format!(
                "item embeddings have dim {}, network expects {}",
                state.list.dim(),
                self.shape.item_dim
            )));
        }
        let embeddings: Vec<&[f64]> = state.list.items().iter().map(|i| i.embedding.as_slice()).collect();
        let (list_vec, att_cache) = self.list_attention.forward(&embeddings)?;
        let time_vec = self.time_embedding.lookup(state.t)?;
        let codes = self.history_codes(state);
        let actions = codes
            .iter()
            .map(|&c| self.action_embedding.lookup(c))
            .collect::<Result<Vec<_>>>()?;
        let (hist_vec, gru_cache) = self.history_gru.forward(&actions)?;

        let mut e = Vec::with_capacity(self.shape.state_dim());
        e.extend_from_slice(&list_vec);
        e.extend_from_slice(time_vec);
        e.extend_from_slice(&hist_vec);
        Ok((e, att_cache, codes, gru_cache))
    }

    /// `e(s) = concat(e(L), e(t), e(H_t))`.
    pub fn encode_state(&self, state: &EnvState) -> Result<Vec<f64>> {
        self.encode_cached(state).map(|(e, ..)| e)
    }

    fn combine(&self, advantage: Vec<f64>, value: f64) -> QOutput {
        let mean = advantage.iter().sum::<f64>() / advantage.len() as f64;
        let q = advantage.iter().map(|a| value + a - mean).collect();
        QOutput { q, value, advantage }
    }

    pub fn forward(&self, state: &EnvState) -> Result<(QOutput, QCache)> {
        let (e, attention, history, gru) = self.encode_cached(state)?;
        let (adv, adv_cache) = self.advantage.forward(&e)?;
        let (val, val_cache) = self.value.forward(&e)?;
        let out = self.combine(adv, val[0]);
        Ok((
            out,
            QCache {
                attention,
                t: state.t,
                history,
                gru,
                advantage: adv_cache,
                value: val_cache,
            },
        ))
    }

    pub fn evaluate(&self, state: &EnvState) -> Result<QOutput> {
        let e = self.encode_state(state)?;
        let adv = self.advantage.predict(&e)?;
        let val = self.value.predict(&e)?;
        Ok(self.combine(adv, val[0]))
    }

    /// Q-values for every action code `0..=rows*cols`.
    pub fn q_values(&self, state: &EnvState) -> Result<Vec<f64>> {
        self.evaluate(state).map(|o| o.q)
    }

    /// Accumulates parameter gradients given `d loss / d Q(s, .)`.
    pub fn backward(&mut self, cache: &QCache, dq: &[f64]) -> Result<()> {
        let n = self.shape.num_actions();
        if dq.len() != n {
            return Err(Error::Shape(format!("expected {n} Q gradients, got {}", dq.len())));
        }
        let total: f64 = dq.iter().sum();
        let dadv: Vec<f64> = dq.iter().map(|g| g - total / n as f64).collect();
        let mut de = self.advantage.backward(&cache.advantage, &dadv);
        let dv = self.value.backward(&cache.value, &[total]);
        de.iter_mut().zip(&dv).for_each(|(a, b)| *a += b);

        let (d_list, rest) = de.split_at(self.shape.item_dim);
        let (d_time, d_hist) = rest.split_at(self.shape.time_dim);
        self.list_attention.backward(&cache.attention, d_list);
        self.time_embedding.backward(cache.t, d_time)?;
        let d_actions = self.history_gru.backward(&cache.gru, d_hist);
        for (&code, g) in cache.history.iter().zip(&d_actions) {
            self.action_embedding.backward(code, g)?;
        }
        Ok(())
    }

    /// Copies parameter values from `other` bit for bit.
    pub fn copy_params_from(&mut self, other: &QNetwork) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape("networks have different structures".into()));
        }
        let mut values: Vec<Vec<f64>> = Vec::new();
        other.visit(&mut |p| values.push(p.value.clone()));
        let mut i = 0;
        self.visit_mut(&mut |p| {
            p.value.copy_from_slice(&values[i]);
            i += 1;
        });
        Ok(())
    }
}

impl Parameterized for QNetwork {
    fn visit(&self, f: &mut dyn FnMut(&ParamTensor)) {
        self.list_attention.visit(f);
        self.time_embedding.visit(f);
        self.action_embedding.visit(f);
        self.history_gru.visit(f);
        self.advantage.visit(f);
        self.value.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor)) {
        self.list_attention.visit_mut(f);
        self.time_embedding.visit_mut(f);
        self.action_embedding.visit_mut(f);
        self.history_gru.visit_mut(f);
        self.advantage.visit_mut(f);
        self.value.visit_mut(f);
    }
}

/// The frozen copy used for bootstrap targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetNetwork(QNetwork);

impl TargetNetwork {
    pub fn from_online(online: &QNetwork) -> Self {
        Self(online.clone())
    }

    pub fn network(&self) -> &QNetwork {
        &self.0
    }

    pub(crate) fn network_mut(&mut self) -> &mut QNetwork {
        &mut self.0
    }

    pub fn q_values(&self, state: &EnvState) -> Result<Vec<f64>> {
        self.0.q_values(state)
    }
}

/// Makes the target a bitwise copy of the online network.
pub fn sync_target(online: &QNetwork, target: &mut TargetNetwork) -> Result<()> {
    target.0.copy_params_from(online)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{transition, Item, RankingList, SlotAction};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn shape(rows: usize, cols: usize, allow_null: bool, k: usize) -> NetworkShape {
        NetworkShape {
            panel: PanelSpec::new(rows, cols, allow_null, 0.1).unwrap(),
            item_dim: 4,
            list_len: k,
            time_dim: 3,
            action_dim: 2,
            gru_hidden: 5,
            attention_heads: 2,
            hidden_widths: vec![6],
        }
    }

    fn list(k: usize, dim: usize, rng: &mut ChaCha8Rng) -> Arc<RankingList> {
        let items = (0..k as u64)
            .map(|id| Item::new(id, (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        Arc::new(RankingList::new(items).unwrap())
    }

    #[test]
    fn encoding_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = shape(2, 2, true, 4);
        let net = QNetwork::new(s.clone(), &mut rng).unwrap();
        let s0 = EnvState::initial(list(4, 4, &mut rng));
        let e0 = net.encode_state(&s0).unwrap();
        assert_eq!(e0.len(), 4 + 3 + 5);
        assert_eq!(&e0[7..], &[0.0; 5]);

        // Same list and history, different t: only the time segment moves.
        let mut s1 = s0.clone();
        s1.t = 2;
        let e1 = net.encode_state(&s1).unwrap();
        assert_eq!(&e0[..4], &e1[..4]);
        assert_eq!(&e0[7..], &e1[7..]);
        assert_ne!(&e0[4..7], &e1[4..7]);
        assert_eq!(net.q_values(&s0).unwrap().len(), 5);
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = QNetwork::new(shape(1, 2, true, 3), &mut rng).unwrap();
        let s = EnvState::initial(list(3, 5, &mut rng));
        assert!(matches!(net.q_values(&s), Err(Error::Shape(_))));
    }

    #[test]
    fn advantage_is_centered_over_all_actions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = shape(2, 3, true, 6);
        let net = QNetwork::new(s.clone(), &mut rng).unwrap();
        let mut state = EnvState::initial(list(6, 4, &mut rng));
        for a in [SlotAction::slot(1, 2), SlotAction::Null, SlotAction::slot(2, 3)] {
            let out = net.evaluate(&state).unwrap();
            let centered: f64 = out.q.iter().map(|q| q - out.value).sum();
            assert!(centered.abs() < 1e-9);
            state = transition(&state, a, &s.panel).unwrap();
        }
    }

    #[test]
    fn constant_advantage_gives_q_equal_v() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = QNetwork::new(shape(2, 2, true, 4), &mut rng).unwrap();
        net.advantage.visit_mut(&mut |p| {
            if p.name() == "advantage.1.weight" {
                p.value.iter_mut().for_each(|v| *v = 0.0);
            } else if p.name() == "advantage.1.bias" {
                p.value.iter_mut().for_each(|v| *v = 0.37);
            }
        });
        let state = EnvState::initial(list(4, 4, &mut rng));
        let out = net.evaluate(&state).unwrap();
        for q in &out.q {
            assert!((q - out.value).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_count_matches_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = NetworkShape {
            panel: PanelSpec::new(2, 3, true, 0.1).unwrap(),
            item_dim: 16,
            list_len: 16,
            time_dim: 8,
            action_dim: 8,
            gru_hidden: 16,
            attention_heads: 2,
            hidden_widths: vec![64, 32],
        };
        let net = QNetwork::new(s, &mut rng).unwrap();
        let (d, k, a, de, h, e) = (16, 16, 7, 8, 16, 16 + 8 + 16);
        let attention = 4 * d * d + d;
        let time = k * 8;
        let action = a * de;
        let gru = 3 * (h * de + h * h + h);
        let mlp = |out: usize| (e * 64 + 64) + (64 * 32 + 32) + (32 * out + out);
        assert_eq!(net.num_params(), attention + time + action + gru + mlp(a) + mlp(1));
    }

    #[test]
    fn sync_copies_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = shape(2, 2, true, 4);
        let online = QNetwork::new(s.clone(), &mut rng).unwrap();
        let other = QNetwork::new(s, &mut rng).unwrap();
        let mut target = TargetNetwork::from_online(&other);
        let state = EnvState::initial(list(4, 4, &mut rng));
        assert_ne!(target.q_values(&state).unwrap(), online.q_values(&state).unwrap());
        sync_target(&online, &mut target).unwrap();
        for _ in 0..100 {
            let st = EnvState::initial(list(4, 4, &mut rng));
            let a: Vec<u64> = online.q_values(&st).unwrap().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = target.q_values(&st).unwrap().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
        let wrong = QNetwork::new(shape(1, 2, true, 4), &mut rng).unwrap();
        assert!(matches!(sync_target(&wrong, &mut target), Err(Error::Shape(_))));
    }
}
