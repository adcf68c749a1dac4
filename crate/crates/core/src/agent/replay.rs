use std::collections::VecDeque;

use rand::Rng;

use crate::env::StepRecord;
use crate::error::{Error, Result};

/// Bounded transition store with oldest-first eviction.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    records: VecDeque<StepRecord>,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            records: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn store(&mut self, record: StepRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    pub fn iter(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter()
    }

    /// Uniform draw with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<StepRecord>> {
        if self.records.len() < batch_size || self.records.is_empty() {
            return Err(Error::InsufficientData {
                need: batch_size.max(1),
                have: self.records.len(),
            });
        }
        Ok((0..batch_size)
            .map(|_| self.records[rng.random_range(0..self.records.len())].clone())
            .collect())
    }

    /// Like [`sample`](Self::sample) but returns indices into the memory.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.records.len() < batch_size || self.records.is_empty() {
            return Err(Error::InsufficientData {
                need: batch_size.max(1),
                have: self.records.len(),
            });
        }
        Ok((0..batch_size).map(|_| rng.random_range(0..self.records.len())).collect())
    }

    pub fn get(&self, index: usize) -> Option<&StepRecord> {
        self.records.get(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{transition, EnvState, Item, PanelSpec, RankingList, SlotAction};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn record(reward: f64) -> StepRecord {
        let spec = PanelSpec::new(1, 1, true, 0.1).unwrap();
        let list = Arc::new(RankingList::new(vec![Item::new(0, vec![0.0])]).unwrap());
        let state = EnvState::initial(list);
        let next_state = transition(&state, SlotAction::slot(1, 1), &spec).unwrap();
        StepRecord {
            state,
            action: SlotAction::slot(1, 1),
            reward,
            next_state,
            terminal: true,
        }
    }

    #[test]
    fn evicts_oldest_first() {
        let mut m = ReplayMemory::new(2);
        for r in [1.0, 2.0, 3.0] {
            m.store(record(r));
        }
        let rewards: Vec<f64> = m.iter().map(|r| r.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0]);
    }

    #[test]
    fn singleton_and_underfilled() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = ReplayMemory::new(4);
        assert!(matches!(m.sample(1, &mut rng), Err(Error::InsufficientData { .. })));
        m.store(record(7.0));
        let batch = m.sample(1, &mut rng).unwrap();
        assert_eq!(batch[0].reward, 7.0);
        assert!(m.sample(2, &mut rng).is_err());
    }

    #[test]
    fn sampling_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = ReplayMemory::new(10);
        for i in 0..10 {
            m.store(record(i as f64));
        }
        let mut counts = [0usize; 10];
        for _ in 0..1000 {
            for i in m.sample_indices(10, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        // Binomial(10000, 0.1): sd = 30.
        let sd = (10_000.0f64 * 0.1 * 0.9).sqrt();
        for c in counts {
            assert!((c as f64 - 1000.0).abs() < 5.0 * sd, "{counts:?}");
        }
    }
}
