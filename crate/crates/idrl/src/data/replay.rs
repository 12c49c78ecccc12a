//! Fixed-capacity FIFO replay buffer with seeded uniform sampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::records::TransitionRecord;

pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<TransitionRecord>,
    next: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1);
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(4096)),
            next: 0,
            pushed: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    /// Ring insertion cursor (checkpoint support).
    pub fn next_slot(&self) -> usize {
        self.next
    }

    /// Restore ring bookkeeping after re-pushing the stored items in their
    /// original vector order.
    pub fn set_ring_state(&mut self, next: usize, pushed: u64) {
        self.next = next;
        self.pushed = pushed;
    }

    pub fn push(&mut self, record: TransitionRecord) {
        self.pushed += 1;
        if self.items.len() < self.capacity {
            self.items.push(record);
        } else {
            self.items[self.next] = record;
            self.next = (self.next + 1) % self.capacity;
        }
    }

    pub fn get(&self, index: usize) -> &TransitionRecord {
        &self.items[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.items.iter()
    }

    /// Uniform with replacement over the live records.
    pub fn sample_indices(&self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        assert!(!self.items.is_empty(), "cannot sample from an empty buffer");
        (0..batch).map(|_| rng.gen_range(0..self.items.len())).collect()
    }

    pub fn sample_cloned(&self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<TransitionRecord> {
        self.sample_indices(batch, rng)
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::records::records_from_trace;
    use crate::delay::DelayedEnv;
    use crate::env::{chain_mdp, Action, TabularEnv};
    use rand::SeedableRng;

    fn some_records(n: usize) -> Vec<TransitionRecord> {
        let env = TabularEnv::new("chain", chain_mdp(4, 0.1), n, 0.95);
        let mut denv = DelayedEnv::new(&env, 1, 0);
        let mut rng = crate::env::rng_from(0);
        while !denv.is_done() {
            use rand::Rng;
            denv.step(&Action::Discrete(rng.gen_range(0..2)), rng.gen())
                .unwrap();
        }
        records_from_trace(denv.trace(), &env, 1, 0, 1, n + 1)
    }

    #[test]
    fn fifo_eviction_at_capacity() {
        let recs = some_records(3);
        let mut buf = ReplayBuffer::new(2);
        for r in recs.iter().cloned() {
            buf.push(r);
        }
        assert_eq!(buf.len(), 2);
        // the oldest record (t = 0) was evicted
        let remaining: Vec<_> = buf.iter().map(|r| r.x.clone()).collect();
        assert!(remaining.contains(&recs[1].x));
        assert!(remaining.contains(&recs[2].x));
        assert!(!remaining.contains(&recs[0].x));
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let recs = some_records(10);
        let mut buf = ReplayBuffer::new(16);
        for r in recs {
            buf.push(r);
        }
        let a = buf.sample_indices(32, &mut ChaCha8Rng::seed_from_u64(5));
        let b = buf.sample_indices(32, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_is_uniform() {
        let recs = some_records(10);
        let mut buf = ReplayBuffer::new(16);
        for r in recs {
            buf.push(r);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000usize;
        let mut counts = vec![0usize; buf.len()];
        for i in buf.sample_indices(n, &mut rng) {
            counts[i] += 1;
        }
        for &c in &counts {
            let f = c as f64 / n as f64;
            assert!((f - 0.1).abs() < 0.005, "frequency {f}");
        }
    }

    #[test]
    fn every_live_record_is_reachable() {
        let recs = some_records(8);
        let mut buf = ReplayBuffer::new(8);
        for r in recs {
            buf.push(r);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seen: std::collections::HashSet<usize> =
            buf.sample_indices(1000, &mut rng).into_iter().collect();
        assert_eq!(seen.len(), buf.len());
    }
}
