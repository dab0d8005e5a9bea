//! Fixed-capacity ring buffer of transitions.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;

/// One stored transition, already carrying its shaped reward.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayEntry {
    pub state: Vec<f64>,
    pub turn: usize,
    pub action: usize,
    pub base_reward: f64,
    /// `r + F`, the reward the Q target is built from.
    pub shaped_reward: f64,
    /// `None` for transitions into the terminal state.
    pub next_state: Option<Vec<f64>>,
    /// Valid actions in the next state; empty when terminal.
    pub next_mask: Vec<bool>,
    /// Ground-truth differential of the patient.
    pub target: Arc<[f64]>,
}

impl ReplayEntry {
    pub fn is_terminal(&self) -> bool {
        self.next_state.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<ReplayEntry>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
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

    /// Inserts, overwriting the oldest entry once full.
    pub fn push(&mut self, entry: ReplayEntry) {
        if self.items.len() < self.capacity {
            self.items.push(entry);
        } else {
            self.items[self.cursor] = entry;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Indices of a uniform batch drawn without replacement.
    pub fn sample_indices<R: Rng>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        let n = batch.min(self.items.len());
        sample(rng, self.items.len(), n).into_vec()
    }

    pub fn sample<R: Rng>(&self, batch: usize, rng: &mut R) -> Vec<&ReplayEntry> {
        self.sample_indices(batch, rng).into_iter().map(|i| &self.items[i]).collect()
    }

    pub fn get(&self, index: usize) -> Option<&ReplayEntry> {
        self.items.get(index)
    }
}
