use rand::Rng as _;

use super::Transition;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Fixed-capacity FIFO ring of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<G> {
    capacity: usize,
    items: Vec<Transition<G>>,
    /// Slot the next push overwrites once the ring is full.
    head: usize,
    pushed: u64,
}

impl<G> ReplayBuffer<G> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
            pushed: 0,
        })
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

    /// Total pushes since creation, including evicted ones.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, t: Transition<G>) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
        self.pushed += 1;
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Transition<G>>) {
        for t in ts {
            self.push(t);
        }
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition<G>> {
        let (newer, older) = self.items.split_at(self.head);
        older.iter().chain(newer)
    }

    /// `n` draws with replacement.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Vec<&Transition<G>>> {
        if self.items.is_empty() {
            return Err(Error::Protocol("sampling from an empty replay buffer".into()));
        }
        Ok((0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect())
    }
}
