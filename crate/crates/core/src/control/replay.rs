use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;

use crate::environment::BinocularObservation;
use crate::error::{Error, Result};
use crate::perception::Percept;

/// Everything recorded about one visited state. Shared between the
/// transition that leaves it and the one that enters it.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub observation: BinocularObservation,
    /// Encodings computed when the state was visited; never re-encoded.
    pub percept: Percept,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Arc<Step>,
    pub action: usize,
    pub reward: f32,
    pub next: Arc<Step>,
    pub terminal: bool,
}

/// Fixed-capacity FIFO; the oldest entry is evicted first.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<T = Transition> {
    items: VecDeque<T>,
    capacity: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: VecDeque::with_capacity(capacity),
            capacity,
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

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// `batch_size` entries drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&T>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..batch_size)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect())
    }
}
