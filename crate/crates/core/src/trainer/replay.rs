use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::Rng;

use crate::envkit::Episode;
use crate::error::{ensure, Result};

/// FIFO store of whole episodes.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        ensure!(capacity > 0, Config, "replay capacity must be positive");
        Ok(ReplayBuffer {
            capacity,
            episodes: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Adds an episode, evicting the oldest when full.
    pub fn push(&mut self, episode: Episode) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn get(&self, i: usize) -> Option<&Episode> {
        self.episodes.get(i)
    }

    /// `n` distinct episodes drawn uniformly; `None` until enough are stored.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Vec<&Episode>> {
        if n == 0 || self.episodes.len() < n {
            return None;
        }
        Some(sample(rng, self.episodes.len(), n).into_iter().map(|i| &self.episodes[i]).collect())
    }
}
