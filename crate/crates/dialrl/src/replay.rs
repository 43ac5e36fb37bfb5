//! Experience pools: a bounded FIFO ring for RL samples and a frozen
//! supervised pool for demonstration data.
//!
//! Policy-gradient learners store whole [`Episode`]s; the DQN baseline
//! stores per-step [`Transition`]s. Both share one generic container.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::{Error, Result};

/// Hard cap on stored episode length, matching the dialogue turn limit.
pub const MAX_EPISODE_LEN: usize = 20;

/// One step of a stored dialogue: belief, action, the behaviour policy's
/// probability of that action, and the immediate reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub belief: Vec<f64>,
    pub action: usize,
    pub mu_prob: f64,
    pub reward: f64,
}

/// A whole dialogue, the replay unit for policy-gradient learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub steps: Vec<EpisodeStep>,
    pub total_return: f64,
}

impl Episode {
    pub fn new(steps: Vec<EpisodeStep>) -> Result<Self> {
        if steps.len() > MAX_EPISODE_LEN {
            return Err(Error::UnsupportedConfig(format!(
                "episode length {} exceeds the {MAX_EPISODE_LEN}-turn cap",
                steps.len()
            )));
        }
        for s in &steps {
            if s.mu_prob <= 0.0 {
                return Err(Error::NonPositiveBehaviourProb(s.mu_prob));
            }
            if !s.reward.is_finite() {
                return Err(Error::UnsupportedConfig("non-finite reward".into()));
            }
        }
        let total_return = steps.iter().map(|s| s.reward).sum();
        Ok(Episode {
            steps,
            total_return,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }
}

/// One state transition, the replay unit for DQN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub belief: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_belief: Vec<f64>,
    pub done: bool,
}

/// Bounded FIFO experience pool with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayPool<T> {
    items: VecDeque<T>,
    capacity: usize,
}

impl<T> ReplayPool<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "pool capacity must be positive");
        ReplayPool {
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

    /// Append an item, evicting the oldest when full.
    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    /// `n` items uniform with replacement. Deterministic given the RNG state.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<&T>> {
        if self.items.is_empty() {
            return Err(Error::EmptyPool);
        }
        Ok((0..n)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }
}

/// Immutable pool of (belief, action-label) pairs for the supervised
/// replay objective. Frozen after loading; never evicted or overwritten.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedPool {
    examples: Vec<(Vec<f64>, usize)>,
    frozen: bool,
}

impl SupervisedPool {
    pub fn new() -> Self {
        SupervisedPool {
            examples: Vec::new(),
            frozen: false,
        }
    }

    pub fn from_pairs(examples: Vec<(Vec<f64>, usize)>) -> Self {
        SupervisedPool {
            examples,
            frozen: true,
        }
    }

    pub fn push(&mut self, belief: Vec<f64>, label: usize) -> Result<()> {
        if self.frozen {
            return Err(Error::FrozenPool);
        }
        self.examples.push((belief, label));
        Ok(())
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[(Vec<f64>, usize)] {
        &self.examples
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<&(Vec<f64>, usize)>> {
        if self.examples.is_empty() {
            return Err(Error::EmptyPool);
        }
        Ok((0..n)
            .map(|_| &self.examples[rng.gen_range(0..self.examples.len())])
            .collect())
    }
}

impl Default for SupervisedPool {
    fn default() -> Self {
        Self::new()
    }
}
