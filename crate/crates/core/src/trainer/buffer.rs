//! Replay storage and minibatch assembly.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::ActionLayout;
use crate::error::Result;
use crate::grad::{Matrix, Real};

/// One environment step as the learner sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub next_obs: Vec<f64>,
    /// Executed action in the composite layout: one-hot servers and the
    /// fraction at its own entry.
    pub encoding: Vec<f64>,
    /// Keep mask of the state the action was taken in.
    pub keep: Vec<bool>,
    pub next_keep: Vec<bool>,
    /// Already scaled.
    pub reward: f64,
    pub terminal: bool,
}

/// Fixed-capacity FIFO with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    items: VecDeque<T>,
    capacity: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&T> {
        self.items.get(i)
    }

    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<&T> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

/// Column-stacked minibatch in the learner's precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<F> {
    pub obs: Matrix<F>,
    pub next_obs: Matrix<F>,
    pub encoding: Matrix<F>,
    /// Executed fractions, `B x V`.
    pub fractions: Matrix<F>,
    pub keep: Vec<bool>,
    pub next_keep: Vec<bool>,
    pub rewards: Vec<F>,
    pub terminals: Vec<bool>,
}

impl<F: Real> Batch<F> {
    pub fn from_transitions(items: &[&Transition], layout: &ActionLayout) -> Result<Self> {
        let rows = items.len();
        let cast = |f: &dyn Fn(&Transition) -> &[f64]| -> Vec<F> {
            items.iter().flat_map(|t| f(t).iter().map(|&v| F::of(v))).collect()
        };
        let obs_dim = items.first().map_or(0, |t| t.obs.len());
        Ok(Batch {
            obs: Matrix::from_vec(rows, obs_dim, cast(&|t| &t.obs))?,
            next_obs: Matrix::from_vec(rows, obs_dim, cast(&|t| &t.next_obs))?,
            encoding: Matrix::from_vec(rows, layout.width(), cast(&|t| &t.encoding))?,
            fractions: Matrix::from_vec(
                rows,
                layout.vehicles,
                items
                    .iter()
                    .flat_map(|t| layout.fractions(&t.encoding).into_iter().map(F::of))
                    .collect(),
            )?,
            keep: items.iter().flat_map(|t| t.keep.iter().copied()).collect(),
            next_keep: items.iter().flat_map(|t| t.next_keep.iter().copied()).collect(),
            rewards: items.iter().map(|t| F::of(t.reward)).collect(),
            terminals: items.iter().map(|t| t.terminal).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}
