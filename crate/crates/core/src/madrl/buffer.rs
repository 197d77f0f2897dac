use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};

/// One joint transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<Vec<f64>>,
    pub done: bool,
}

/// A sampled batch, laid out per agent.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionBatch {
    pub obs: Vec<Array2<f64>>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<Array1<f64>>,
    pub next_obs: Vec<Array2<f64>>,
    pub done: Array1<f64>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }

    pub fn agents(&self) -> usize {
        self.obs.len()
    }

    /// Stacks transitions (all with the same agent layout).
    pub fn from_transitions(items: &[&Transition]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Invalid("empty transition batch".into()))?;
        let n = first.obs.len();
        let b = items.len();
        let mut obs = Vec::with_capacity(n);
        let mut next_obs = Vec::with_capacity(n);
        for j in 0..n {
            let d = first.obs[j].len();
            let mut o = Array2::zeros((b, d));
            let mut o2 = Array2::zeros((b, d));
            for (r, t) in items.iter().enumerate() {
                if t.obs.len() != n || t.obs[j].len() != d || t.next_obs[j].len() != d {
                    return Err(Error::shape("transition layout", d, t.obs[j].len()));
                }
                o.row_mut(r).assign(&ndarray::ArrayView1::from(&t.obs[j]));
                o2.row_mut(r).assign(&ndarray::ArrayView1::from(&t.next_obs[j]));
            }
            obs.push(o);
            next_obs.push(o2);
        }
        let actions = (0..n)
            .map(|j| items.iter().map(|t| t.actions[j]).collect())
            .collect();
        let rewards = (0..n)
            .map(|j| items.iter().map(|t| t.rewards[j]).collect())
            .collect();
        let done = items.iter().map(|t| if t.done { 1.0 } else { 0.0 }).collect();
        Ok(TransitionBatch {
            obs,
            actions,
            rewards,
            next_obs,
            done,
        })
    }
}

/// Fixed-capacity ring of transitions; the oldest entry is overwritten first.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Invalid("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items: Vec::new(),
            next: 0,
        })
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

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity {
            0
        } else {
            self.next
        };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// Uniform sample of `size` distinct entries.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<TransitionBatch> {
        if size == 0 || size > self.items.len() {
            return Err(Error::Invalid(format!(
                "cannot sample {size} distinct transitions from {}",
                self.items.len()
            )));
        }
        let idx = rand::seq::index::sample(rng, self.items.len(), size);
        let picked: Vec<&Transition> = idx.iter().map(|i| &self.items[i]).collect();
        TransitionBatch::from_transitions(&picked)
    }
}
