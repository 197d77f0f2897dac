use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, DenseNet, ParamSet};

/// Learner settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparameters {
    pub gamma: f64,
    pub tau: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Hidden layer widths shared by actors, embeddings and critic heads.
    pub hidden: Vec<usize>,
    /// Embedding width `d_e` (also the attention width).
    pub embed_dim: usize,
    /// Entropy temperature.
    pub alpha: f64,
    /// Rewards are multiplied by this before entering the learner.
    pub reward_scale: f64,
    /// Transitions collected before the first update (at least one batch).
    pub warmup: usize,
    /// Gradient updates per environment step once warm.
    pub updates_per_step: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            gamma: 0.99,
            tau: 0.005,
            lr_actor: 1e-4,
            lr_critic: 1e-4,
            batch_size: 256,
            buffer_capacity: 8000,
            hidden: vec![128, 128],
            embed_dim: 32,
            alpha: 0.05,
            reward_scale: 0.01,
            warmup: 256,
            updates_per_step: 1,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        for (name, v) in [
            ("lr_actor", self.lr_actor),
            ("lr_critic", self.lr_critic),
            ("reward_scale", self.reward_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config("alpha must be >= 0".into()));
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return Err(Error::Config(format!(
                "batch size {} must be in 1..=buffer capacity {}",
                self.batch_size, self.buffer_capacity
            )));
        }
        if self.embed_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.updates_per_step == 0 {
            return Err(Error::Config("updates_per_step must be at least 1".into()));
        }
        Ok(())
    }

    /// Transitions needed before updates start.
    pub fn effective_warmup(&self) -> usize {
        self.warmup.max(self.batch_size)
    }
}

/// One agent's networks, their targets and optimizer states.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentParameters {
    pub actor: DenseNet,
    /// Critic head `f_j` over `[g_j, e_j]`.
    pub head: DenseNet,
    /// Embedding `g_j` over `[s_j, onehot(a_j)]`.
    pub embed: DenseNet,
    pub target_actor: DenseNet,
    pub target_head: DenseNet,
    pub target_embed: DenseNet,
    pub actor_opt: Adam,
    pub head_opt: Adam,
    pub embed_opt: Adam,
}

impl AgentParameters {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        actions: usize,
        hp: &Hyperparameters,
        rng: &mut R,
    ) -> Result<Self> {
        let actor = DenseNet::new(
            &widths(obs_dim, &hp.hidden, actions),
            Activation::LeakyRelu,
            Activation::Linear,
            rng,
        )?;
        let embed = DenseNet::new(
            &widths(obs_dim + actions, &hp.hidden, hp.embed_dim),
            Activation::LeakyRelu,
            Activation::LeakyRelu,
            rng,
        )?;
        let head = DenseNet::new(
            &widths(2 * hp.embed_dim, &hp.hidden, 1),
            Activation::LeakyRelu,
            Activation::Linear,
            rng,
        )?;
        Ok(AgentParameters {
            target_actor: actor.clone(),
            target_head: head.clone(),
            target_embed: embed.clone(),
            actor,
            head,
            embed,
            actor_opt: Adam::new(hp.lr_actor),
            head_opt: Adam::new(hp.lr_critic),
            embed_opt: Adam::new(hp.lr_critic),
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn action_count(&self) -> usize {
        self.actor.output_dim()
    }

    pub(crate) fn soft_update(&mut self, tau: f64) -> Result<()> {
        self.target_actor.soft_update_from(&self.actor, tau)?;
        self.target_head.soft_update_from(&self.head, tau)?;
        self.target_embed.soft_update_from(&self.embed, tau)
    }
}

pub(crate) fn widths(inputs: usize, hidden: &[usize], outputs: usize) -> Vec<usize> {
    let mut sizes = vec![inputs];
    sizes.extend_from_slice(hidden);
    sizes.push(outputs);
    sizes
}

/// Shared attention transforms `W_q`, `W_k`, `W_v` (each `d_e x d_e`) and
/// their targets.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlock {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub target_w_q: Array2<f64>,
    pub target_w_k: Array2<f64>,
    pub target_w_v: Array2<f64>,
    pub opt: Adam,
}

/// Gradients of the three attention matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionGrad {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
}

impl AttentionGrad {
    pub fn zeros(dim: usize) -> Self {
        AttentionGrad {
            w_q: Array2::zeros((dim, dim)),
            w_k: Array2::zeros((dim, dim)),
            w_v: Array2::zeros((dim, dim)),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        vec![
            self.w_q.as_slice().unwrap(),
            self.w_k.as_slice().unwrap(),
            self.w_v.as_slice().unwrap(),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

impl AttentionBlock {
    pub fn new<R: Rng + ?Sized>(dim: usize, lr: f64, rng: &mut R) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let mut mat = || Array2::from_shape_fn((dim, dim), |_| rng.gen_range(-bound..bound));
        let (w_q, w_k, w_v) = (mat(), mat(), mat());
        AttentionBlock {
            target_w_q: w_q.clone(),
            target_w_k: w_k.clone(),
            target_w_v: w_v.clone(),
            w_q,
            w_k,
            w_v,
            opt: Adam::new(lr),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.nrows()
    }

    pub(crate) fn step(&mut self, grad: &AttentionGrad) -> Result<()> {
        let grads = grad.slices();
        let mut params = vec![
            self.w_q.as_slice_mut().unwrap(),
            self.w_k.as_slice_mut().unwrap(),
            self.w_v.as_slice_mut().unwrap(),
        ];
        self.opt.step_slices(&mut params, &grads)
    }

    pub(crate) fn soft_update(&mut self, tau: f64) {
        for (t, o) in [
            (&mut self.target_w_q, &self.w_q),
            (&mut self.target_w_k, &self.w_k),
            (&mut self.target_w_v, &self.w_v),
        ] {
            t.zip_mut_with(o, |t, o| *t = (1.0 - tau) * *t + tau * o);
        }
    }
}

impl ParamSet for AttentionBlock {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![
            self.w_q.as_slice().unwrap(),
            self.w_k.as_slice().unwrap(),
            self.w_v.as_slice().unwrap(),
        ]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_q.as_slice_mut().unwrap(),
            self.w_k.as_slice_mut().unwrap(),
            self.w_v.as_slice_mut().unwrap(),
        ]
    }
}
