//! Decentralized under-voltage load shedding lab.
//!
//! * [`nn`] - dense networks with analytic gradients and Adam.
//! * [`grid`] - reduced-order power system with exponential-recovery loads.
//! * [`tvrc`] - recovery envelope, rewards, shedding cost and evaluation metrics.
//! * [`madrl`] - discrete soft actor-critic agents with attention critics.
//! * [`baselines`] - rule-based shedding, independent DQN and the no-attention ablation.
//! * [`harness`] - scenario streams, experiment commands and file exports.

pub mod baselines;
pub mod error;
pub mod fmt;
pub mod grid;
pub mod harness;
pub mod madrl;
pub mod nn;
pub mod tvrc;

pub use error::{Error, Result};
