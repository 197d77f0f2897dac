//! Comparison controllers: envelope-triggered rule shedding, no control,
//! independent DQN and multi-agent SAC without attention.

mod dqn;
mod rule;

pub use dqn::{
    dqn_train, epsilon, td_loss, td_targets, DqnAgent, DqnLearner, TrainedDqn, EPSILON_DECAY_SHARE,
    EPSILON_END, EPSILON_START,
};
pub use rule::{rule_policy, NoControl, RulePolicy};

use crate::error::Result;
use crate::grid::{EnvSettings, GridSystem};
use crate::madrl::{train_sac, Hyperparameters, ScenarioSource, TrainedSac};

/// Multi-agent SAC whose critics see only their own agent (`e_j = 0`).
pub fn sac_no_attention_train(
    system: &GridSystem,
    settings: &EnvSettings,
    hp: &Hyperparameters,
    scenarios: &ScenarioSource,
    episodes: usize,
    seed: u64,
) -> Result<TrainedSac> {
    train_sac(system, settings, hp, scenarios, episodes, seed, false)
}
