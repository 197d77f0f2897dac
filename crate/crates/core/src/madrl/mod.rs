//! Discrete soft actor-critic agents with attention critics, trained
//! centrally and executed from local observations only.

mod actor;
mod buffer;
mod critic;
mod learner;
mod params;
mod train;

pub use actor::{actor_forward, actor_loss, argmax_first, batch_policy, sample_action, ActionMode};
pub use buffer::{ReplayBuffer, Transition, TransitionBatch};
pub use critic::{
    attention_aggregate, attention_weights, critic_loss, critic_q, critic_values, embed, one_hot,
    CriticGrads, CriticView, NetSet,
};
pub use learner::{soft_bellman_target, GreedyPolicy, SacLearner, UpdateStats};
pub use params::{AgentParameters, AttentionBlock, AttentionGrad, Hyperparameters};
pub use train::{
    run_episode, run_training, train_sac, Learner, LearningCurve, Progress, ScenarioSource, TrainedSac,
    MOVING_WINDOW,
};
