//! Independent DQN learners, one per area, each with its own replay buffer.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{EnvSettings, GridSystem, UvlsEnv, ACTION_COUNT};
use crate::madrl::{
    run_training, GreedyPolicy, Hyperparameters, Learner, LearningCurve, Progress, ReplayBuffer,
    ScenarioSource, Transition,
};
use crate::nn::{Activation, Adam, DenseNet, GradientTape};

pub const EPSILON_START: f64 = 1.0;
pub const EPSILON_END: f64 = 0.05;
/// Share of training over which epsilon decays linearly.
pub const EPSILON_DECAY_SHARE: f64 = 0.5;

/// Exploration rate at `progress`.
pub fn epsilon(progress: Progress) -> f64 {
    let horizon = EPSILON_DECAY_SHARE * progress.episodes as f64;
    if horizon <= 0.0 {
        return EPSILON_END;
    }
    let frac = (progress.episode as f64 / horizon).min(1.0);
    EPSILON_START + (EPSILON_END - EPSILON_START) * frac
}

#[derive(Clone, Debug, PartialEq)]
pub struct DqnAgent {
    pub q: DenseNet,
    pub target: DenseNet,
    pub opt: Adam,
}

impl DqnAgent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        actions: usize,
        hp: &Hyperparameters,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(&hp.hidden);
        sizes.push(actions);
        let q = DenseNet::new(&sizes, Activation::LeakyRelu, Activation::Linear, rng)?;
        Ok(DqnAgent {
            target: q.clone(),
            q,
            opt: Adam::new(hp.lr_critic),
        })
    }
}

/// `r + gamma * (1 - done) * max_a' Q_target(s', a')`.
pub fn td_targets(
    target: &DenseNet,
    rewards: &Array1<f64>,
    next_obs: ArrayView2<f64>,
    done: &Array1<f64>,
    gamma: f64,
) -> Result<Array1<f64>> {
    let q = target.predict_batch(next_obs)?;
    let best = q.map_axis(Axis(1), |r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    Ok(rewards + &(done.mapv(|d| 1.0 - d) * best * gamma))
}

/// `mean_b (Q(s, a) - y)^2` and its gradient.
pub fn td_loss(
    q: &DenseNet,
    obs: ArrayView2<f64>,
    actions: &[usize],
    targets: &Array1<f64>,
) -> Result<(f64, GradientTape)> {
    let trace = q.forward_batch(obs)?;
    let b = obs.nrows();
    if actions.len() != b || targets.len() != b {
        return Err(Error::shape("td batch", b, actions.len().min(targets.len())));
    }
    let mut grad = Array2::zeros(trace.output.dim());
    let mut loss = 0.0;
    for (r, (&a, y)) in actions.iter().zip(targets).enumerate() {
        if a >= trace.output.ncols() {
            return Err(Error::Invalid(format!("action {a} out of range")));
        }
        let d = trace.output[[r, a]] - y;
        loss += d * d;
        grad[[r, a]] = 2.0 * d / b as f64;
    }
    loss /= b as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("td loss"));
    }
    let mut tape = q.zero_tape();
    q.backward_batch(&trace, grad.view(), &mut tape)?;
    Ok((loss, tape))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DqnLearner {
    pub agents: Vec<DqnAgent>,
    pub hp: Hyperparameters,
    buffers: Vec<ReplayBuffer>,
    skipped: usize,
}

impl DqnLearner {
    pub fn new<R: Rng + ?Sized>(
        obs_dims: &[usize],
        actions: usize,
        hp: Hyperparameters,
        rng: &mut R,
    ) -> Result<Self> {
        hp.validate()?;
        let agents = obs_dims
            .iter()
            .map(|d| DqnAgent::new(*d, actions, &hp, rng))
            .collect::<Result<Vec<_>>>()?;
        let buffers = (0..agents.len())
            .map(|_| ReplayBuffer::new(hp.buffer_capacity))
            .collect::<Result<Vec<_>>>()?;
        Ok(DqnLearner {
            agents,
            hp,
            buffers,
            skipped: 0,
        })
    }

    pub fn from_parts(agents: Vec<DqnAgent>, hp: Hyperparameters) -> Result<Self> {
        hp.validate()?;
        let buffers = (0..agents.len())
            .map(|_| ReplayBuffer::new(hp.buffer_capacity))
            .collect::<Result<Vec<_>>>()?;
        Ok(DqnLearner {
            agents,
            hp,
            buffers,
            skipped: 0,
        })
    }

    pub fn skipped_updates(&self) -> usize {
        self.skipped
    }

    pub fn policy(&self) -> GreedyPolicy {
        GreedyPolicy::new("madqn", self.agents.iter().map(|a| a.q.clone()).collect())
    }

    fn update_agent(&mut self, j: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        let batch = self.buffers[j].sample(self.hp.batch_size, rng)?;
        let agent = &mut self.agents[j];
        let rewards = &batch.rewards[0] * self.hp.reward_scale;
        let y = td_targets(
            &agent.target,
            &rewards,
            batch.next_obs[0].view(),
            &batch.done,
            self.hp.gamma,
        )?;
        match td_loss(&agent.q, batch.obs[0].view(), &batch.actions[0], &y) {
            Ok((_, tape)) if tape.is_finite() => {
                agent.opt.step_net(&mut agent.q, &tape)?;
                agent.target.soft_update_from(&agent.q, self.hp.tau)?;
            }
            Ok(_) | Err(Error::NonFinite(_)) => {
                log::warn!("skipping DQN update for agent {j}: non-finite loss");
                self.skipped += 1;
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }
}

impl Learner for DqnLearner {
    fn explore(
        &mut self,
        obs: &[crate::tvrc::AgentObservation],
        progress: Progress,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<usize>> {
        let eps = epsilon(progress);
        obs.iter()
            .zip(&self.agents)
            .map(|(o, a)| {
                let x: f64 = rng.gen();
                if x < eps {
                    Ok(rng.gen_range(0..a.q.output_dim()))
                } else {
                    let q = a.q.forward(&o.values)?;
                    Ok(crate::madrl::argmax_first(&q))
                }
            })
            .collect()
    }

    fn record(&mut self, t: Transition, rng: &mut ChaCha8Rng) -> Result<()> {
        for j in 0..self.agents.len() {
            self.buffers[j].push(Transition {
                obs: vec![t.obs[j].clone()],
                actions: vec![t.actions[j]],
                rewards: vec![t.rewards[j]],
                next_obs: vec![t.next_obs[j].clone()],
                done: t.done,
            });
        }
        if self.buffers[0].len() < self.hp.effective_warmup() {
            return Ok(());
        }
        for _ in 0..self.hp.updates_per_step {
            for j in 0..self.agents.len() {
                self.update_agent(j, rng)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainedDqn {
    pub learner: DqnLearner,
    pub curve: LearningCurve,
    pub rng: ChaCha8Rng,
}

pub fn dqn_train(
    system: &GridSystem,
    settings: &EnvSettings,
    hp: &Hyperparameters,
    scenarios: &ScenarioSource,
    episodes: usize,
    seed: u64,
) -> Result<TrainedDqn> {
    settings.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims: Vec<usize> = (1..=system.area_count())
        .map(|a| UvlsEnv::obs_dim(system, settings, a))
        .collect();
    let mut learner = DqnLearner::new(&dims, ACTION_COUNT, hp.clone(), &mut rng)?;
    let curve = run_training(system, settings, scenarios, episodes, &mut learner, &mut rng)?;
    Ok(TrainedDqn { learner, curve, rng })
}
