use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::buffer::Transition;
use super::learner::SacLearner;
use super::params::Hyperparameters;
use crate::error::Result;
use crate::fmt::sig9;
use crate::grid::{EnvSettings, GridSystem, Scenario, UvlsEnv, ACTION_COUNT};
use crate::tvrc::AgentObservation;

/// Episodes averaged by the learning-curve moving average.
pub const MOVING_WINDOW: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Progress {
    pub episode: usize,
    pub episodes: usize,
}

/// Something that chooses exploratory joint actions and learns from the
/// transitions it caused.
pub trait Learner {
    fn explore(
        &mut self,
        obs: &[AgentObservation],
        progress: Progress,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<usize>>;
    fn record(&mut self, t: Transition, rng: &mut ChaCha8Rng) -> Result<()>;
}

/// Per-episode total reward (summed over agents and steps).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LearningCurve {
    pub rewards: Vec<f64>,
}

impl LearningCurve {
    pub const CSV_HEADER: &'static str = "episode,reward,moving_avg";

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Trailing mean over up to [`MOVING_WINDOW`] episodes.
    pub fn moving_average(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rewards.len());
        let mut sum = 0.0;
        for (i, r) in self.rewards.iter().enumerate() {
            sum += r;
            if i >= MOVING_WINDOW {
                sum -= self.rewards[i - MOVING_WINDOW];
            }
            out.push(sum / (i + 1).min(MOVING_WINDOW) as f64);
        }
        out
    }

    /// Mean of the last `n` episodes (all of them if fewer).
    pub fn tail_mean(&self, n: usize) -> Option<f64> {
        if self.rewards.is_empty() || n == 0 {
            return None;
        }
        let tail = &self.rewards[self.rewards.len().saturating_sub(n)..];
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for (i, (r, m)) in self.rewards.iter().zip(self.moving_average()).enumerate() {
            writeln!(w, "{},{},{}", i, sig9(*r), sig9(m))?;
        }
        Ok(())
    }
}

/// Scenario for training episode `k`.
pub type ScenarioSource<'a> = dyn Fn(usize) -> Result<Scenario> + 'a;

/// Rolls out one episode with `choose` picking joint actions; returns the
/// summed reward. An episode that collapses before any decision scores the
/// penalty for every agent.
pub fn run_episode(
    system: &GridSystem,
    settings: &EnvSettings,
    scenario: Scenario,
    mut choose: impl FnMut(&[AgentObservation]) -> Result<Vec<usize>>,
    mut sink: impl FnMut(Transition) -> Result<()>,
) -> Result<f64> {
    let mut env = UvlsEnv::new(system, scenario, settings)?;
    if env.is_done() {
        return Ok(-settings.penalty * env.agent_count() as f64);
    }
    let mut obs = env.observations();
    let mut total = 0.0;
    while !env.is_done() {
        let actions = choose(&obs)?;
        let step = env.step(&actions)?;
        total += step.rewards.iter().sum::<f64>();
        sink(Transition {
            obs: obs.iter().map(|o| o.values.clone()).collect(),
            actions,
            rewards: step.rewards,
            next_obs: step.observations.iter().map(|o| o.values.clone()).collect(),
            done: step.done,
        })?;
        obs = step.observations;
    }
    Ok(total)
}

/// Generic episode loop shared by every trainer.
pub fn run_training(
    system: &GridSystem,
    settings: &EnvSettings,
    scenarios: &ScenarioSource,
    episodes: usize,
    learner: &mut dyn Learner,
    rng: &mut ChaCha8Rng,
) -> Result<LearningCurve> {
    let mut curve = LearningCurve::default();
    for episode in 0..episodes {
        let progress = Progress { episode, episodes };
        let scenario = scenarios(episode)?;
        // split borrows: the learner both acts and records within the episode
        let learner_cell = std::cell::RefCell::new(&mut *learner);
        let rng_cell = std::cell::RefCell::new(&mut *rng);
        let total = run_episode(
            system,
            settings,
            scenario,
            |obs| {
                learner_cell
                    .borrow_mut()
                    .explore(obs, progress, &mut rng_cell.borrow_mut())
            },
            |t| learner_cell.borrow_mut().record(t, &mut rng_cell.borrow_mut()),
        )?;
        curve.rewards.push(total);
        if (episode + 1) % 100 == 0 {
            log::info!(
                "episode {} / {episodes}: moving average {:.2}",
                episode + 1,
                curve.tail_mean(MOVING_WINDOW).unwrap_or(0.0)
            );
        }
    }
    Ok(curve)
}

/// A trained multi-agent SAC with its curve and the generator state after
/// training.
#[derive(Clone, Debug)]
pub struct TrainedSac {
    pub learner: SacLearner,
    pub curve: LearningCurve,
    pub rng: ChaCha8Rng,
}

/// Trains one SAC agent per area. `attention = false` gives the ablation
/// with independent critics.
pub fn train_sac(
    system: &GridSystem,
    settings: &EnvSettings,
    hp: &Hyperparameters,
    scenarios: &ScenarioSource,
    episodes: usize,
    seed: u64,
    attention: bool,
) -> Result<TrainedSac> {
    settings.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims: Vec<usize> = (1..=system.area_count())
        .map(|a| UvlsEnv::obs_dim(system, settings, a))
        .collect();
    let mut learner = SacLearner::new(&dims, ACTION_COUNT, hp.clone(), attention, &mut rng)?;
    let curve = run_training(system, settings, scenarios, episodes, &mut learner, &mut rng)?;
    Ok(TrainedSac { learner, curve, rng })
}
