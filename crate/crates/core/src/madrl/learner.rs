use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::actor::{actor_forward, actor_loss, argmax_first, batch_policy, sample_action, ActionMode};
use super::buffer::{ReplayBuffer, Transition, TransitionBatch};
use super::critic::{critic_loss, others_batch, q_all_actions, CriticView, NetSet};
use super::params::{AgentParameters, AttentionBlock, Hyperparameters};
use super::train::{Learner, Progress};
use crate::error::{Error, Result};
use crate::nn::DenseNet;
use crate::tvrc::{AgentObservation, Controller};

/// Soft Bellman target for one transition with an exact expectation over
/// the discrete next actions.
pub fn soft_bellman_target(
    reward: f64,
    done: bool,
    gamma: f64,
    alpha: f64,
    next_probs: &[f64],
    next_q: &[f64],
) -> Result<f64> {
    if next_probs.len() != next_q.len() {
        return Err(Error::shape("target q values", next_probs.len(), next_q.len()));
    }
    if done {
        return Ok(reward);
    }
    let soft_value: f64 = next_probs
        .iter()
        .zip(next_q)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (q - alpha * p.ln()))
        .sum();
    Ok(reward + gamma * soft_value)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_losses: Vec<f64>,
}

/// Multi-agent discrete SAC. With `attention` off the critics ignore the
/// other agents (the independent-learner ablation) but everything else,
/// including random draws, is unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct SacLearner {
    pub agents: Vec<AgentParameters>,
    pub block: AttentionBlock,
    pub hp: Hyperparameters,
    pub attention: bool,
    buffer: ReplayBuffer,
    skipped: usize,
}

impl SacLearner {
    pub fn new<R: Rng + ?Sized>(
        obs_dims: &[usize],
        action_count: usize,
        hp: Hyperparameters,
        attention: bool,
        rng: &mut R,
    ) -> Result<Self> {
        hp.validate()?;
        if obs_dims.is_empty() {
            return Err(Error::Invalid("at least one agent is required".into()));
        }
        let agents = obs_dims
            .iter()
            .map(|d| AgentParameters::new(*d, action_count, &hp, rng))
            .collect::<Result<Vec<_>>>()?;
        let block = AttentionBlock::new(hp.embed_dim, hp.lr_critic, rng);
        Ok(SacLearner {
            buffer: ReplayBuffer::new(hp.buffer_capacity)?,
            agents,
            block,
            hp,
            attention,
            skipped: 0,
        })
    }

    /// Rebuilds a learner from stored parameters (empty replay buffer).
    pub fn from_parts(
        agents: Vec<AgentParameters>,
        block: AttentionBlock,
        hp: Hyperparameters,
        attention: bool,
    ) -> Result<Self> {
        hp.validate()?;
        if agents.is_empty() || block.dim() != hp.embed_dim {
            return Err(Error::Invalid(
                "checkpoint agents do not match hyperparameters".into(),
            ));
        }
        Ok(SacLearner {
            buffer: ReplayBuffer::new(hp.buffer_capacity)?,
            agents,
            block,
            hp,
            attention,
            skipped: 0,
        })
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// Updates skipped because of a non-finite loss or gradient.
    pub fn skipped_updates(&self) -> usize {
        self.skipped
    }

    fn view(&self, set: NetSet) -> CriticView<'_> {
        CriticView::new(&self.agents, &self.block, set, self.attention)
    }

    fn sample_joint<R: Rng + ?Sized>(
        actors: &[&DenseNet],
        obs: &[Array2<f64>],
        rng: &mut R,
    ) -> Result<(Vec<Array2<f64>>, Vec<Array2<f64>>, Vec<Vec<usize>>)> {
        let mut probs = Vec::with_capacity(actors.len());
        let mut logps = Vec::with_capacity(actors.len());
        let mut acts = Vec::with_capacity(actors.len());
        for (actor, o) in actors.iter().zip(obs) {
            let (p, lp) = batch_policy(actor, o.view())?;
            let a = p
                .rows()
                .into_iter()
                .map(|r| sample_action(r.as_slice().expect("row"), ActionMode::Stochastic, rng))
                .collect::<Result<Vec<_>>>()?;
            probs.push(p);
            logps.push(lp);
            acts.push(a);
        }
        Ok((probs, logps, acts))
    }

    /// Soft Bellman targets for every agent. The other agents' next actions
    /// are drawn from their target actors.
    pub fn soft_targets<R: Rng + ?Sized>(
        &self,
        batch: &TransitionBatch,
        rng: &mut R,
    ) -> Result<Vec<Array1<f64>>> {
        let actors: Vec<&DenseNet> = self.agents.iter().map(|a| &a.target_actor).collect();
        let (probs, logps, acts) = Self::sample_joint(&actors, &batch.next_obs, rng)?;
        let view = self.view(NetSet::Target);
        let others = others_batch(&view, &batch.next_obs, &acts)?;
        let alpha = self.hp.alpha;
        let mut ys = Vec::with_capacity(self.agents.len());
        for j in 0..self.agents.len() {
            let q = q_all_actions(&view, batch.next_obs[j].view(), j, &others)?;
            let soft = (&probs[j] * &(&q - &(&logps[j] * alpha))).sum_axis(ndarray::Axis(1));
            let cont = batch.done.mapv(|d| 1.0 - d);
            ys.push(&batch.rewards[j] * self.hp.reward_scale + &(cont * soft * self.hp.gamma));
        }
        Ok(ys)
    }

    /// One joint step on every critic head, embedding and the shared
    /// attention matrices.
    pub fn critic_update<R: Rng + ?Sized>(&mut self, batch: &TransitionBatch, rng: &mut R) -> Result<f64> {
        let targets = self.soft_targets(batch, rng)?;
        let (loss, grads) = critic_loss(&self.view(NetSet::Online), &batch.obs, &batch.actions, &targets)?;
        if !grads.is_finite() {
            return Err(Error::NonFinite("critic gradient"));
        }
        for (j, agent) in self.agents.iter_mut().enumerate() {
            agent.head_opt.step_net(&mut agent.head, &grads.heads[j])?;
            agent.embed_opt.step_net(&mut agent.embed, &grads.embeds[j])?;
        }
        if self.attention && self.agents.len() > 1 {
            self.block.step(&grads.attention)?;
        }
        Ok(loss)
    }

    /// One policy step per agent against the current critics, with the other
    /// agents' actions drawn from their current policies.
    pub fn actor_update<R: Rng + ?Sized>(
        &mut self,
        batch: &TransitionBatch,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let actors: Vec<&DenseNet> = self.agents.iter().map(|a| &a.actor).collect();
        let (_, _, acts) = Self::sample_joint(&actors, &batch.obs, rng)?;
        let qs = {
            let view = self.view(NetSet::Online);
            let others = others_batch(&view, &batch.obs, &acts)?;
            (0..self.agents.len())
                .map(|j| q_all_actions(&view, batch.obs[j].view(), j, &others))
                .collect::<Result<Vec<_>>>()?
        };
        let mut losses = Vec::with_capacity(self.agents.len());
        for (j, agent) in self.agents.iter_mut().enumerate() {
            let (loss, tape) = actor_loss(&agent.actor, batch.obs[j].view(), qs[j].view(), self.hp.alpha)?;
            agent.actor_opt.step_net(&mut agent.actor, &tape)?;
            losses.push(loss);
        }
        Ok(losses)
    }

    pub fn soft_update(&mut self) -> Result<()> {
        for a in &mut self.agents {
            a.soft_update(self.hp.tau)?;
        }
        self.block.soft_update(self.hp.tau);
        Ok(())
    }

    /// Critic step, actor steps, target tracking. A non-finite loss skips the
    /// rest of the update and is logged.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        batch: &TransitionBatch,
        rng: &mut R,
    ) -> Result<Option<UpdateStats>> {
        let critic = match self.critic_update(batch, rng) {
            Ok(l) => l,
            Err(Error::NonFinite(what)) => {
                log::warn!("skipping update: non-finite {what}");
                self.skipped += 1;
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        let actors = match self.actor_update(batch, rng) {
            Ok(l) => l,
            Err(Error::NonFinite(what)) => {
                log::warn!("skipping actor update: non-finite {what}");
                self.skipped += 1;
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        self.soft_update()?;
        Ok(Some(UpdateStats {
            critic_loss: critic,
            actor_losses: actors,
        }))
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &[Vec<f64>],
        mode: ActionMode,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        if obs.len() != self.agents.len() {
            return Err(Error::shape("joint observation", self.agents.len(), obs.len()));
        }
        self.agents
            .iter()
            .zip(obs)
            .map(|(a, o)| sample_action(&actor_forward(&a.actor, o)?, mode, rng))
            .collect()
    }

    /// Actors only, for decentralized execution.
    pub fn policy(&self, name: &str) -> GreedyPolicy {
        GreedyPolicy::new(name, self.agents.iter().map(|a| a.actor.clone()).collect())
    }
}

impl Learner for SacLearner {
    fn explore(
        &mut self,
        obs: &[AgentObservation],
        _progress: Progress,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<usize>> {
        let values: Vec<Vec<f64>> = obs.iter().map(|o| o.values.clone()).collect();
        self.act(&values, ActionMode::Stochastic, rng)
    }

    fn record(&mut self, t: Transition, rng: &mut ChaCha8Rng) -> Result<()> {
        self.buffer.push(t);
        if self.buffer.len() < self.hp.effective_warmup() {
            return Ok(());
        }
        for _ in 0..self.hp.updates_per_step {
            let batch = self.buffer.sample(self.hp.batch_size, rng)?;
            self.update(&batch, rng)?;
        }
        Ok(())
    }
}

/// Greedy decentralized execution: agent `j` only sees its own observation
/// and its own network. Also used for DQN (argmax of Q equals argmax of the
/// policy logits).
#[derive(Clone, Debug, PartialEq)]
pub struct GreedyPolicy {
    name: String,
    nets: Vec<DenseNet>,
}

impl GreedyPolicy {
    pub fn new(name: &str, nets: Vec<DenseNet>) -> Self {
        GreedyPolicy {
            name: name.to_string(),
            nets,
        }
    }

    pub fn nets(&self) -> &[DenseNet] {
        &self.nets
    }

    /// Greedy action of one agent.
    pub fn act_one(&self, agent: usize, obs: &[f64]) -> Result<usize> {
        let net = self
            .nets
            .get(agent)
            .ok_or_else(|| Error::shape("agent index", self.nets.len(), agent))?;
        let out = net.forward(obs)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy output"));
        }
        Ok(argmax_first(&out))
    }
}

impl Controller for GreedyPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn act(&mut self, observations: &[AgentObservation]) -> Result<Vec<usize>> {
        if observations.len() != self.nets.len() {
            return Err(Error::shape(
                "joint observation",
                self.nets.len(),
                observations.len(),
            ));
        }
        observations
            .iter()
            .enumerate()
            .map(|(j, o)| self.act_one(j, &o.values))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn target_examples() {
        assert_eq!(
            soft_bellman_target(3.0, true, 0.99, 0.1, &[0.5, 0.5], &[1.0, 2.0]).unwrap(),
            3.0
        );
        assert_eq!(
            soft_bellman_target(3.0, false, 0.0, 0.1, &[0.5, 0.5], &[1.0, 2.0]).unwrap(),
            3.0
        );
        let (p, q, a, g) = ([0.25, 0.75], [2.0, -1.0], 0.2, 0.9);
        let by_hand = 1.0 + g * (0.25 * (2.0 - a * 0.25f64.ln()) + 0.75 * (-1.0 - a * 0.75f64.ln()));
        let y = soft_bellman_target(1.0, false, g, a, &p, &q).unwrap();
        assert!((y - by_hand).abs() < 1e-12);
    }

    fn tiny_hp() -> Hyperparameters {
        Hyperparameters {
            hidden: vec![8],
            embed_dim: 4,
            batch_size: 8,
            buffer_capacity: 64,
            warmup: 8,
            ..Hyperparameters::default()
        }
    }

    fn transition(rng: &mut ChaCha8Rng, dims: &[usize]) -> Transition {
        let v = |rng: &mut ChaCha8Rng, d: usize| (0..d).map(|_| rng.gen_range(-0.2..0.2)).collect();
        Transition {
            obs: dims.iter().map(|d| v(rng, *d)).collect(),
            actions: dims.iter().map(|_| rng.gen_range(0..2)).collect(),
            rewards: dims.iter().map(|_| rng.gen_range(-10.0..100.0)).collect(),
            next_obs: dims.iter().map(|d| v(rng, *d)).collect(),
            done: rng.gen_bool(0.2),
        }
    }

    #[test]
    fn batched_targets_match_single_sample_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dims = [4, 6];
        let learner = SacLearner::new(&dims, 2, tiny_hp(), true, &mut rng).unwrap();
        let items: Vec<Transition> = (0..6).map(|_| transition(&mut rng, &dims)).collect();
        let refs: Vec<&Transition> = items.iter().collect();
        let batch = TransitionBatch::from_transitions(&refs).unwrap();
        let mut draw = ChaCha8Rng::seed_from_u64(5);
        let ys = learner.soft_targets(&batch, &mut draw).unwrap();
        // replay the same draws by hand
        let mut draw = ChaCha8Rng::seed_from_u64(5);
        let mut next_actions = vec![vec![0; 6]; 2];
        for (j, a) in learner.agents.iter().enumerate() {
            for r in 0..6 {
                let p = actor_forward(&a.target_actor, &items[r].next_obs[j]).unwrap();
                next_actions[j][r] = sample_action(&p, ActionMode::Stochastic, &mut draw).unwrap();
            }
        }
        let view = CriticView::new(&learner.agents, &learner.block, NetSet::Target, true);
        for r in 0..6 {
            let acts: Vec<usize> = (0..2).map(|j| next_actions[j][r]).collect();
            for j in 0..2 {
                let q = super::super::critic::critic_q(&view, &items[r].next_obs, &acts, j).unwrap();
                let p = actor_forward(&learner.agents[j].target_actor, &items[r].next_obs[j]).unwrap();
                let y = soft_bellman_target(
                    items[r].rewards[j] * 0.01,
                    items[r].done,
                    0.99,
                    learner.hp.alpha,
                    &p,
                    &q,
                )
                .unwrap();
                assert!((y - ys[j][r]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_agent_ablation_is_identical() {
        let dims = [5];
        let mut r1 = ChaCha8Rng::seed_from_u64(2);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let mut a = SacLearner::new(&dims, 2, tiny_hp(), true, &mut r1).unwrap();
        let mut b = SacLearner::new(&dims, 2, tiny_hp(), false, &mut r2).unwrap();
        let mut data = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let t = transition(&mut data, &dims);
            a.record(t.clone(), &mut r1).unwrap();
            b.record(t, &mut r2).unwrap();
        }
        assert_eq!(a.agents, b.agents);
        assert_eq!(r1, r2);
    }
}
