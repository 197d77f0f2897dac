//! Versioned JSON checkpoints of trained controllers.
//!
//! ```text
//! {
//!   "format": "uvls-checkpoint", "version": 1,
//!   "controller": "proposed" | "masac" | "madqn",
//!   "grid": "<grid name>",
//!   "settings": { n_r, penalty, p_l },
//!   "hyperparameters": { ... },
//!   "model": { "kind": "sac", "agents": [...], "attention": {...} }
//!          | { "kind": "dqn", "agents": [...] },
//!   "rng": { ChaCha8 seed, stream and word position }
//! }
//! ```
//!
//! Networks use the `uvls-densenet` record layout; optimizer moments are
//! stored in full. Floats are written in shortest round-trip form.

use std::path::Path;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ControllerKind;
use crate::baselines::{DqnAgent, DqnLearner};
use crate::error::{Error, Result};
use crate::grid::EnvSettings;
use crate::madrl::{AgentParameters, AttentionBlock, GreedyPolicy, Hyperparameters, SacLearner};
use crate::nn::{Adam, DenseNet, NetRecord};

pub const CHECKPOINT_FORMAT: &str = "uvls-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SacAgentRecord {
    pub actor: NetRecord,
    pub head: NetRecord,
    pub embed: NetRecord,
    pub target_actor: NetRecord,
    pub target_head: NetRecord,
    pub target_embed: NetRecord,
    pub actor_opt: Adam,
    pub head_opt: Adam,
    pub embed_opt: Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionRecord {
    pub dim: usize,
    /// Row-major `dim x dim` matrices.
    pub w_q: Vec<f64>,
    pub w_k: Vec<f64>,
    pub w_v: Vec<f64>,
    pub target_w_q: Vec<f64>,
    pub target_w_k: Vec<f64>,
    pub target_w_v: Vec<f64>,
    pub opt: Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DqnAgentRecord {
    pub q: NetRecord,
    pub target: NetRecord,
    pub opt: Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelRecord {
    Sac {
        attention_enabled: bool,
        agents: Vec<SacAgentRecord>,
        attention: AttentionRecord,
    },
    Dqn {
        agents: Vec<DqnAgentRecord>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub controller: ControllerKind,
    pub grid: String,
    pub settings: EnvSettings,
    pub hyperparameters: Hyperparameters,
    pub model: ModelRecord,
    pub rng: ChaCha8Rng,
}

fn net(rec: &NetRecord) -> Result<DenseNet> {
    DenseNet::try_from(rec.clone())
}

fn square(dim: usize, v: &[f64]) -> Result<Array2<f64>> {
    if v.len() != dim * dim {
        return Err(Error::shape("attention matrix", dim * dim, v.len()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("attention matrix"));
    }
    Ok(Array2::from_shape_vec((dim, dim), v.to_vec()).expect("checked length"))
}

fn flat(m: &Array2<f64>) -> Vec<f64> {
    m.iter().copied().collect()
}

/// A restored, ready-to-run model.
#[derive(Clone, Debug, PartialEq)]
pub enum RestoredModel {
    Sac(SacLearner),
    Dqn(DqnLearner),
}

impl RestoredModel {
    /// Greedy decentralized policy, named after `kind`.
    pub fn policy(&self, kind: ControllerKind) -> GreedyPolicy {
        match self {
            RestoredModel::Sac(l) => l.policy(kind.as_str()),
            RestoredModel::Dqn(l) => l.policy(),
        }
    }
}

impl Checkpoint {
    pub fn from_sac(
        kind: ControllerKind,
        grid: &str,
        settings: &EnvSettings,
        learner: &SacLearner,
        rng: &ChaCha8Rng,
    ) -> Self {
        let agents = learner
            .agents
            .iter()
            .map(|a| SacAgentRecord {
                actor: (&a.actor).into(),
                head: (&a.head).into(),
                embed: (&a.embed).into(),
                target_actor: (&a.target_actor).into(),
                target_head: (&a.target_head).into(),
                target_embed: (&a.target_embed).into(),
                actor_opt: a.actor_opt.clone(),
                head_opt: a.head_opt.clone(),
                embed_opt: a.embed_opt.clone(),
            })
            .collect();
        let b = &learner.block;
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            controller: kind,
            grid: grid.into(),
            settings: settings.clone(),
            hyperparameters: learner.hp.clone(),
            model: ModelRecord::Sac {
                attention_enabled: learner.attention,
                agents,
                attention: AttentionRecord {
                    dim: b.dim(),
                    w_q: flat(&b.w_q),
                    w_k: flat(&b.w_k),
                    w_v: flat(&b.w_v),
                    target_w_q: flat(&b.target_w_q),
                    target_w_k: flat(&b.target_w_k),
                    target_w_v: flat(&b.target_w_v),
                    opt: b.opt.clone(),
                },
            },
            rng: rng.clone(),
        }
    }

    pub fn from_dqn(grid: &str, settings: &EnvSettings, learner: &DqnLearner, rng: &ChaCha8Rng) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            controller: ControllerKind::Madqn,
            grid: grid.into(),
            settings: settings.clone(),
            hyperparameters: learner.hp.clone(),
            model: ModelRecord::Dqn {
                agents: learner
                    .agents
                    .iter()
                    .map(|a| DqnAgentRecord {
                        q: (&a.q).into(),
                        target: (&a.target).into(),
                        opt: a.opt.clone(),
                    })
                    .collect(),
            },
            rng: rng.clone(),
        }
    }

    pub fn restore(&self) -> Result<RestoredModel> {
        match &self.model {
            ModelRecord::Sac {
                attention_enabled,
                agents,
                attention: a,
            } => {
                let agents = agents
                    .iter()
                    .map(|r| {
                        Ok(AgentParameters {
                            actor: net(&r.actor)?,
                            head: net(&r.head)?,
                            embed: net(&r.embed)?,
                            target_actor: net(&r.target_actor)?,
                            target_head: net(&r.target_head)?,
                            target_embed: net(&r.target_embed)?,
                            actor_opt: r.actor_opt.clone(),
                            head_opt: r.head_opt.clone(),
                            embed_opt: r.embed_opt.clone(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                for ag in &agents {
                    if ag.head.input_dim() != 2 * a.dim || ag.embed.output_dim() != a.dim {
                        return Err(Error::Parse(
                            "critic shapes do not match the attention width".into(),
                        ));
                    }
                }
                let block = AttentionBlock {
                    w_q: square(a.dim, &a.w_q)?,
                    w_k: square(a.dim, &a.w_k)?,
                    w_v: square(a.dim, &a.w_v)?,
                    target_w_q: square(a.dim, &a.target_w_q)?,
                    target_w_k: square(a.dim, &a.target_w_k)?,
                    target_w_v: square(a.dim, &a.target_w_v)?,
                    opt: a.opt.clone(),
                };
                Ok(RestoredModel::Sac(SacLearner::from_parts(
                    agents,
                    block,
                    self.hyperparameters.clone(),
                    *attention_enabled,
                )?))
            }
            ModelRecord::Dqn { agents } => {
                let agents = agents
                    .iter()
                    .map(|r| {
                        Ok(DqnAgent {
                            q: net(&r.q)?,
                            target: net(&r.target)?,
                            opt: r.opt.clone(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                if agents.is_empty() {
                    return Err(Error::Parse("checkpoint has no agents".into()));
                }
                Ok(RestoredModel::Dqn(DqnLearner::from_parts(
                    agents,
                    self.hyperparameters.clone(),
                )?))
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    /// Parses and checks the format tag and version.
    pub fn from_json(text: &str) -> Result<Self> {
        let head: serde_json::Value = serde_json::from_str(text)?;
        let format = head.get("format").and_then(|v| v.as_str()).unwrap_or_default();
        if format != CHECKPOINT_FORMAT {
            return Err(Error::Parse(format!("not a checkpoint (format {format:?})")));
        }
        let version = head.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
        if version != CHECKPOINT_VERSION as u64 {
            return Err(Error::Version {
                kind: "checkpoint",
                found: version.min(u32::MAX as u64) as u32,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ck: Checkpoint = serde_json::from_value(head)?;
        ck.hyperparameters.validate()?;
        ck.settings.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
