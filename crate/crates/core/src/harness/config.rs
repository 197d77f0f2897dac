//! Experiment configuration (TOML).
//!
//! ```toml
//! version = 1
//! preset = "four-area"          # or "toy-two-area"; ignored when `grid` is set
//! grid = "default_grid.toml"    # optional grid file, relative to this file
//! controller = "proposed"       # proposed | masac | madqn | rule | none
//! episodes = 600
//! n_test = 200
//! seed = 1                      # training seed (parameters, exploration, training scenarios)
//! suite_seed = 2024             # test-suite seed shared by every controller
//! train_scenarios = 0           # 0: fresh scenario each episode; k: cycle k frozen ones
//! out = "runs/default"
//!
//! [env]
//! n_r = 10
//! penalty = 1000.0
//! p_l = 100.0
//!
//! [hyperparameters]             # any subset
//! hidden = [64, 64]
//! batch_size = 256
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{four_area, toy_two_area, EnvSettings, GridConfig};
use crate::madrl::Hyperparameters;

pub const EXPERIMENT_CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Proposed,
    Masac,
    Madqn,
    Rule,
    None,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 5] = [
        ControllerKind::Proposed,
        ControllerKind::Masac,
        ControllerKind::Madqn,
        ControllerKind::Rule,
        ControllerKind::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::Proposed => "proposed",
            ControllerKind::Masac => "masac",
            ControllerKind::Madqn => "madqn",
            ControllerKind::Rule => "rule",
            ControllerKind::None => "none",
        }
    }

    /// Whether the controller has parameters to train.
    pub fn is_learned(self) -> bool {
        matches!(
            self,
            ControllerKind::Proposed | ControllerKind::Masac | ControllerKind::Madqn
        )
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ControllerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown controller {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridPreset {
    #[default]
    #[serde(rename = "four-area")]
    FourArea,
    #[serde(rename = "toy-two-area")]
    ToyTwoArea,
}

impl GridPreset {
    pub fn config(self) -> GridConfig {
        match self {
            GridPreset::FourArea => four_area(),
            GridPreset::ToyTwoArea => toy_two_area(),
        }
    }
}

fn version() -> u32 {
    EXPERIMENT_CONFIG_VERSION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    #[serde(default = "version")]
    pub version: u32,
    pub preset: GridPreset,
    pub grid: Option<PathBuf>,
    pub controller: ControllerKind,
    pub episodes: usize,
    pub n_test: usize,
    pub seed: u64,
    pub suite_seed: u64,
    pub train_scenarios: usize,
    pub out: PathBuf,
    pub env: EnvSettings,
    pub hyperparameters: Hyperparameters,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: EXPERIMENT_CONFIG_VERSION,
            preset: GridPreset::FourArea,
            grid: None,
            controller: ControllerKind::Proposed,
            episodes: 600,
            n_test: 200,
            seed: 1,
            suite_seed: 2024,
            train_scenarios: 0,
            out: PathBuf::from("runs/default"),
            env: EnvSettings::default(),
            hyperparameters: Hyperparameters {
                hidden: vec![64, 64],
                lr_actor: 1e-3,
                lr_critic: 1e-3,
                ..Hyperparameters::default()
            },
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML; relative grid paths are resolved against `base`.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text)?;
        if let (Some(grid), Some(base)) = (&cfg.grid, base) {
            if grid.is_relative() {
                cfg.grid = Some(base.join(grid));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, path.parent())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != EXPERIMENT_CONFIG_VERSION {
            return Err(Error::Version {
                kind: "experiment config",
                found: self.version,
                expected: EXPERIMENT_CONFIG_VERSION,
            });
        }
        if self.n_test == 0 {
            return Err(Error::Config("n_test must be at least 1".into()));
        }
        if let Some(g) = &self.grid {
            if !g.is_file() {
                return Err(Error::Config(format!("grid file {} does not exist", g.display())));
            }
        }
        self.env.validate()?;
        self.hyperparameters.validate()
    }

    /// The grid described by this experiment.
    pub fn grid_config(&self) -> Result<GridConfig> {
        match &self.grid {
            Some(p) => GridConfig::load(p),
            None => Ok(self.preset.config()),
        }
    }
}
