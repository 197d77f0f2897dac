//! Grid configuration file (TOML).
//!
//! ```toml
//! version = 1
//! name = "four-area"
//!
//! [source]            # Thevenin equivalent of the bulk system
//! emf_pu = 1.05
//! reactance_pu = 0.04
//! bus = 0             # bus the source reactance connects to
//!
//! [[bus]]             # one table per bus, ids 0..n-1 in order
//! id = 1
//! area = 1            # 0 = backbone (no agent), 1..N = control areas
//! controllable = true
//! p0 = 0.6            # initial active load, pu
//! q_ratio = 0.5       # Q/P at constant power factor
//! alpha_t = 2.0       # transient voltage exponent
//! alpha_s = 0.0       # steady-state voltage exponent
//! tp = 3.0            # recovery time constant, s
//! shunt_b = 0.36      # shunt susceptance, pu (capacitive > 0)
//!
//! [[line]]
//! from = 0
//! to = 1
//! x = 0.1             # series reactance, pu
//!
//! [fault]
//! line = 0            # default faulted line (index into [[line]])
//! lines = [0, 1]      # candidate lines for random scenarios
//! start_s = 1.0
//! duration_s = 0.1
//! severity = 20.0     # fault shunt conductance at the line midpoint, pu
//! severity_range = [15.0, 25.0]
//! load_scale = 1.0    # load scale of the default scenario
//!
//! [timing]
//! dt_int = 0.01
//! dt_obs = 0.1
//! control_interval = 1.0
//! horizon = 10.0
//! rounds = 5
//! shed_step = 0.1
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRID_CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    pub source: SourceConfig,
    #[serde(rename = "bus")]
    pub buses: Vec<BusConfig>,
    #[serde(rename = "line")]
    pub lines: Vec<LineConfig>,
    pub fault: FaultDefaults,
    #[serde(default)]
    pub timing: TimingConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub emf_pu: f64,
    pub reactance_pu: f64,
    pub bus: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusConfig {
    pub id: usize,
    pub area: usize,
    #[serde(default)]
    pub controllable: bool,
    pub p0: f64,
    #[serde(default)]
    pub q_ratio: f64,
    #[serde(default = "default_alpha_t")]
    pub alpha_t: f64,
    #[serde(default)]
    pub alpha_s: f64,
    #[serde(default = "default_tp")]
    pub tp: f64,
    #[serde(default)]
    pub shunt_b: f64,
}

fn default_alpha_t() -> f64 {
    2.0
}

fn default_tp() -> f64 {
    3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineConfig {
    pub from: usize,
    pub to: usize,
    pub x: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultDefaults {
    pub line: usize,
    pub lines: Vec<usize>,
    pub start_s: f64,
    pub duration_s: f64,
    pub severity: f64,
    pub severity_range: [f64; 2],
    #[serde(default = "one")]
    pub load_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub dt_int: f64,
    pub dt_obs: f64,
    pub control_interval: f64,
    pub horizon: f64,
    pub rounds: u32,
    pub shed_step: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            dt_int: 0.01,
            dt_obs: 0.1,
            control_interval: 1.0,
            horizon: 10.0,
            rounds: 5,
            shed_step: 0.1,
        }
    }
}

impl TimingConfig {
    /// Internal steps per observation sample.
    pub fn steps_per_sample(&self) -> usize {
        (self.dt_obs / self.dt_int).round() as usize
    }

    /// Observation samples per control interval.
    pub fn samples_per_interval(&self) -> usize {
        (self.control_interval / self.dt_obs).round() as usize
    }

    pub fn max_shed(&self) -> f64 {
        self.rounds as f64 * self.shed_step
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("dt_int", self.dt_int),
            ("dt_obs", self.dt_obs),
            ("control_interval", self.control_interval),
            ("horizon", self.horizon),
            ("shed_step", self.shed_step),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("timing.{name} must be positive, got {v}")));
            }
        }
        if !divides(self.dt_int, self.dt_obs) || !divides(self.dt_obs, self.control_interval) {
            return Err(Error::Config(
                "timing: dt_int must divide dt_obs and dt_obs must divide control_interval".into(),
            ));
        }
        if self.rounds == 0 {
            return Err(Error::Config("timing.rounds must be at least 1".into()));
        }
        if self.max_shed() > 1.0 + 1e-12 {
            return Err(Error::Config("timing: rounds * shed_step exceeds 1".into()));
        }
        Ok(())
    }
}

fn divides(small: f64, big: f64) -> bool {
    let ratio = big / small;
    ratio >= 1.0 - 1e-9 && (ratio - ratio.round()).abs() < 1e-9
}

impl GridConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: GridConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("grid config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        GridConfig::from_toml(&text)
    }

    pub fn area_count(&self) -> usize {
        self.buses.iter().map(|b| b.area).max().unwrap_or(0)
    }

    /// Structural checks that do not need the network solved.
    pub fn validate(&self) -> Result<()> {
        if self.version != GRID_CONFIG_VERSION {
            return Err(Error::Version {
                kind: "grid config",
                found: self.version,
                expected: GRID_CONFIG_VERSION,
            });
        }
        let n = self.buses.len();
        if n == 0 {
            return Err(Error::Config("at least one bus is required".into()));
        }
        let s = &self.source;
        if !(s.emf_pu.is_finite() && s.emf_pu > 0.0) {
            return Err(Error::Config("source.emf_pu must be positive".into()));
        }
        if !(s.reactance_pu.is_finite() && s.reactance_pu > 0.0) {
            return Err(Error::Config("source.reactance_pu must be positive".into()));
        }
        if s.bus >= n {
            return Err(Error::Config(format!("source.bus {} does not exist", s.bus)));
        }
        for (i, b) in self.buses.iter().enumerate() {
            if b.id != i {
                return Err(Error::Config(format!(
                    "bus ids must be 0..n-1 in order; found {} at {i}",
                    b.id
                )));
            }
            let finite = [b.p0, b.q_ratio, b.alpha_t, b.alpha_s, b.tp, b.shunt_b];
            if finite.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("bus {i} has a non-finite parameter")));
            }
            if b.p0 < 0.0 {
                return Err(Error::Config(format!("bus {i}: p0 must be >= 0")));
            }
            if b.tp <= 0.0 {
                return Err(Error::Config(format!("bus {i}: tp must be > 0")));
            }
            if b.controllable && b.area == 0 {
                return Err(Error::Config(format!("bus {i}: controllable buses need an area")));
            }
        }
        let areas = self.area_count();
        for a in 1..=areas {
            let count = self
                .buses
                .iter()
                .filter(|b| b.area == a && b.controllable)
                .count();
            if count != 1 {
                return Err(Error::Config(format!(
                    "area {a} must have exactly one controllable bus (found {count})"
                )));
            }
        }
        for (k, l) in self.lines.iter().enumerate() {
            if l.from >= n || l.to >= n || l.from == l.to {
                return Err(Error::Config(format!("line {k} has invalid endpoints")));
            }
            if !(l.x.is_finite() && l.x > 0.0) {
                return Err(Error::Config(format!(
                    "line {k}: reactance must be positive, got {}",
                    l.x
                )));
            }
        }
        if !self.is_connected() {
            return Err(Error::Config("network is not connected".into()));
        }
        let f = &self.fault;
        if f.line >= self.lines.len() || f.lines.iter().any(|l| *l >= self.lines.len()) {
            return Err(Error::Config("fault line index out of range".into()));
        }
        if f.lines.is_empty() {
            return Err(Error::Config("fault.lines must not be empty".into()));
        }
        if !(f.start_s.is_finite() && f.start_s >= 0.0) {
            return Err(Error::Config("fault.start_s must be >= 0".into()));
        }
        if !(f.duration_s.is_finite() && f.duration_s >= 0.0) {
            return Err(Error::Config("fault.duration_s must be >= 0".into()));
        }
        let [lo, hi] = f.severity_range;
        if !(f.severity.is_finite()
            && f.severity >= 0.0
            && lo.is_finite()
            && hi.is_finite()
            && 0.0 <= lo
            && lo <= hi)
        {
            return Err(Error::Config(
                "fault severity must be >= 0 with a valid range".into(),
            ));
        }
        if !(f.load_scale.is_finite() && f.load_scale > 0.0) {
            return Err(Error::Config("fault.load_scale must be positive".into()));
        }
        self.timing.validate()?;
        if f.start_s + f.duration_s >= self.timing.horizon {
            return Err(Error::Config("fault clears after the horizon".into()));
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for l in &self.lines {
            adj[l.from].push(l.to);
            adj[l.to].push(l.from);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![self.source.bus];
        seen[self.source.bus] = true;
        while let Some(b) = stack.pop() {
            for &nb in &adj[b] {
                if !seen[nb] {
                    seen[nb] = true;
                    stack.push(nb);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{four_area, toy_two_area};

    #[test]
    fn presets_round_trip_through_toml() {
        for cfg in [four_area(), toy_two_area()] {
            cfg.validate().unwrap();
            assert_eq!(GridConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        }
    }

    #[test]
    fn rejects_bad_reactance_and_topology() {
        let mut cfg = four_area();
        cfg.lines[3].x = -0.1;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = four_area();
        cfg.source.reactance_pu = 0.0;
        assert!(cfg.validate().is_err());
        // cut area 1's lateral: its load bus is isolated
        let mut cfg = four_area();
        cfg.lines.retain(|l| !(l.from == 1 && l.to == 2));
        cfg.fault.lines = vec![0];
        assert!(cfg.validate().is_err());
        let mut cfg = four_area();
        cfg.buses[2].controllable = false;
        assert!(cfg.validate().is_err());
        let mut cfg = four_area();
        cfg.version = 9;
        assert!(matches!(cfg.validate(), Err(Error::Version { found: 9, .. })));
    }
}
