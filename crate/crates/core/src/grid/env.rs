//! Multi-agent episode wrapper: one agent per area, acting at every control
//! instant from its window of envelope deviations.

use serde::{Deserialize, Serialize};

use super::sim::{Scenario, Simulation};
use super::system::GridSystem;
use crate::error::{Error, Result};
use crate::tvrc::{self, AgentObservation, CaseRecord, TvrcEnvelope, FAILURE_VOLTAGE};

pub const HOLD: usize = 0;
pub const SHED: usize = 1;
/// Actions per agent: hold or shed one step.
pub const ACTION_COUNT: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSettings {
    /// Deviation samples per bus in an agent state.
    pub n_r: usize,
    /// Penalty for an interval with a violation.
    pub penalty: f64,
    /// Reward scale of the remaining controllable load (100 = percent).
    pub p_l: f64,
}

impl Default for EnvSettings {
    fn default() -> Self {
        EnvSettings {
            n_r: 10,
            penalty: 1000.0,
            p_l: 100.0,
        }
    }
}

impl EnvSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_r == 0 {
            return Err(Error::Config("n_r must be at least 1".into()));
        }
        if !(self.penalty.is_finite() && self.penalty >= 0.0 && self.p_l.is_finite()) {
            return Err(Error::Config(
                "penalty and p_l must be finite, penalty >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observations: Vec<AgentObservation>,
    pub rewards: Vec<f64>,
    pub done: bool,
    pub collapsed: bool,
}

/// One episode of the load-shedding game.
#[derive(Clone, Debug)]
pub struct UvlsEnv<'a> {
    sim: Simulation<'a>,
    settings: EnvSettings,
    envelope: TvrcEnvelope,
    /// Per area, per post-clearance sample, the in-area deviations.
    history: Vec<Vec<Vec<f64>>>,
    processed: usize,
    round: usize,
    done: bool,
    violated: bool,
}

impl<'a> UvlsEnv<'a> {
    /// Simulates up to clearance. If the system collapses before that, the
    /// episode starts out done.
    pub fn new(system: &'a GridSystem, scenario: Scenario, settings: &EnvSettings) -> Result<Self> {
        settings.validate()?;
        let mut sim = Simulation::new(system, scenario)?;
        sim.run_to_clearance();
        let mut env = UvlsEnv {
            history: vec![Vec::new(); system.area_count()],
            done: sim.is_collapsed(),
            sim,
            settings: settings.clone(),
            envelope: TvrcEnvelope::default(),
            processed: 0,
            round: 0,
            violated: false,
        };
        env.absorb_samples()?;
        Ok(env)
    }

    pub fn agent_count(&self) -> usize {
        self.history.len()
    }

    /// Length of agent `area`'s state vector (1-based area).
    pub fn obs_dim(system: &GridSystem, settings: &EnvSettings, area: usize) -> usize {
        system.area_buses(area).len() * settings.n_r
    }

    pub fn simulation(&self) -> &Simulation<'a> {
        &self.sim
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Reads new post-clearance samples; returns, per area, whether one of
    /// them violated the envelope.
    fn absorb_samples(&mut self) -> Result<Vec<bool>> {
        let system = self.sim.system();
        let t_fc = self.sim.scenario().clearance_time();
        let mut area_violation = vec![false; self.history.len()];
        let samples = self.sim.samples();
        for s in &samples[self.processed..] {
            if s.since_clearance.is_none() {
                continue;
            }
            let mut devs = Vec::with_capacity(s.voltages.len());
            for v in &s.voltages {
                devs.push(self.envelope.deviation(*v, s.time, t_fc)?);
            }
            if devs.iter().any(|d| *d < 0.0) {
                self.violated = true;
            }
            for (a, hist) in self.history.iter_mut().enumerate() {
                let area_devs: Vec<f64> = system.area_buses(a + 1).iter().map(|&b| devs[b]).collect();
                if area_devs.iter().any(|d| *d < 0.0) {
                    area_violation[a] = true;
                }
                hist.push(area_devs);
            }
        }
        self.processed = samples.len();
        Ok(area_violation)
    }

    pub fn observations(&self) -> Vec<AgentObservation> {
        self.history
            .iter()
            .map(|h| {
                let buses = h.first().map_or(0, |x| x.len());
                let buses = if buses == 0 { 1 } else { buses };
                tvrc::build_state(h, buses, self.settings.n_r).expect("uniform history")
            })
            .collect()
    }

    /// Observation for every area of `system`, padded with zeros.
    pub fn zero_observations(system: &GridSystem, settings: &EnvSettings) -> Vec<AgentObservation> {
        (1..=system.area_count())
            .map(|a| {
                let buses = system.area_buses(a).len();
                AgentObservation {
                    values: vec![0.0; buses * settings.n_r],
                    n_r: settings.n_r,
                    buses,
                }
            })
            .collect()
    }

    /// Applies one joint action (`HOLD`/`SHED` per area) and advances one
    /// control interval; the final round runs on to the horizon.
    pub fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        if self.done {
            return Err(Error::Invalid("step on a finished episode".into()));
        }
        let n = self.agent_count();
        if actions.len() != n {
            return Err(Error::shape("joint action", n, actions.len()));
        }
        if let Some(a) = actions.iter().find(|a| **a >= ACTION_COUNT) {
            return Err(Error::Invalid(format!("action {a} outside 0..{ACTION_COUNT}")));
        }
        let shed: Vec<bool> = actions.iter().map(|a| *a == SHED).collect();
        self.sim.step(&shed)?;
        self.round += 1;
        let last = self.round >= self.sim.system().config().timing.rounds as usize;
        if last {
            self.sim.run_to_horizon();
        }
        let violations = self.absorb_samples()?;
        let collapsed = self.sim.is_collapsed();
        self.done = last || collapsed || self.sim.is_finished();
        let m = self.settings.penalty;
        let rewards = if collapsed {
            vec![-m; n]
        } else {
            (0..n)
                .map(|a| {
                    let u = self.sim.loads().u_cum(self.sim.system().controllable_bus(a + 1));
                    if violations[a] {
                        -m
                    } else {
                        self.settings.p_l * (1.0 - u)
                    }
                })
                .collect()
        };
        Ok(StepResult {
            observations: self.observations(),
            rewards,
            done: self.done,
            collapsed,
        })
    }

    /// Case outcome. Finishes the horizon with the current shedding first.
    pub fn case_record(&mut self, case_id: usize) -> Result<CaseRecord> {
        if !self.sim.is_finished() {
            self.sim.run_to_horizon();
            self.absorb_samples()?;
        }
        let system = self.sim.system();
        let p0 = self.sim.initial_loads();
        let u = self.sim.loads().u_cum_all();
        let total: f64 = p0.iter().sum();
        let shed = tvrc::shed_cost(&u, p0)?;
        let shed_pct = if total > 0.0 { shed / total * 100.0 } else { 0.0 };
        let collapsed = self.sim.is_collapsed();
        let final_level = self.envelope.final_level();
        let (vdev, low) = if collapsed {
            // no operating point: every bus counts as 0 pu
            (-final_level, true)
        } else {
            let last = self.sim.samples().last().expect("at least one sample");
            let t_fc = self.sim.scenario().clearance_time();
            let devs = last
                .voltages
                .iter()
                .map(|v| self.envelope.deviation(*v, last.time.max(t_fc), t_fc))
                .collect::<Result<Vec<_>>>()?;
            (
                tvrc::mean_voltage_deviation(&devs)?,
                last.voltages.iter().any(|v| *v < FAILURE_VOLTAGE),
            )
        };
        debug_assert_eq!(u.len(), system.bus_count());
        Ok(CaseRecord {
            case_id,
            seed: self.sim.scenario().seed,
            success: !collapsed && !self.violated,
            failure: collapsed || low,
            shed_pct,
            vdev_pu: vdev,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::four_area;

    fn system() -> GridSystem {
        GridSystem::build(four_area()).unwrap()
    }

    #[test]
    fn episode_runs_five_rounds() {
        let sys = system();
        let settings = EnvSettings::default();
        let mut env = UvlsEnv::new(&sys, Scenario::no_fault(&sys), &settings).unwrap();
        let dims: Vec<usize> = env.observations().iter().map(|o| o.len()).collect();
        assert_eq!(
            dims,
            (1..=4)
                .map(|a| UvlsEnv::obs_dim(&sys, &settings, a))
                .collect::<Vec<_>>()
        );
        let mut steps = 0;
        while !env.is_done() {
            let r = env.step(&[HOLD; 4]).unwrap();
            assert_eq!(r.rewards.len(), 4);
            steps += 1;
        }
        assert_eq!(steps, 5);
        assert!(env.simulation().is_finished());
        assert!(env.step(&[HOLD; 4]).is_err());
    }

    #[test]
    fn bad_actions_rejected() {
        let sys = system();
        let mut env = UvlsEnv::new(&sys, Scenario::no_fault(&sys), &EnvSettings::default()).unwrap();
        assert!(env.step(&[HOLD; 3]).is_err());
        assert!(env.step(&[HOLD, HOLD, HOLD, 2]).is_err());
    }

    #[test]
    fn shedding_costs_remaining_load() {
        let sys = system();
        let settings = EnvSettings::default();
        let mut env = UvlsEnv::new(&sys, Scenario::no_fault(&sys), &settings).unwrap();
        let r = env.step(&[SHED, HOLD, HOLD, HOLD]).unwrap();
        assert!((r.rewards[0] - settings.p_l * 0.9).abs() < 1e-9);
        assert_eq!(r.rewards[1], settings.p_l);
    }

    #[test]
    fn heavy_load_collapse_ends_the_episode() {
        let sys = system();
        let sc = Scenario {
            load_scale: 1.2,
            severity: 30.0,
            fault_duration: 0.1,
            ..Scenario::default_for(&sys)
        };
        let mut env = UvlsEnv::new(&sys, sc, &EnvSettings::default()).unwrap();
        while !env.is_done() {
            env.step(&[HOLD; 4]).unwrap();
        }
        let rec = env.case_record(0).unwrap();
        assert!(rec.failure && !rec.success);
        assert!((rec.vdev_pu + 0.95).abs() < 1e-12);
    }
}
