//! Time-domain simulation: exponential-recovery loads integrated with RK4,
//! the network re-solved at every stage.

use serde::{Deserialize, Serialize};

use super::config::TimingConfig;
use super::powerflow::{Demand, Network, NetworkSolution};
use super::system::GridSystem;
use crate::error::{Error, Result};

pub const LOAD_SCALE_RANGE: [f64; 2] = [0.9, 1.2];
pub const FAULT_DURATION_RANGE: [f64; 2] = [0.06, 0.1];

/// One contingency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub load_scale: f64,
    pub fault_line: usize,
    /// Fault start `t_f` (s).
    pub fault_start: f64,
    pub fault_duration: f64,
    /// Shunt conductance at the faulted line's midpoint (pu). Zero means no fault.
    pub severity: f64,
    pub seed: u64,
}

impl Scenario {
    /// The configured default contingency.
    pub fn default_for(system: &GridSystem) -> Scenario {
        let f = &system.config().fault;
        Scenario {
            load_scale: f.load_scale,
            fault_line: f.line,
            fault_start: f.start_s,
            fault_duration: f.duration_s,
            severity: f.severity,
            seed: 0,
        }
    }

    /// Same timing as the default contingency, but no fault.
    pub fn no_fault(system: &GridSystem) -> Scenario {
        Scenario {
            severity: 0.0,
            ..Scenario::default_for(system)
        }
    }

    pub fn clearance_time(&self) -> f64 {
        self.fault_start + self.fault_duration
    }

    pub fn validate(&self, system: &GridSystem) -> Result<()> {
        let [lo, hi] = LOAD_SCALE_RANGE;
        if !(self.load_scale >= lo - 1e-12 && self.load_scale <= hi + 1e-12) {
            return Err(Error::Invalid(format!(
                "load scale {} outside [{lo}, {hi}]",
                self.load_scale
            )));
        }
        let [dlo, dhi] = FAULT_DURATION_RANGE;
        if !(self.fault_duration >= dlo - 1e-12 && self.fault_duration <= dhi + 1e-12) {
            return Err(Error::Invalid(format!(
                "fault duration {} outside [{dlo}, {dhi}]",
                self.fault_duration
            )));
        }
        if self.fault_line >= system.config().lines.len() {
            return Err(Error::Invalid(format!(
                "faulted line {} does not exist",
                self.fault_line
            )));
        }
        if !(self.severity.is_finite() && self.severity >= 0.0) {
            return Err(Error::Invalid("fault severity must be finite and >= 0".into()));
        }
        if !(self.fault_start.is_finite() && self.fault_start >= 0.0) {
            return Err(Error::Invalid("fault start must be >= 0".into()));
        }
        if self.clearance_time() >= system.config().timing.horizon {
            return Err(Error::Invalid("fault clears after the horizon".into()));
        }
        Ok(())
    }
}

/// Dynamic load state: recovery variable per bus and cumulative shedding.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadState {
    pub xp: Vec<f64>,
    shed_rounds: Vec<u32>,
    shed_step: f64,
    max_rounds: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShedOutcome {
    Applied,
    /// The cap was reached; treated as hold.
    Capped,
}

impl LoadState {
    pub fn new(xp: Vec<f64>, timing: &TimingConfig) -> Self {
        let n = xp.len();
        LoadState {
            xp,
            shed_rounds: vec![0; n],
            shed_step: timing.shed_step,
            max_rounds: timing.rounds,
        }
    }

    /// Cumulative shed fraction at `bus`.
    pub fn u_cum(&self, bus: usize) -> f64 {
        self.shed_rounds[bus] as f64 * self.shed_step
    }

    pub fn u_cum_all(&self) -> Vec<f64> {
        (0..self.shed_rounds.len()).map(|b| self.u_cum(b)).collect()
    }

    pub fn shed_rounds(&self, bus: usize) -> u32 {
        self.shed_rounds[bus]
    }

    /// Sheds one more step at `bus`, unless the cap is reached.
    pub fn shed_bus(&mut self, bus: usize) -> ShedOutcome {
        if self.shed_rounds[bus] >= self.max_rounds {
            log::debug!("shed request at bus {bus} ignored: cap reached");
            ShedOutcome::Capped
        } else {
            self.shed_rounds[bus] += 1;
            ShedOutcome::Applied
        }
    }
}

/// Sheds one step at the controllable bus of `area` (1-based).
pub fn shed_load(system: &GridSystem, loads: &LoadState, area: usize) -> (LoadState, ShedOutcome) {
    let mut next = loads.clone();
    let outcome = next.shed_bus(system.controllable_bus(area));
    (next, outcome)
}

/// Simulation time keeping.
#[derive(Clone, Debug, PartialEq)]
pub struct SimClock {
    pub fault_start: f64,
    pub clearance: f64,
    pub dt_int: f64,
    pub dt_obs: f64,
    pub control_interval: f64,
    pub horizon: f64,
    /// Internal steps taken since clearance.
    post_steps: u64,
    post: bool,
}

impl SimClock {
    fn new(timing: &TimingConfig, scenario: &Scenario) -> Self {
        SimClock {
            fault_start: scenario.fault_start,
            clearance: scenario.clearance_time(),
            dt_int: timing.dt_int,
            dt_obs: timing.dt_obs,
            control_interval: timing.control_interval,
            horizon: timing.horizon,
            post_steps: 0,
            post: false,
        }
    }

    pub fn is_post_clearance(&self) -> bool {
        self.post
    }

    /// Time elapsed since clearance (post-clearance phase only).
    pub fn since_clearance(&self) -> f64 {
        self.post_steps as f64 * self.dt_int
    }

    pub fn now(&self) -> f64 {
        if self.post {
            self.clearance + self.since_clearance()
        } else {
            self.fault_start
        }
    }

    fn steps_per_interval(&self) -> u64 {
        (self.control_interval / self.dt_int).round() as u64
    }

    /// Total internal post-clearance steps until the last sample before the horizon.
    fn final_post_steps(&self) -> u64 {
        let per_sample = (self.dt_obs / self.dt_int).round() as u64;
        let samples = ((self.horizon - self.clearance) / self.dt_obs + 1e-9).floor() as u64;
        samples * per_sample
    }

    pub fn at_control_instant(&self) -> bool {
        self.post && self.post_steps.is_multiple_of(self.steps_per_interval())
    }
}

/// Voltages at one sampled instant.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub time: f64,
    /// Seconds since clearance; `None` before clearance.
    pub since_clearance: Option<f64>,
    pub voltages: Vec<f64>,
    pub u_cum: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SimStatus {
    Running,
    /// Power flow lost its solution at `time`.
    Collapsed {
        time: f64,
    },
}

/// Samples produced by one call that advanced the simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalOutcome {
    /// Range into [`Simulation::samples`].
    pub samples: std::ops::Range<usize>,
    pub collapsed: bool,
    /// True once the horizon has been reached.
    pub finished: bool,
}

/// One scenario being simulated.
#[derive(Clone, Debug)]
pub struct Simulation<'a> {
    system: &'a GridSystem,
    scenario: Scenario,
    p0: Vec<f64>,
    loads: LoadState,
    clock: SimClock,
    fault_net: Option<Network>,
    faulted: bool,
    prefault: NetworkSolution,
    current: Option<NetworkSolution>,
    last: Option<NetworkSolution>,
    samples: Vec<Sample>,
    status: SimStatus,
    rounds_taken: u32,
    alpha_t: Vec<f64>,
    alpha_s: Vec<f64>,
    q_ratio: Vec<f64>,
    tp: Vec<f64>,
}

impl<'a> Simulation<'a> {
    /// Initializes the scenario at its pre-fault equilibrium. A scenario whose
    /// loading has no equilibrium starts out collapsed.
    pub fn new(system: &'a GridSystem, scenario: Scenario) -> Result<Self> {
        scenario.validate(system)?;
        let timing = &system.config().timing;
        let p0 = system.scaled_p0(scenario.load_scale);
        let n = system.bus_count();
        let (steady, status) = match system.steady_state(&p0) {
            Ok(s) => (s, SimStatus::Running),
            Err(Error::Collapse { .. }) => (
                super::system::SteadyState {
                    solution: NetworkSolution {
                        voltages: vec![0.0; n],
                        angles: vec![0.0; n],
                        iterations: 0,
                        residual: f64::INFINITY,
                        extra: None,
                    },
                    xp: vec![0.0; n],
                },
                SimStatus::Collapsed { time: 0.0 },
            ),
            Err(e) => return Err(e),
        };
        let fault_net = (scenario.severity > 0.0 && scenario.fault_duration > 0.0).then(|| {
            GridSystem::network_for(system.config(), Some((scenario.fault_line, scenario.severity)))
        });
        let buses = &system.config().buses;
        let mut sim = Simulation {
            system,
            clock: SimClock::new(timing, &scenario),
            scenario,
            loads: LoadState::new(steady.xp.clone(), timing),
            p0,
            fault_net,
            faulted: false,
            prefault: steady.solution.clone(),
            current: Some(steady.solution.clone()),
            last: Some(steady.solution),
            samples: Vec::new(),
            status,
            rounds_taken: 0,
            alpha_t: buses.iter().map(|b| b.alpha_t).collect(),
            alpha_s: buses.iter().map(|b| b.alpha_s).collect(),
            q_ratio: buses.iter().map(|b| b.q_ratio).collect(),
            tp: buses.iter().map(|b| b.tp).collect(),
        };
        if sim.status == SimStatus::Running {
            sim.push_sample(0.0, None);
        }
        Ok(sim)
    }

    pub fn system(&self) -> &GridSystem {
        self.system
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn loads(&self) -> &LoadState {
        &self.loads
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn status(&self) -> SimStatus {
        self.status
    }

    pub fn is_collapsed(&self) -> bool {
        matches!(self.status, SimStatus::Collapsed { .. })
    }

    pub fn rounds_taken(&self) -> u32 {
        self.rounds_taken
    }

    pub fn is_finished(&self) -> bool {
        self.is_collapsed() || (self.clock.post && self.clock.post_steps >= self.clock.final_post_steps())
    }

    /// Initial load per bus after scenario scaling.
    pub fn initial_loads(&self) -> &[f64] {
        &self.p0
    }

    fn network(&self) -> &Network {
        match (&self.fault_net, self.faulted) {
            (Some(net), true) => net,
            _ => self.system.network(),
        }
    }

    fn solve(&mut self, xp: &[f64]) -> Result<NetworkSolution> {
        let scale: Vec<f64> = (0..self.p0.len()).map(|b| 1.0 - self.loads.u_cum(b)).collect();
        let demand = Demand {
            constant: xp,
            coef: &self.p0,
            exponent: &self.alpha_t,
            scale: &scale,
            q_ratio: &self.q_ratio,
        };
        let sol = self.network().solve(&demand, self.last.as_ref())?;
        self.last = Some(sol.clone());
        Ok(sol)
    }

    fn derivative(&self, xp: &[f64], v: &[f64]) -> Vec<f64> {
        (0..xp.len())
            .map(|i| {
                let ps = self.p0[i] * pow(v[i], self.alpha_s[i]);
                let pt = self.p0[i] * pow(v[i], self.alpha_t[i]);
                (-xp[i] + ps - pt) / self.tp[i]
            })
            .collect()
    }

    fn current_solution(&mut self) -> Result<NetworkSolution> {
        match &self.current {
            Some(s) => Ok(s.clone()),
            None => {
                let xp = self.loads.xp.clone();
                let s = self.solve(&xp)?;
                self.current = Some(s.clone());
                Ok(s)
            }
        }
    }

    fn rk4(&mut self, h: f64) -> Result<()> {
        let x = self.loads.xp.clone();
        let s1 = self.current_solution()?;
        let k1 = self.derivative(&x, &s1.voltages);
        let x2: Vec<f64> = x.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
        let s2 = self.solve(&x2)?;
        let k2 = self.derivative(&x2, &s2.voltages);
        let x3: Vec<f64> = x.iter().zip(&k2).map(|(a, k)| a + 0.5 * h * k).collect();
        let s3 = self.solve(&x3)?;
        let k3 = self.derivative(&x3, &s3.voltages);
        let x4: Vec<f64> = x.iter().zip(&k3).map(|(a, k)| a + h * k).collect();
        let s4 = self.solve(&x4)?;
        let k4 = self.derivative(&x4, &s4.voltages);
        for i in 0..x.len() {
            self.loads.xp[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        self.current = None;
        self.last = Some(s1);
        let xp = self.loads.xp.clone();
        let s = self.solve(&xp)?;
        self.current = Some(s);
        Ok(())
    }

    fn push_sample(&mut self, time: f64, since: Option<f64>) {
        let voltages = self
            .current
            .as_ref()
            .expect("sample needs a solved network")
            .voltages
            .clone();
        self.samples.push(Sample {
            time,
            since_clearance: since,
            voltages,
            u_cum: self.loads.u_cum_all(),
        });
    }

    fn mark_collapse(&mut self, time: f64) {
        log::debug!("voltage collapse at t = {time:.3} s");
        self.status = SimStatus::Collapsed { time };
        self.current = None;
    }

    /// Runs the pre-fault and fault-on periods and records the first
    /// post-clearance sample. Afterwards the clock sits on the first control
    /// instant.
    pub fn run_to_clearance(&mut self) -> IntervalOutcome {
        let start = self.samples.len();
        if self.clock.post || self.is_collapsed() {
            return self.outcome(start);
        }
        let timing = self.system.config().timing.clone();
        let per_sample = timing.steps_per_sample();
        let tf = self.scenario.fault_start;
        let (n1, h1) = substeps(tf, timing.dt_int);
        for i in 1..=n1 {
            if let Err(_e) = self.rk4(h1) {
                self.mark_collapse(i as f64 * h1);
                return self.outcome(start);
            }
            if i % per_sample == 0 && i < n1 {
                self.push_sample(i as f64 * h1, None);
            }
        }
        self.prefault = self.current.clone().expect("solved");
        let d = self.scenario.fault_duration;
        let (n2, h2) = substeps(d, timing.dt_int);
        if self.fault_net.is_some() {
            self.faulted = true;
            self.last = Some(self.prefault.clone());
            self.current = None;
        }
        for i in 0..n2 {
            let t = tf + i as f64 * h2;
            if self.current_solution().is_err() {
                self.mark_collapse(t);
                return self.outcome(start);
            }
            self.push_sample(t, None);
            if self.rk4(h2).is_err() {
                self.mark_collapse(t + h2);
                return self.outcome(start);
            }
        }
        if self.faulted {
            self.faulted = false;
            self.last = Some(self.prefault.clone());
            self.current = None;
        }
        self.clock.post = true;
        self.clock.post_steps = 0;
        let t_fc = self.clock.clearance;
        if self.current_solution().is_err() {
            self.mark_collapse(t_fc);
            return self.outcome(start);
        }
        self.push_sample(t_fc, Some(0.0));
        self.outcome(start)
    }

    fn outcome(&self, start: usize) -> IntervalOutcome {
        IntervalOutcome {
            samples: start..self.samples.len(),
            collapsed: self.is_collapsed(),
            finished: self.is_finished(),
        }
    }

    /// Sheds one step at the controllable bus of `area` (1-based) right now.
    pub fn shed_area(&mut self, area: usize) -> ShedOutcome {
        let bus = self.system.controllable_bus(area);
        let out = self.loads.shed_bus(bus);
        if out == ShedOutcome::Applied {
            // demand changed: the operating point must be re-solved
            self.current = None;
        }
        out
    }

    /// Advances `steps` internal steps (bounded by the horizon), sampling
    /// every `dt_obs`.
    fn advance_post(&mut self, steps: u64) -> IntervalOutcome {
        let start = self.samples.len();
        if !self.clock.post || self.is_collapsed() {
            return self.outcome(start);
        }
        let per_sample = self.system.config().timing.steps_per_sample() as u64;
        let end = (self.clock.post_steps + steps).min(self.clock.final_post_steps());
        let dt = self.clock.dt_int;
        while self.clock.post_steps < end {
            if self.rk4(dt).is_err() {
                self.clock.post_steps += 1;
                let t = self.clock.now();
                self.mark_collapse(t);
                break;
            }
            self.clock.post_steps += 1;
            if self.clock.post_steps.is_multiple_of(per_sample) {
                let sample_idx = self.clock.post_steps / per_sample;
                let since = sample_idx as f64 * self.clock.dt_obs;
                let t = self.clock.clearance + since;
                self.push_sample(t, Some(since));
            }
        }
        self.outcome(start)
    }

    /// Simulates one control interval with the current shedding.
    pub fn advance_interval(&mut self) -> IntervalOutcome {
        let steps = self.clock.steps_per_interval();
        self.advance_post(steps)
    }

    /// Applies per-area shed decisions at the current control instant, then
    /// simulates one control interval.
    pub fn step(&mut self, shed: &[bool]) -> Result<IntervalOutcome> {
        if shed.len() != self.system.area_count() {
            return Err(Error::shape("area actions", self.system.area_count(), shed.len()));
        }
        if self.is_collapsed() || self.is_finished() {
            return Ok(self.outcome(self.samples.len()));
        }
        if !self.clock.at_control_instant() {
            return Err(Error::Invalid("step called off a control instant".into()));
        }
        for (a, s) in shed.iter().enumerate() {
            if *s {
                self.shed_area(a + 1);
            }
        }
        self.rounds_taken += 1;
        Ok(self.advance_interval())
    }

    /// Holds the current shedding until the horizon.
    pub fn run_to_horizon(&mut self) -> IntervalOutcome {
        self.advance_post(u64::MAX / 2)
    }
}

#[inline]
fn pow(v: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if e == 2.0 {
        v * v
    } else {
        v.powf(e)
    }
}

/// Splits `span` into equal sub-steps no longer than `dt`.
fn substeps(span: f64, dt: f64) -> (usize, f64) {
    if span <= 0.0 {
        return (0, 0.0);
    }
    let n = (span / dt - 1e-9).ceil().max(1.0) as usize;
    (n, span / n as f64)
}

/// A full trajectory with every sample and the collapse flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub scenario: Scenario,
    pub samples: Vec<Sample>,
    pub clearance: f64,
    pub collapsed: bool,
}

impl Trajectory {
    pub fn post_clearance(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| s.since_clearance.is_some())
    }
}

/// Full-horizon simulation with all-hold actions.
pub fn run_uncontrolled(system: &GridSystem, scenario: &Scenario) -> Result<Trajectory> {
    run_with_schedule(system, scenario, &[])
}

/// Simulates with a fixed schedule: `schedule[k][a]` sheds one step in area
/// `a + 1` at control instant `k`. Rounds beyond the schedule hold.
pub fn run_with_schedule(
    system: &GridSystem,
    scenario: &Scenario,
    schedule: &[Vec<bool>],
) -> Result<Trajectory> {
    let rounds = system.config().timing.rounds as usize;
    if schedule.len() > rounds {
        return Err(Error::Invalid(format!(
            "schedule has {} rounds, at most {rounds} allowed",
            schedule.len()
        )));
    }
    let mut sim = Simulation::new(system, scenario.clone())?;
    sim.run_to_clearance();
    let hold = vec![false; system.area_count()];
    for k in 0..rounds {
        sim.step(schedule.get(k).unwrap_or(&hold))?;
    }
    sim.run_to_horizon();
    Ok(Trajectory {
        scenario: scenario.clone(),
        clearance: scenario.clearance_time(),
        collapsed: sim.is_collapsed(),
        samples: sim.samples,
    })
}
