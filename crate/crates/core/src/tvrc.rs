//! Transient voltage recovery criteria: envelope deviations, agent states,
//! rewards, shedding cost and suite metrics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::grid::{EnvSettings, GridSystem, Scenario, UvlsEnv};

/// Samples closer than this to a window boundary count as on the boundary.
pub const BOUNDARY_SNAP: f64 = 1e-9;

/// Terminal voltage below this counts as a failed case.
pub const FAILURE_VOLTAGE: f64 = 0.5;

/// Staged minimum-voltage envelope, offsets in seconds after clearance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvrcEnvelope {
    steps: Vec<(f64, f64)>,
}

impl Default for TvrcEnvelope {
    fn default() -> Self {
        TvrcEnvelope {
            steps: vec![(0.0, 0.70), (0.33, 0.80), (0.5, 0.90), (1.5, 0.95)],
        }
    }
}

impl TvrcEnvelope {
    /// Builds an envelope from `(offset, level)` pairs. The first offset must
    /// be zero and both columns strictly increasing.
    pub fn new(steps: Vec<(f64, f64)>) -> Result<Self> {
        if steps.is_empty() || steps[0].0 != 0.0 {
            return Err(Error::Invalid("envelope must start at offset 0".into()));
        }
        if steps.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::NonFinite("envelope"));
        }
        for w in steps.windows(2) {
            if !(w[1].0 > w[0].0 && w[1].1 > w[0].1) {
                return Err(Error::Invalid(
                    "envelope offsets and levels must be strictly increasing".into(),
                ));
            }
        }
        Ok(TvrcEnvelope { steps })
    }

    pub fn steps(&self) -> &[(f64, f64)] {
        &self.steps
    }

    /// Level in force `offset` seconds after clearance. Windows are closed on
    /// the left.
    pub fn threshold(&self, offset: f64) -> Result<f64> {
        if offset.is_nan() || offset < -BOUNDARY_SNAP {
            return Err(Error::Invalid(format!(
                "envelope undefined {offset} s relative to clearance"
            )));
        }
        let level = self
            .steps
            .iter()
            .take_while(|(start, _)| *start <= offset + BOUNDARY_SNAP)
            .last()
            .map(|(_, v)| *v)
            .unwrap_or(self.steps[0].1);
        Ok(level)
    }

    /// `V - threshold(t - t_fc)`; negative means a violation.
    pub fn deviation(&self, v: f64, t: f64, t_fc: f64) -> Result<f64> {
        Ok(v - self.threshold(t - t_fc)?)
    }

    /// Final level, the one that applies at the end of the episode.
    pub fn final_level(&self) -> f64 {
        self.steps.last().expect("non-empty").1
    }
}

/// Fixed-length state of one agent: `n_r` samples of every in-area bus,
/// oldest first, each sample listing the buses in area order.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentObservation {
    pub values: Vec<f64>,
    pub n_r: usize,
    pub buses: usize,
}

impl AgentObservation {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True if any (non-padding) entry is a violation.
    pub fn any_violation(&self) -> bool {
        self.values.iter().any(|d| *d < 0.0)
    }
}

/// Keeps the newest `n_r` entries of `history` (one deviation vector per
/// sample), zero-padding at the front when fewer exist.
pub fn build_state(history: &[Vec<f64>], buses: usize, n_r: usize) -> Result<AgentObservation> {
    if let Some(h) = history.iter().find(|h| h.len() != buses) {
        return Err(Error::shape("deviation sample", buses, h.len()));
    }
    let mut values = vec![0.0; n_r * buses];
    let take = history.len().min(n_r);
    let offset = (n_r - take) * buses;
    for (k, h) in history[history.len() - take..].iter().enumerate() {
        values[offset + k * buses..offset + (k + 1) * buses].copy_from_slice(h);
    }
    Ok(AgentObservation { values, n_r, buses })
}

/// Per-agent reward for one control interval: `-m` if any in-area sample
/// violates, otherwise the remaining share `p_l * (1 - u_cum)`.
pub fn reward(area_deviations: &[f64], u_cum: f64, p_l: f64, m: f64) -> f64 {
    if area_deviations.iter().any(|d| *d < 0.0) {
        -m
    } else {
        p_l * (1.0 - u_cum)
    }
}

/// Total shed load `sum(P_i u_i)`.
pub fn shed_cost(u: &[f64], p_l: &[f64]) -> Result<f64> {
    if u.len() != p_l.len() {
        return Err(Error::shape("shed fractions", p_l.len(), u.len()));
    }
    if u.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::Invalid("shed fractions must lie in [0, 1]".into()));
    }
    Ok(u.iter().zip(p_l).map(|(a, b)| a * b).sum())
}

/// Signed mean of the terminal deviations over all buses.
pub fn mean_voltage_deviation(final_deviations: &[f64]) -> Result<f64> {
    if final_deviations.is_empty() {
        return Err(Error::Invalid("mean deviation over an empty bus set".into()));
    }
    Ok(final_deviations.iter().sum::<f64>() / final_deviations.len() as f64)
}

/// Outcome of one test case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: usize,
    pub seed: u64,
    pub success: bool,
    pub failure: bool,
    /// Shed load as a percentage of the initial total load.
    pub shed_pct: f64,
    pub vdev_pu: f64,
}

/// Aggregate metrics over a suite, in the order of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub controller: String,
    pub n_test: usize,
    pub r_fal_pct: f64,
    pub p_dev_pct: f64,
    pub v_dev_pu: f64,
    pub r_tvrc_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub summary: MetricsSummary,
    pub cases: Vec<CaseRecord>,
}

impl MetricsReport {
    /// Aggregates case records (sorted by case id first).
    pub fn from_cases(controller: &str, mut cases: Vec<CaseRecord>) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::Invalid("metrics need at least one case".into()));
        }
        cases.sort_by_key(|c| c.case_id);
        let n = cases.len() as f64;
        let successes = cases.iter().filter(|c| c.success).count();
        let failures = cases.iter().filter(|c| c.failure).count();
        let summary = MetricsSummary {
            controller: controller.to_string(),
            n_test: cases.len(),
            r_fal_pct: failures as f64 / n * 100.0,
            p_dev_pct: cases.iter().map(|c| c.shed_pct).sum::<f64>() / n,
            v_dev_pu: cases.iter().map(|c| c.vdev_pu).sum::<f64>() / n,
            r_tvrc_pct: successes as f64 / n * 100.0,
        };
        Ok(MetricsReport { summary, cases })
    }

    pub const CSV_HEADER: &'static str = "case_id,seed,success,failure,shed_pct,vdev_pu";

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for c in &self.cases {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                c.case_id,
                c.seed,
                c.success as u8,
                c.failure as u8,
                sig9(c.shed_pct),
                sig9(c.vdev_pu)
            )?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }
}

/// A decentralized shedding policy: one action per area from the agents'
/// own observations.
pub trait Controller {
    fn name(&self) -> &str;

    /// Called before each episode.
    fn begin_episode(&mut self) {}

    fn act(&mut self, observations: &[AgentObservation]) -> Result<Vec<usize>>;
}

/// Runs one scenario under `controller`. Controller errors end the case as a
/// failure.
pub fn evaluate_case(
    system: &GridSystem,
    settings: &EnvSettings,
    controller: &mut dyn Controller,
    case_id: usize,
    scenario: &Scenario,
) -> Result<CaseRecord> {
    let mut env = UvlsEnv::new(system, scenario.clone(), settings)?;
    controller.begin_episode();
    let mut obs = env.observations();
    while !env.is_done() {
        let actions = match controller.act(&obs) {
            Ok(a) => a,
            Err(e) => {
                log::warn!("controller {} failed on case {case_id}: {e}", controller.name());
                let mut rec = env.case_record(case_id)?;
                rec.success = false;
                rec.failure = true;
                return Ok(rec);
            }
        };
        obs = env.step(&actions)?.observations;
    }
    env.case_record(case_id)
}

/// Evaluates `controller` on every scenario; case ids are scenario indices.
pub fn evaluate_suite(
    system: &GridSystem,
    settings: &EnvSettings,
    controller: &mut dyn Controller,
    scenarios: &[Scenario],
) -> Result<MetricsReport> {
    let cases = scenarios
        .iter()
        .enumerate()
        .map(|(i, s)| evaluate_case(system, settings, controller, i, s))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_cases(controller.name(), cases)
}
