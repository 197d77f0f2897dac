use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSystem, Scenario, FAULT_DURATION_RANGE, LOAD_SCALE_RANGE};

/// Seeded contingency generator. Scenario `k` depends only on `(seed, k)`:
/// each index gets its own ChaCha stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStream {
    pub seed: u64,
    pub load_scale: [f64; 2],
    pub duration: [f64; 2],
    pub lines: Vec<usize>,
    pub severity: [f64; 2],
    pub fault_start: f64,
}

impl ScenarioStream {
    /// Bounds taken from the grid's fault defaults.
    pub fn for_system(system: &GridSystem, seed: u64) -> Self {
        let f = &system.config().fault;
        ScenarioStream {
            seed,
            load_scale: LOAD_SCALE_RANGE,
            duration: FAULT_DURATION_RANGE,
            lines: f.lines.clone(),
            severity: f.severity_range,
            fault_start: f.start_s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lines.is_empty() {
            return Err(Error::Invalid(
                "scenario stream has no candidate fault lines".into(),
            ));
        }
        for (name, [lo, hi]) in [
            ("load scale", self.load_scale),
            ("duration", self.duration),
            ("severity", self.severity),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Invalid(format!("bad {name} bounds [{lo}, {hi}]")));
            }
        }
        let [lo, hi] = self.load_scale;
        if lo < LOAD_SCALE_RANGE[0] || hi > LOAD_SCALE_RANGE[1] {
            return Err(Error::Invalid(format!("load scale bounds [{lo}, {hi}] too wide")));
        }
        let [lo, hi] = self.duration;
        if lo < FAULT_DURATION_RANGE[0] || hi > FAULT_DURATION_RANGE[1] {
            return Err(Error::Invalid(format!("duration bounds [{lo}, {hi}] too wide")));
        }
        if !(self.fault_start.is_finite() && self.fault_start >= 0.0) || self.severity[0] < 0.0 {
            return Err(Error::Invalid("fault start and severity must be >= 0".into()));
        }
        Ok(())
    }

    pub fn scenario(&self, k: usize) -> Result<Scenario> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(k as u64);
        let draw = |rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]| {
            if lo == hi {
                lo
            } else {
                rng.gen_range(lo..=hi)
            }
        };
        let seed = rng.gen::<u64>();
        let load_scale = draw(&mut rng, self.load_scale);
        let fault_line = self.lines[rng.gen_range(0..self.lines.len())];
        let fault_duration = draw(&mut rng, self.duration);
        let severity = draw(&mut rng, self.severity);
        Ok(Scenario {
            load_scale,
            fault_line,
            fault_start: self.fault_start,
            fault_duration,
            severity,
            seed,
        })
    }
}

/// Scenarios `0..count` of `stream`.
pub fn generate_scenarios(stream: &ScenarioStream, count: usize) -> Result<Vec<Scenario>> {
    if count == 0 {
        return Err(Error::Invalid("scenario count must be at least 1".into()));
    }
    (0..count).map(|k| stream.scenario(k)).collect()
}
