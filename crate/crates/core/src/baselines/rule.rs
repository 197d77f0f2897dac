use crate::error::Result;
use crate::grid::{HOLD, SHED};
use crate::tvrc::{AgentObservation, Controller};

/// Envelope-triggered shedding: an area sheds one step whenever one of its
/// buses violated the envelope during the last interval, until its cap.
#[derive(Clone, Debug, PartialEq)]
pub struct RulePolicy {
    max_rounds: u32,
    rounds: Vec<u32>,
}

/// Decision for one area given its observation and the rounds it has shed.
pub fn rule_policy(obs: &AgentObservation, rounds_taken: u32, max_rounds: u32) -> usize {
    if rounds_taken < max_rounds && obs.any_violation() {
        SHED
    } else {
        HOLD
    }
}

impl RulePolicy {
    pub fn new(max_rounds: u32) -> Self {
        RulePolicy {
            max_rounds,
            rounds: Vec::new(),
        }
    }

    /// Rounds shed so far, per area.
    pub fn rounds(&self) -> &[u32] {
        &self.rounds
    }
}

impl Controller for RulePolicy {
    fn name(&self) -> &str {
        "rule"
    }

    fn begin_episode(&mut self) {
        self.rounds.clear();
    }

    fn act(&mut self, observations: &[AgentObservation]) -> Result<Vec<usize>> {
        self.rounds.resize(observations.len(), 0);
        Ok(observations
            .iter()
            .zip(self.rounds.iter_mut())
            .map(|(o, r)| {
                let a = rule_policy(o, *r, self.max_rounds);
                if a == SHED {
                    *r += 1;
                }
                a
            })
            .collect())
    }
}

/// Never sheds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NoControl;

impl Controller for NoControl {
    fn name(&self) -> &str {
        "none"
    }

    fn act(&mut self, observations: &[AgentObservation]) -> Result<Vec<usize>> {
        Ok(vec![HOLD; observations.len()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(values: Vec<f64>) -> AgentObservation {
        AgentObservation {
            n_r: values.len(),
            buses: 1,
            values,
        }
    }

    #[test]
    fn threshold_rule() {
        assert_eq!(rule_policy(&obs(vec![0.0, 0.1, 0.2]), 0, 5), HOLD);
        assert_eq!(rule_policy(&obs(vec![0.1, -0.01, 0.2]), 0, 5), SHED);
        assert_eq!(rule_policy(&obs(vec![-0.3]), 5, 5), HOLD);
    }

    #[test]
    fn persistent_violation_sheds_five_rounds() {
        let mut p = RulePolicy::new(5);
        p.begin_episode();
        let bad = vec![obs(vec![-0.1]), obs(vec![0.1])];
        let mut sheds = 0;
        for _ in 0..8 {
            let a = p.act(&bad).unwrap();
            assert_eq!(a[1], HOLD);
            sheds += a[0];
        }
        assert_eq!(sheds, 5);
        assert_eq!(p.rounds(), &[5, 0]);
        p.begin_episode();
        assert_eq!(p.act(&bad).unwrap()[0], SHED);
    }
}
