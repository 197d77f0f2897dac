//! CSV writers and the shedding-schedule reader. Floats carry 9 significant
//! digits, lines end with LF.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::grid::{Scenario, Trajectory};
use crate::tvrc::{MetricsReport, MetricsSummary, TvrcEnvelope};

pub const TRAJECTORY_HEADER: &str = "t,bus,voltage_pu,ucum";
pub const ENVELOPE_HEADER: &str = "t,threshold_pu";
pub const SCENARIO_HEADER: &str = "index,seed,load_scale,fault_line,fault_start,fault_duration,severity";
pub const SUMMARY_HEADER: &str = "controller,n_test,r_fal_pct,p_dev_pct,v_dev_pu,r_tvrc_pct";
pub const DELTA_HEADER: &str =
    "case_id,controller,reference,success,ref_success,shed_pct_delta,vdev_pu_delta";

/// One row per sample per bus.
pub fn write_trajectory<W: Write>(traj: &Trajectory, mut w: W) -> Result<()> {
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for s in &traj.samples {
        for (bus, (v, u)) in s.voltages.iter().zip(&s.u_cum).enumerate() {
            writeln!(w, "{},{bus},{},{}", sig9(s.time), sig9(*v), sig9(*u))?;
        }
    }
    Ok(())
}

/// Step series of the envelope: one row at each threshold change and a
/// closing row at `end`.
pub fn write_envelope<W: Write>(env: &TvrcEnvelope, t_fc: f64, end: f64, mut w: W) -> Result<()> {
    writeln!(w, "{ENVELOPE_HEADER}")?;
    for (offset, level) in env.steps() {
        writeln!(w, "{},{}", sig9(t_fc + offset), sig9(*level))?;
    }
    let last = env.final_level();
    writeln!(w, "{},{}", sig9(end), sig9(last))?;
    Ok(())
}

pub fn write_scenarios<W: Write>(scenarios: &[Scenario], mut w: W) -> Result<()> {
    writeln!(w, "{SCENARIO_HEADER}")?;
    for (k, s) in scenarios.iter().enumerate() {
        writeln!(
            w,
            "{k},{},{},{},{},{},{}",
            s.seed,
            sig9(s.load_scale),
            s.fault_line,
            sig9(s.fault_start),
            sig9(s.fault_duration),
            sig9(s.severity)
        )?;
    }
    Ok(())
}

/// One row per controller.
pub fn write_summaries<W: Write>(rows: &[MetricsSummary], mut w: W) -> Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.controller,
            r.n_test,
            sig9(r.r_fal_pct),
            sig9(r.p_dev_pct),
            sig9(r.v_dev_pu),
            sig9(r.r_tvrc_pct)
        )?;
    }
    Ok(())
}

/// Per-case differences of every report against the first one.
pub fn write_deltas<W: Write>(reports: &[MetricsReport], mut w: W) -> Result<()> {
    writeln!(w, "{DELTA_HEADER}")?;
    let Some(reference) = reports.first() else {
        return Ok(());
    };
    for rep in &reports[1..] {
        if rep.cases.len() != reference.cases.len() {
            return Err(Error::shape(
                "paired suite",
                reference.cases.len(),
                rep.cases.len(),
            ));
        }
        for (c, r) in rep.cases.iter().zip(&reference.cases) {
            if c.case_id != r.case_id {
                return Err(Error::Invalid("reports are not paired case by case".into()));
            }
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                c.case_id,
                rep.summary.controller,
                reference.summary.controller,
                c.success,
                r.success,
                sig9(c.shed_pct - r.shed_pct),
                sig9(c.vdev_pu - r.vdev_pu)
            )?;
        }
    }
    Ok(())
}

/// Reads a fixed shedding schedule: one line per control round, one `0`/`1`
/// per area separated by commas. Blank lines and `#` comments are skipped.
pub fn parse_schedule(text: &str, areas: usize, max_rounds: usize) -> Result<Vec<Vec<bool>>> {
    let mut rounds = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| match f.trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::Parse(format!(
                    "line {}: expected 0 or 1, got {other:?}",
                    n + 1
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != areas {
            return Err(Error::Parse(format!(
                "line {}: {} entries for {areas} areas",
                n + 1,
                row.len()
            )));
        }
        rounds.push(row);
        if rounds.len() > max_rounds {
            return Err(Error::Parse(format!("schedule longer than {max_rounds} rounds")));
        }
    }
    Ok(rounds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_parsing() {
        let s = parse_schedule("# t_fc\n1,0\n\n0, 1  # second\n", 2, 5).unwrap();
        assert_eq!(s, vec![vec![true, false], vec![false, true]]);
        assert!(parse_schedule("1,0,1\n", 2, 5).is_err());
        assert!(parse_schedule("1,x\n", 2, 5).is_err());
        assert!(parse_schedule("1\n1\n1\n", 1, 2).is_err());
        assert_eq!(parse_schedule("", 3, 5).unwrap(), Vec::<Vec<bool>>::new());
    }

    #[test]
    fn envelope_rows_step_at_offsets() {
        let mut out = Vec::new();
        write_envelope(&TvrcEnvelope::default(), 1.1, 10.0, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "t,threshold_pu\n1.10000000,0.700000000\n1.43000000,0.800000000\n1.60000000,0.900000000\n2.60000000,0.950000000\n10.0000000,0.950000000\n"
        );
    }
}
