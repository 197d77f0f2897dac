use super::config::{
    BusConfig, FaultDefaults, GridConfig, LineConfig, SourceConfig, TimingConfig, GRID_CONFIG_VERSION,
};

/// Radial-with-ring layout: a hub bus behind the source reactance, and per
/// area a transfer bus (fed from the hub) and a controllable load bus behind
/// it. Transfer buses are tied in a ring.
struct Layout {
    areas: usize,
    emf: f64,
    source_x: f64,
    feeder_x: f64,
    lateral_x: f64,
    ring_x: f64,
    transfer_p: f64,
    load_p: f64,
    q_ratio: f64,
    shunt_per_p: f64,
    tp: f64,
    weights: Vec<f64>,
}

impl Layout {
    fn build(&self, name: &str, fault: FaultDefaults) -> GridConfig {
        let mut buses = vec![BusConfig {
            id: 0,
            area: 0,
            controllable: false,
            p0: 0.0,
            q_ratio: 0.0,
            alpha_t: 2.0,
            alpha_s: 0.0,
            tp: self.tp,
            shunt_b: 0.0,
        }];
        let mut lines = Vec::new();
        for k in 1..=self.areas {
            let w = self.weights[k - 1];
            for (p, controllable) in [(self.transfer_p * w, false), (self.load_p * w, true)] {
                buses.push(BusConfig {
                    id: buses.len(),
                    area: k,
                    controllable,
                    p0: p,
                    q_ratio: self.q_ratio,
                    alpha_t: 2.0,
                    alpha_s: 0.0,
                    tp: self.tp,
                    shunt_b: self.shunt_per_p * p,
                });
            }
            let (a, c) = (2 * k - 1, 2 * k);
            lines.push(LineConfig {
                from: 0,
                to: a,
                x: self.feeder_x,
            });
            lines.push(LineConfig {
                from: a,
                to: c,
                x: self.lateral_x,
            });
        }
        if self.areas == 2 {
            lines.push(LineConfig {
                from: 1,
                to: 3,
                x: self.ring_x,
            });
        } else if self.areas > 2 {
            for k in 1..=self.areas {
                let next = k % self.areas + 1;
                lines.push(LineConfig {
                    from: 2 * k - 1,
                    to: 2 * next - 1,
                    x: self.ring_x,
                });
            }
        }
        GridConfig {
            version: GRID_CONFIG_VERSION,
            name: name.to_string(),
            source: SourceConfig {
                emf_pu: self.emf,
                reactance_pu: self.source_x,
                bus: 0,
            },
            buses,
            lines,
            fault,
            timing: TimingConfig::default(),
        }
    }
}

/// Four-area benchmark grid (9 buses).
pub fn four_area() -> GridConfig {
    Layout {
        areas: 4,
        emf: 1.0,
        source_x: 0.05,
        feeder_x: 0.12,
        lateral_x: 0.08,
        ring_x: 0.3,
        transfer_p: 0.4,
        load_p: 0.6,
        q_ratio: 0.5,
        shunt_per_p: 0.7,
        tp: 3.0,
        weights: vec![1.0; 4],
    }
    .build(
        "four-area",
        FaultDefaults {
            line: 0,
            lines: vec![0, 2, 4, 6],
            start_s: 1.0,
            duration_s: 0.1,
            severity: 20.0,
            severity_range: [10.0, 30.0],
            load_scale: 1.13,
        },
    )
}

/// Two-area toy grid (5 buses) for quick tests.
pub fn toy_two_area() -> GridConfig {
    Layout {
        areas: 2,
        emf: 1.0,
        source_x: 0.09,
        feeder_x: 0.12,
        lateral_x: 0.08,
        ring_x: 0.3,
        transfer_p: 0.4,
        load_p: 0.6,
        q_ratio: 0.5,
        shunt_per_p: 0.7,
        tp: 3.0,
        weights: vec![1.0; 2],
    }
    .build(
        "toy-two-area",
        FaultDefaults {
            line: 0,
            lines: vec![0, 2],
            start_s: 1.0,
            duration_s: 0.1,
            severity: 20.0,
            severity_range: [10.0, 30.0],
            load_scale: 1.13,
        },
    )
}
