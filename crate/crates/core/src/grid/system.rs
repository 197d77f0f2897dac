use super::config::GridConfig;
use super::powerflow::{Demand, LineRef, Network, NetworkSolution};
use crate::error::{Error, Result};

/// A validated grid: topology, load records, area map and its base-case
/// steady state.
#[derive(Clone, Debug)]
pub struct GridSystem {
    config: GridConfig,
    network: Network,
    /// Buses of each area, `areas[a - 1]` for area `a`.
    areas: Vec<Vec<usize>>,
    controllable: Vec<usize>,
    steady: SteadyState,
}

/// Equilibrium of the network with loads on their steady-state characteristic.
#[derive(Clone, Debug, PartialEq)]
pub struct SteadyState {
    pub solution: NetworkSolution,
    /// Load recovery state `x_p = P_s(V) - P_t(V)` per bus.
    pub xp: Vec<f64>,
}

impl GridSystem {
    /// Validates `config` and solves its base-case steady state.
    pub fn build(config: GridConfig) -> Result<Self> {
        config.validate()?;
        let n = config.buses.len();
        let network = Self::network_for(&config, None);
        let area_count = config.area_count();
        let mut areas = vec![Vec::new(); area_count];
        let mut controllable = vec![0; area_count];
        for b in &config.buses {
            if b.area > 0 {
                areas[b.area - 1].push(b.id);
                if b.controllable {
                    controllable[b.area - 1] = b.id;
                }
            }
        }
        if areas.iter().any(|a| a.is_empty()) && area_count > 0 {
            return Err(Error::Config("area numbering must be contiguous from 1".into()));
        }
        let mut system = GridSystem {
            config,
            network,
            areas,
            controllable,
            steady: SteadyState {
                solution: NetworkSolution {
                    voltages: vec![0.0; n],
                    angles: vec![0.0; n],
                    iterations: 0,
                    residual: 0.0,
                    extra: None,
                },
                xp: vec![0.0; n],
            },
        };
        let p0 = system.scaled_p0(1.0);
        system.steady = system.steady_state(&p0)?;
        Ok(system)
    }

    pub(crate) fn network_for(config: &GridConfig, fault: Option<(usize, f64)>) -> Network {
        let lines: Vec<LineRef> = config
            .lines
            .iter()
            .map(|l| LineRef {
                from: l.from,
                to: l.to,
                x: l.x,
            })
            .collect();
        let shunts: Vec<f64> = config.buses.iter().map(|b| b.shunt_b).collect();
        Network::new(
            config.buses.len(),
            &lines,
            &shunts,
            config.source.bus,
            config.source.emf_pu,
            config.source.reactance_pu,
            fault,
        )
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn bus_count(&self) -> usize {
        self.config.buses.len()
    }

    pub fn area_count(&self) -> usize {
        self.areas.len()
    }

    /// Buses of area `area` (1-based).
    pub fn area_buses(&self, area: usize) -> &[usize] {
        &self.areas[area - 1]
    }

    /// Controllable bus of area `area` (1-based).
    pub fn controllable_bus(&self, area: usize) -> usize {
        self.controllable[area - 1]
    }

    pub fn controllable_buses(&self) -> &[usize] {
        &self.controllable
    }

    pub fn steady(&self) -> &SteadyState {
        &self.steady
    }

    pub fn base_p0(&self) -> Vec<f64> {
        self.config.buses.iter().map(|b| b.p0).collect()
    }

    pub fn scaled_p0(&self, scale: f64) -> Vec<f64> {
        self.config.buses.iter().map(|b| b.p0 * scale).collect()
    }

    pub fn total_load(&self) -> f64 {
        self.config.buses.iter().map(|b| b.p0).sum()
    }

    pub(crate) fn network(&self) -> &Network {
        &self.network
    }

    pub(crate) fn q_ratios(&self) -> Vec<f64> {
        self.config.buses.iter().map(|b| b.q_ratio).collect()
    }

    pub(crate) fn exponents(&self, transient: bool) -> Vec<f64> {
        self.config
            .buses
            .iter()
            .map(|b| if transient { b.alpha_t } else { b.alpha_s })
            .collect()
    }

    /// Equilibrium for per-bus initial loads `p0`: solves the network with
    /// loads on `P_s(V)` and resolves `x_p = P_s(V) - P_t(V)`.
    pub fn steady_state(&self, p0: &[f64]) -> Result<SteadyState> {
        let n = self.bus_count();
        let zeros = vec![0.0; n];
        let ones = vec![1.0; n];
        let exps = self.exponents(false);
        let q = self.q_ratios();
        let demand = Demand {
            constant: &zeros,
            coef: p0,
            exponent: &exps,
            scale: &ones,
            q_ratio: &q,
        };
        let solution = self.network.solve(&demand, None)?;
        let xp = self
            .config
            .buses
            .iter()
            .zip(p0)
            .zip(&solution.voltages)
            .map(|((b, p), v)| p * (v.powf(b.alpha_s) - v.powf(b.alpha_t)))
            .collect();
        Ok(SteadyState { solution, xp })
    }
}

/// Constant-power network solve: `demands[i]` is the active load at bus `i`
/// (pu), reactive load follows each bus's `q_ratio`. Non-convergence is
/// reported as [`Error::Collapse`].
pub fn solve_network(system: &GridSystem, demands: &[f64]) -> Result<NetworkSolution> {
    let n = system.bus_count();
    if demands.len() != n {
        return Err(Error::shape("bus demands", n, demands.len()));
    }
    if demands.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::Invalid("demands must be finite and >= 0".into()));
    }
    let zeros = vec![0.0; n];
    let ones = vec![1.0; n];
    let q = system.q_ratios();
    let demand = Demand {
        constant: demands,
        coef: &zeros,
        exponent: &zeros,
        scale: &ones,
        q_ratio: &q,
    };
    system.network.solve(&demand, None)
}
