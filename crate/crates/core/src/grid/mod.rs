//! Reduced-order dynamic grid: a Thevenin source feeding reactive lines and
//! exponential-recovery loads, with midpoint shunt faults and stepwise load
//! shedding at one controllable bus per area.

mod config;
mod default;
mod env;
mod powerflow;
mod sim;
mod system;

pub use config::{
    BusConfig, FaultDefaults, GridConfig, LineConfig, SourceConfig, TimingConfig, GRID_CONFIG_VERSION,
};
pub use default::{four_area, toy_two_area};
pub use env::{EnvSettings, StepResult, UvlsEnv, ACTION_COUNT, HOLD, SHED};
pub use powerflow::{NetworkSolution, MAX_ITERATIONS, TOLERANCE};
pub use sim::{
    run_uncontrolled, run_with_schedule, shed_load, IntervalOutcome, LoadState, Sample, Scenario,
    ShedOutcome, SimClock, SimStatus, Simulation, Trajectory, FAULT_DURATION_RANGE, LOAD_SCALE_RANGE,
};
pub use system::{solve_network, GridSystem, SteadyState};
