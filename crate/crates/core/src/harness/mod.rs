//! Scenario generation, experiment commands and file exports.

mod checkpoint;
mod commands;
mod config;
mod export;
mod scenarios;

pub use checkpoint::{
    AttentionRecord, Checkpoint, DqnAgentRecord, ModelRecord, RestoredModel, SacAgentRecord,
    CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use commands::{
    build_controller, closed_loop, cmd_compare, cmd_eval, cmd_gen_scenarios, cmd_simulate, cmd_train,
    evaluate_controller, train_controller, Comparison, Experiment, LatencyStats, RunManifest,
    SimulateRequest, Timed, TrainOutcome, CHECKPOINT_FILE, CURVE_FILE, MANIFEST_FILE, METRICS_FILE,
    SUMMARY_FILE,
};
pub use config::{ControllerKind, ExperimentConfig, GridPreset, EXPERIMENT_CONFIG_VERSION};
pub use export::{
    parse_schedule, write_deltas, write_envelope, write_scenarios, write_summaries, write_trajectory,
    DELTA_HEADER, ENVELOPE_HEADER, SCENARIO_HEADER, SUMMARY_HEADER, TRAJECTORY_HEADER,
};
pub use scenarios::{generate_scenarios, ScenarioStream};
