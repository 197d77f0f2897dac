//! The experiment commands behind the CLI. Each writes its outputs into the
//! configured `out` directory and returns what it computed.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{ControllerKind, ExperimentConfig};
use super::export::{
    parse_schedule, write_deltas, write_envelope, write_scenarios, write_summaries, write_trajectory,
};
use super::scenarios::{generate_scenarios, ScenarioStream};
use crate::baselines::{dqn_train, sac_no_attention_train, NoControl, RulePolicy};
use crate::error::{Error, Result};
use crate::grid::{GridSystem, Scenario, Trajectory, UvlsEnv};
use crate::madrl::{train_sac, LearningCurve};
use crate::tvrc::{
    evaluate_suite, AgentObservation, Controller, MetricsReport, MetricsSummary, TvrcEnvelope,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CURVE_FILE: &str = "learning_curve.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Training scenarios use their own stream, decorrelated from the parameter
/// generator that shares the seed.
const TRAIN_STREAM_TAG: u64 = 0x9e37_79b9_7f4a_7c15;

/// Grid and settings of one experiment.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub system: GridSystem,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let system = GridSystem::build(config.grid_config()?)?;
        Ok(Experiment { config, system })
    }

    pub fn training_stream(&self) -> ScenarioStream {
        ScenarioStream::for_system(&self.system, self.config.seed ^ TRAIN_STREAM_TAG)
    }

    /// Scenario of training episode `episode`: a fresh draw, or one of the
    /// first `train_scenarios` draws in turn.
    pub fn training_scenario(&self, episode: usize) -> Result<Scenario> {
        let k = match self.config.train_scenarios {
            0 => episode,
            n => episode % n,
        };
        self.training_stream().scenario(k)
    }

    /// The frozen training set (empty when scenarios are drawn fresh).
    pub fn frozen_training_set(&self) -> Result<Vec<Scenario>> {
        match self.config.train_scenarios {
            0 => Ok(Vec::new()),
            n => generate_scenarios(&self.training_stream(), n),
        }
    }

    /// Test suite shared by every controller.
    pub fn test_suite(&self) -> Result<Vec<Scenario>> {
        generate_scenarios(
            &ScenarioStream::for_system(&self.system, self.config.suite_seed),
            self.config.n_test,
        )
    }

    fn out_dir(&self) -> Result<&Path> {
        let out = self.config.out.as_path();
        fs::create_dir_all(out)?;
        Ok(out)
    }
}

/// Per-agent greedy decision time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub decisions: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    pub fn from_samples(mut ms: Vec<f64>) -> Self {
        if ms.is_empty() {
            return LatencyStats::default();
        }
        ms.sort_by(f64::total_cmp);
        let pick = |q: f64| ms[((ms.len() - 1) as f64 * q).round() as usize];
        LatencyStats {
            decisions: ms.len(),
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p50_ms: pick(0.5),
            p99_ms: pick(0.99),
            max_ms: *ms.last().expect("non-empty"),
        }
    }
}

/// Wraps a controller and records the wall time of every joint decision
/// divided by the number of agents.
pub struct Timed<C> {
    inner: C,
    per_agent_ms: Vec<f64>,
}

impl<C: Controller> Timed<C> {
    pub fn new(inner: C) -> Self {
        Timed {
            inner,
            per_agent_ms: Vec::new(),
        }
    }

    pub fn stats(&self) -> LatencyStats {
        LatencyStats::from_samples(self.per_agent_ms.clone())
    }
}

impl<C: Controller> Controller for Timed<C> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn begin_episode(&mut self) {
        self.inner.begin_episode()
    }

    fn act(&mut self, observations: &[AgentObservation]) -> Result<Vec<usize>> {
        let start = Instant::now();
        let actions = self.inner.act(observations)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        self.per_agent_ms.push(ms / observations.len().max(1) as f64);
        Ok(actions)
    }
}

/// Run record written next to every command's outputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub crate_version: String,
    pub controller: Option<ControllerKind>,
    pub grid: String,
    pub seed: u64,
    pub suite_seed: u64,
    pub episodes: usize,
    pub n_test: usize,
    pub train_seconds: Option<f64>,
    pub eval_seconds: Option<f64>,
    pub total_seconds: f64,
    pub skipped_updates: Option<usize>,
    pub decision_latency: Option<LatencyStats>,
    pub outputs: Vec<String>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    fn new(command: &str, exp: &Experiment) -> Self {
        let c = &exp.config;
        RunManifest {
            command: command.into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            controller: Some(c.controller),
            grid: exp.system.config().name.clone(),
            seed: c.seed,
            suite_seed: c.suite_seed,
            episodes: c.episodes,
            n_test: c.n_test,
            config: c.clone(),
            ..RunManifest::default()
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(
            dir.join(MANIFEST_FILE),
        )?)?)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub curve: LearningCurve,
    pub manifest: RunManifest,
}

/// Trains the configured controller without writing anything.
pub fn train_controller(exp: &Experiment) -> Result<(Checkpoint, LearningCurve, usize)> {
    let c = &exp.config;
    let source = |k: usize| exp.training_scenario(k);
    let grid = exp.system.config().name.as_str();
    match c.controller {
        ControllerKind::Proposed | ControllerKind::Masac => {
            let attention = c.controller == ControllerKind::Proposed;
            let t = if attention {
                train_sac(
                    &exp.system,
                    &c.env,
                    &c.hyperparameters,
                    &source,
                    c.episodes,
                    c.seed,
                    true,
                )?
            } else {
                sac_no_attention_train(
                    &exp.system,
                    &c.env,
                    &c.hyperparameters,
                    &source,
                    c.episodes,
                    c.seed,
                )?
            };
            let ck = Checkpoint::from_sac(c.controller, grid, &c.env, &t.learner, &t.rng);
            Ok((ck, t.curve, t.learner.skipped_updates()))
        }
        ControllerKind::Madqn => {
            let t = dqn_train(
                &exp.system,
                &c.env,
                &c.hyperparameters,
                &source,
                c.episodes,
                c.seed,
            )?;
            let ck = Checkpoint::from_dqn(grid, &c.env, &t.learner, &t.rng);
            Ok((ck, t.curve, t.learner.skipped_updates()))
        }
        k => Err(Error::Config(format!("controller {k} has nothing to train"))),
    }
}

/// Trains and writes the checkpoint, learning curve and manifest.
pub fn cmd_train(config: ExperimentConfig) -> Result<TrainOutcome> {
    let start = Instant::now();
    let exp = Experiment::new(config)?;
    if exp.config.episodes == 0 {
        return Err(Error::Config("episodes must be at least 1 for training".into()));
    }
    let (checkpoint, curve, skipped) = train_controller(&exp)?;
    let out = exp.out_dir()?;
    checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    curve.write_csv(BufWriter::new(File::create(out.join(CURVE_FILE))?))?;
    let mut manifest = RunManifest::new("train", &exp);
    manifest.train_seconds = Some(start.elapsed().as_secs_f64());
    manifest.total_seconds = start.elapsed().as_secs_f64();
    manifest.skipped_updates = Some(skipped);
    manifest.outputs = vec![CHECKPOINT_FILE.into(), CURVE_FILE.into(), MANIFEST_FILE.into()];
    manifest.write(out)?;
    log::info!(
        "trained {} for {} episodes",
        exp.config.controller,
        exp.config.episodes
    );
    Ok(TrainOutcome {
        checkpoint,
        curve,
        manifest,
    })
}

/// A controller ready to run. Learned ones come from a checkpoint.
pub fn build_controller(
    exp: &Experiment,
    kind: ControllerKind,
    checkpoint: Option<&Checkpoint>,
) -> Result<Box<dyn Controller>> {
    match kind {
        ControllerKind::Rule => Ok(Box::new(RulePolicy::new(exp.system.config().timing.rounds))),
        ControllerKind::None => Ok(Box::new(NoControl)),
        learned => {
            let ck = checkpoint
                .ok_or_else(|| Error::Config(format!("controller {learned} needs a checkpoint")))?;
            check_compatible(exp, ck)?;
            Ok(Box::new(ck.restore()?.policy(ck.controller)))
        }
    }
}

fn check_compatible(exp: &Experiment, ck: &Checkpoint) -> Result<()> {
    let name = &exp.system.config().name;
    if &ck.grid != name {
        return Err(Error::Config(format!(
            "checkpoint was trained on grid {:?}, not {name:?}",
            ck.grid
        )));
    }
    if ck.settings != exp.config.env {
        return Err(Error::Config(
            "checkpoint environment settings differ from the config".into(),
        ));
    }
    Ok(())
}

/// Evaluates one controller on the test suite and records latency.
pub fn evaluate_controller(
    exp: &Experiment,
    kind: ControllerKind,
    checkpoint: Option<&Checkpoint>,
    suite: &[Scenario],
) -> Result<(MetricsReport, LatencyStats)> {
    let mut timed = Timed::new(build_controller(exp, kind, checkpoint)?);
    let mut report = evaluate_suite(&exp.system, &exp.config.env, &mut timed, suite)?;
    report.summary.controller = kind.as_str().into();
    Ok((report, timed.stats()))
}

impl Controller for Box<dyn Controller> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn begin_episode(&mut self) {
        (**self).begin_episode()
    }

    fn act(&mut self, observations: &[AgentObservation]) -> Result<Vec<usize>> {
        (**self).act(observations)
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read checkpoint {}: {io}", path.display())),
        other => other,
    })
}

/// Evaluates the configured controller. Learned controllers read
/// `checkpoint`, or `out/checkpoint.json` when none is given.
pub fn cmd_eval(config: ExperimentConfig, checkpoint: Option<&Path>) -> Result<(MetricsReport, RunManifest)> {
    let start = Instant::now();
    let exp = Experiment::new(config)?;
    let kind = exp.config.controller;
    let ck = if kind.is_learned() {
        let path = checkpoint
            .map(Path::to_path_buf)
            .unwrap_or_else(|| exp.config.out.join(CHECKPOINT_FILE));
        let ck = load_checkpoint(&path)?;
        if ck.controller != kind {
            return Err(Error::Config(format!(
                "checkpoint holds {}, config asks for {kind}",
                ck.controller
            )));
        }
        Some(ck)
    } else {
        None
    };
    let suite = exp.test_suite()?;
    let (report, latency) = evaluate_controller(&exp, kind, ck.as_ref(), &suite)?;
    let out = exp.out_dir()?;
    report.write_csv(BufWriter::new(File::create(out.join(METRICS_FILE))?))?;
    fs::write(out.join(SUMMARY_FILE), report.summary_json() + "\n")?;
    let mut manifest = RunManifest::new("eval", &exp);
    manifest.eval_seconds = Some(start.elapsed().as_secs_f64());
    manifest.total_seconds = start.elapsed().as_secs_f64();
    manifest.decision_latency = Some(latency);
    manifest.outputs = vec![METRICS_FILE.into(), SUMMARY_FILE.into(), MANIFEST_FILE.into()];
    manifest.write(out)?;
    Ok((report, manifest))
}

/// Comparison-table columns of every controller, as written to
/// `compare.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub grid: String,
    pub n_test: usize,
    pub suite_seed: u64,
    pub seed: u64,
    pub controllers: Vec<MetricsSummary>,
    pub decision_latency: Vec<(ControllerKind, LatencyStats)>,
}

impl Comparison {
    pub fn summary(&self, kind: ControllerKind) -> Option<&MetricsSummary> {
        self.controllers.iter().find(|s| s.controller == kind.as_str())
    }
}

/// Evaluates `kinds` on one shared suite. Learned controllers use
/// `out/<kind>/checkpoint.json`, training it first when missing. Writes
/// `compare.csv`, `compare.json` and `deltas.csv` (per-case differences
/// against the rule baseline, or the first controller without it).
pub fn cmd_compare(
    config: ExperimentConfig,
    kinds: &[ControllerKind],
) -> Result<(Comparison, Vec<MetricsReport>)> {
    let start = Instant::now();
    if kinds.is_empty() {
        return Err(Error::Config("nothing to compare".into()));
    }
    let exp = Experiment::new(config)?;
    let out = exp.out_dir()?.to_path_buf();
    let suite = exp.test_suite()?;
    let mut ordered: Vec<ControllerKind> = kinds.to_vec();
    ordered.dedup();
    if let Some(pos) = ordered.iter().position(|k| *k == ControllerKind::Rule) {
        let rule = ordered.remove(pos);
        ordered.insert(0, rule);
    }
    let mut train_seconds = 0.0;
    let mut reports = Vec::new();
    let mut latency = Vec::new();
    for kind in &ordered {
        let ck = if kind.is_learned() {
            let dir = out.join(kind.as_str());
            let path = dir.join(CHECKPOINT_FILE);
            if path.is_file() {
                Some(load_checkpoint(&path)?)
            } else {
                let t = Instant::now();
                let mut cfg = exp.config.clone();
                cfg.controller = *kind;
                cfg.out = dir;
                let outcome = cmd_train(cfg)?;
                train_seconds += t.elapsed().as_secs_f64();
                Some(outcome.checkpoint)
            }
        } else {
            None
        };
        let (report, lat) = evaluate_controller(&exp, *kind, ck.as_ref(), &suite)?;
        log::info!(
            "{kind}: R_TVRC {:.2}% P_dev {:.2}% R_fal {:.2}%",
            report.summary.r_tvrc_pct,
            report.summary.p_dev_pct,
            report.summary.r_fal_pct
        );
        reports.push(report);
        latency.push((*kind, lat));
    }
    let comparison = Comparison {
        grid: exp.system.config().name.clone(),
        n_test: exp.config.n_test,
        suite_seed: exp.config.suite_seed,
        seed: exp.config.seed,
        controllers: reports.iter().map(|r| r.summary.clone()).collect(),
        decision_latency: latency,
    };
    write_summaries(
        &comparison.controllers,
        BufWriter::new(File::create(out.join("compare.csv"))?),
    )?;
    fs::write(
        out.join("compare.json"),
        serde_json::to_string_pretty(&comparison)? + "\n",
    )?;
    write_deltas(&reports, BufWriter::new(File::create(out.join("deltas.csv"))?))?;
    let mut manifest = RunManifest::new("compare", &exp);
    manifest.controller = None;
    manifest.train_seconds = Some(train_seconds);
    manifest.total_seconds = start.elapsed().as_secs_f64();
    manifest.eval_seconds = Some(manifest.total_seconds - train_seconds);
    manifest.outputs = vec![
        "compare.csv".into(),
        "compare.json".into(),
        "deltas.csv".into(),
        MANIFEST_FILE.into(),
    ];
    manifest.write(&out)?;
    Ok((comparison, reports))
}

/// What `cmd_simulate` runs.
#[derive(Clone, Debug, Default)]
pub struct SimulateRequest {
    /// Index into the test suite; the grid's default scenario when `None`.
    pub scenario: Option<usize>,
    /// Fixed shedding schedule file; overrides the controller.
    pub schedule: Option<PathBuf>,
    /// Checkpoint for learned controllers (defaults to `out/checkpoint.json`).
    pub checkpoint: Option<PathBuf>,
}

/// Simulates one scenario and writes `trajectory.csv` and `envelope.csv`.
pub fn cmd_simulate(config: ExperimentConfig, req: &SimulateRequest) -> Result<Trajectory> {
    let exp = Experiment::new(config)?;
    let scenario = match req.scenario {
        None => Scenario::default_for(&exp.system),
        Some(k) => ScenarioStream::for_system(&exp.system, exp.config.suite_seed).scenario(k)?,
    };
    let traj = match &req.schedule {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            let timing = &exp.system.config().timing;
            let schedule = parse_schedule(&text, exp.system.area_count(), timing.rounds as usize)?;
            crate::grid::run_with_schedule(&exp.system, &scenario, &schedule)?
        }
        None => {
            let kind = exp.config.controller;
            let ck = if kind.is_learned() {
                let path = req
                    .checkpoint
                    .clone()
                    .unwrap_or_else(|| exp.config.out.join(CHECKPOINT_FILE));
                Some(load_checkpoint(&path)?)
            } else {
                None
            };
            let mut controller = build_controller(&exp, kind, ck.as_ref())?;
            closed_loop(&exp, &scenario, controller.as_mut())?
        }
    };
    let out = exp.out_dir()?;
    write_trajectory(&traj, BufWriter::new(File::create(out.join("trajectory.csv"))?))?;
    let horizon = exp.system.config().timing.horizon;
    write_envelope(
        &TvrcEnvelope::default(),
        traj.clearance,
        horizon,
        BufWriter::new(File::create(out.join("envelope.csv"))?),
    )?;
    Ok(traj)
}

/// Runs `controller` on `scenario` and keeps every sample.
pub fn closed_loop(
    exp: &Experiment,
    scenario: &Scenario,
    controller: &mut dyn Controller,
) -> Result<Trajectory> {
    let mut env = UvlsEnv::new(&exp.system, scenario.clone(), &exp.config.env)?;
    controller.begin_episode();
    let mut obs = env.observations();
    while !env.is_done() {
        let actions = controller.act(&obs)?;
        obs = env.step(&actions)?.observations;
    }
    let sim = env.simulation();
    Ok(Trajectory {
        scenario: scenario.clone(),
        samples: sim.samples().to_vec(),
        clearance: scenario.clearance_time(),
        collapsed: sim.is_collapsed(),
    })
}

/// Writes the test suite to `scenarios.csv`.
pub fn cmd_gen_scenarios(config: ExperimentConfig) -> Result<Vec<Scenario>> {
    let exp = Experiment::new(config)?;
    let suite = exp.test_suite()?;
    let out = exp.out_dir()?;
    write_scenarios(&suite, BufWriter::new(File::create(out.join("scenarios.csv"))?))?;
    Ok(suite)
}
