use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use uvls::error::Error as UvlsError;
use uvls::harness::{
    cmd_compare, cmd_eval, cmd_gen_scenarios, cmd_simulate, cmd_train, ControllerKind, ExperimentConfig,
    SimulateRequest,
};

#[derive(Parser, Debug)]
#[command(name = "uvls", version, about = "Multi-agent under-voltage load shedding lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a learned controller; writes checkpoint, learning curve and manifest.
    Train(Common),
    /// Evaluate one controller on the seeded test suite.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to load (default: OUT/checkpoint.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate several controllers on one shared suite. Learned controllers
    /// without a checkpoint in OUT/<name>/ are trained first. Without
    /// --controller all five are compared.
    Compare(Common),
    /// Simulate one scenario and export its voltage trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Test-suite index (default: the grid's default scenario).
        #[arg(long)]
        scenario: Option<usize>,
        /// Fixed shedding schedule: one line of comma-separated 0/1 per round.
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write the seeded test suite to OUT/scenarios.csv.
    GenScenarios(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Test-suite size.
    #[arg(long)]
    ntest: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_controller)]
    controller: Option<ControllerKind>,
}

fn parse_controller(s: &str) -> Result<ControllerKind, String> {
    s.parse().map_err(|e: UvlsError| e.to_string())
}

/// Errors that mean the configuration was unusable.
#[derive(Debug)]
struct ConfigError(anyhow::Error);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let load = || -> Result<ExperimentConfig> {
            let mut cfg = match &self.config {
                Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
                None => ExperimentConfig::default(),
            };
            if let Some(v) = self.seed {
                cfg.seed = v;
            }
            if let Some(v) = self.episodes {
                cfg.episodes = v;
            }
            if let Some(v) = self.ntest {
                cfg.n_test = v;
            }
            if let Some(v) = &self.out {
                cfg.out = v.clone();
            }
            if let Some(v) = self.controller {
                cfg.controller = v;
            }
            cfg.validate()?;
            Ok(cfg)
        };
        load().map_err(ConfigError)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.resolve()?;
            let out = cfg.out.clone();
            let t = cmd_train(cfg)?;
            println!(
                "trained {} episodes; final moving average {:.3}; outputs in {}",
                t.curve.len(),
                t.curve.tail_mean(uvls::madrl::MOVING_WINDOW).unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.resolve()?;
            let (report, manifest) = cmd_eval(cfg, checkpoint.as_deref())?;
            println!("{}", serde_json::to_string(&report.summary)?);
            if let Some(l) = manifest.decision_latency {
                println!(
                    "decision latency per agent: mean {:.4} ms, max {:.4} ms",
                    l.mean_ms, l.max_ms
                );
            }
        }
        Command::Compare(common) => {
            let kinds: Vec<ControllerKind> = match common.controller {
                None => ControllerKind::ALL.to_vec(),
                Some(k) => vec![k, ControllerKind::Rule, ControllerKind::None],
            };
            let cfg = common.resolve()?;
            let (cmp, _) = cmd_compare(cfg, &kinds)?;
            for s in &cmp.controllers {
                println!("{}", serde_json::to_string(s)?);
            }
        }
        Command::Simulate {
            common,
            scenario,
            schedule,
            checkpoint,
        } => {
            let cfg = common.resolve()?;
            let traj = cmd_simulate(
                cfg,
                &SimulateRequest {
                    scenario,
                    schedule,
                    checkpoint,
                },
            )?;
            println!("{} samples, collapsed: {}", traj.samples.len(), traj.collapsed);
        }
        Command::GenScenarios(common) => {
            let cfg = common.resolve()?;
            let suite = cmd_gen_scenarios(cfg)?;
            println!("{} scenarios", suite.len());
        }
    }
    Ok(())
}

/// Config errors exit with 2, everything else with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<UvlsError>() {
        Some(UvlsError::Config(_) | UvlsError::Version { .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            let kind = if code == 2 { "config" } else { "runtime" };
            let line = serde_json::json!({ "error": kind, "message": format!("{err:#}") });
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
