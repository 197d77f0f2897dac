//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always reach the terminal, and exits non-zero
//! when any criterion fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uvls::baselines::{sac_no_attention_train, td_loss};
use uvls::grid::{
    four_area, run_with_schedule, solve_network, toy_two_area, EnvSettings, GridConfig, GridSystem, Scenario,
    Simulation, UvlsEnv,
};
use uvls::harness::{
    cmd_compare, cmd_eval, cmd_train, Checkpoint, ControllerKind, Experiment, ExperimentConfig, GridPreset,
    RestoredModel, ScenarioStream, CHECKPOINT_FILE, CURVE_FILE,
};
use uvls::madrl::{
    actor_loss, attention_aggregate, attention_weights, critic_loss, train_sac, AgentParameters,
    AttentionBlock, CriticView, Hyperparameters, NetSet, MOVING_WINDOW,
};
use uvls::nn::{softmax, Activation, DenseNet, ParamSet};
use uvls::tvrc::{CaseRecord, MetricsReport, TvrcEnvelope};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------- 1

/// Relative error with a floor so that gradients that vanish are compared
/// absolutely.
fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[derive(Default)]
struct FdStats {
    checked: usize,
    kinks: usize,
    max_rel: f64,
    worst: String,
}

/// Central differences over every parameter of `model`, tallied under
/// `label(k)`. Components where the analytic gradient itself jumps between
/// `theta - h` and `theta + h` straddle a leaky-ReLU kink; they are counted,
/// not compared.
fn fd_check<M>(
    model: &mut M,
    label: &dyn Fn(usize) -> &'static str,
    param: &dyn Fn(&mut M, usize, Option<f64>) -> Option<f64>,
    loss: &dyn Fn(&M) -> f64,
    grad: &dyn Fn(&M) -> Vec<f64>,
    stats: &mut [(&'static str, FdStats)],
) {
    let h = 1e-5;
    let analytic = grad(model);
    for (k, a) in analytic.iter().enumerate() {
        let orig = param(model, k, None).expect("index in range");
        param(model, k, Some(orig + h));
        let up = loss(model);
        let g_up = grad(model)[k];
        param(model, k, Some(orig - h));
        let dn = loss(model);
        let g_dn = grad(model)[k];
        param(model, k, Some(orig));
        let fd = (up - dn) / (2.0 * h);
        let e = rel(*a, fd);
        let kind = label(k);
        let st = &mut stats.iter_mut().find(|(n, _)| *n == kind).expect("known label").1;
        if e >= 1e-4 && rel(g_up, g_dn) > 1e-3 {
            st.kinks += 1;
            continue;
        }
        st.checked += 1;
        if e > st.max_rel {
            st.max_rel = e;
            st.worst = format!("{kind} #{k}: analytic {a:e} vs fd {fd:e}");
        }
    }
}

fn nth(slices: Vec<&mut [f64]>, mut k: usize, set: Option<f64>) -> Option<f64> {
    for s in slices {
        if k < s.len() {
            let old = s[k];
            if let Some(v) = set {
                s[k] = v;
            }
            return Some(old);
        }
        k -= s.len();
    }
    None
}

fn small_hp() -> Hyperparameters {
    Hyperparameters {
        hidden: vec![8],
        embed_dim: 4,
        ..Hyperparameters::default()
    }
}

struct CriticModel {
    agents: Vec<AgentParameters>,
    block: AttentionBlock,
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut per_kind: Vec<(&'static str, FdStats)> = ["actor", "critic", "attention", "embedding", "dqn"]
        .into_iter()
        .map(|k| (k, FdStats::default()))
        .collect();
    let seeds = 50;
    let hp = small_hp();
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = 3;
        let b = 6;
        let agents: Vec<AgentParameters> = (0..n)
            .map(|j| AgentParameters::new(3 + j, 2, &hp, &mut rng).unwrap())
            .collect();
        let block = AttentionBlock::new(hp.embed_dim, 1e-3, &mut rng);
        let obs: Vec<Array2<f64>> = agents
            .iter()
            .map(|a| Array2::from_shape_fn((b, a.obs_dim()), |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let acts: Vec<Vec<usize>> = (0..n)
            .map(|_| (0..b).map(|_| rng.gen_range(0..2)).collect())
            .collect();
        let targets: Vec<Array1<f64>> = (0..n)
            .map(|_| Array1::from_shape_fn(b, |_| rng.gen_range(-1.0..1.0)))
            .collect();

        // critic: embeddings, heads and attention in one joint loss
        let mut model = CriticModel { agents, block };
        let sizes: Vec<(usize, usize)> = model
            .agents
            .iter()
            .map(|a| (a.embed.param_count(), a.head.param_count()))
            .collect();
        let label = |mut k: usize| -> &'static str {
            for (e, h) in &sizes {
                if k < *e {
                    return "embedding";
                }
                if k < e + h {
                    return "critic";
                }
                k -= e + h;
            }
            "attention"
        };
        let param = |m: &mut CriticModel, k: usize, v: Option<f64>| {
            let mut slices: Vec<&mut [f64]> = Vec::new();
            for a in m.agents.iter_mut() {
                slices.extend(a.embed.param_slices_mut());
                slices.extend(a.head.param_slices_mut());
            }
            slices.extend(m.block.param_slices_mut());
            nth(slices, k, v)
        };
        let view = |m: &CriticModel| {
            critic_loss(
                &CriticView::new(&m.agents, &m.block, NetSet::Online, true),
                &obs,
                &acts,
                &targets,
            )
            .unwrap()
        };
        let loss = |m: &CriticModel| view(m).0;
        let grad = |m: &CriticModel| {
            let (_, g) = view(m);
            let mut flat = Vec::new();
            for j in 0..n {
                flat.extend(g.embeds[j].slices().concat());
                flat.extend(g.heads[j].slices().concat());
            }
            flat.extend(g.attention.slices().concat());
            flat
        };
        fd_check(&mut model, &label, &param, &loss, &grad, &mut per_kind);

        // actor
        let mut actor = model.agents[0].actor.clone();
        let q = Array2::from_shape_fn((b, 2), |_| rng.gen_range(-1.0..1.0));
        fd_check(
            &mut actor,
            &|_| "actor",
            &|m: &mut DenseNet, k, v| nth(m.param_slices_mut(), k, v),
            &|m: &DenseNet| actor_loss(m, obs[0].view(), q.view(), 0.2).unwrap().0,
            &|m: &DenseNet| {
                actor_loss(m, obs[0].view(), q.view(), 0.2)
                    .unwrap()
                    .1
                    .slices()
                    .concat()
            },
            &mut per_kind,
        );

        // dqn
        let mut qnet =
            DenseNet::new(&[3, 8, 2], Activation::LeakyRelu, Activation::Linear, &mut rng).unwrap();
        let y = Array1::from_shape_fn(b, |_| rng.gen_range(-1.0..1.0));
        fd_check(
            &mut qnet,
            &|_| "dqn",
            &|m: &mut DenseNet, k, v| nth(m.param_slices_mut(), k, v),
            &|m: &DenseNet| td_loss(m, obs[0].view(), &acts[0], &y).unwrap().0,
            &|m: &DenseNet| {
                td_loss(m, obs[0].view(), &acts[0], &y)
                    .unwrap()
                    .1
                    .slices()
                    .concat()
            },
            &mut per_kind,
        );
    }
    let secs = start.elapsed().as_secs_f64();
    let checked: usize = per_kind.iter().map(|(_, s)| s.checked).sum();
    let kinks: usize = per_kind.iter().map(|(_, s)| s.kinks).sum();
    let worst = per_kind
        .iter()
        .max_by(|a, b| a.1.max_rel.total_cmp(&b.1.max_rel))
        .map(|(_, s)| (s.max_rel, s.worst.clone()))
        .unwrap();
    let kink_share = kinks as f64 / (checked + kinks) as f64;
    let pass = worst.0 < 1e-4 && kink_share < 0.01 && secs < 60.0;
    outcome(
        pass,
        format!(
            "{seeds} seeds, {checked} components, max rel err {:.2e} ({}), {kinks} kink-straddling skipped ({:.3}%), {secs:.1} s",
            worst.0,
            worst.1,
            kink_share * 100.0
        ),
    )
}

// ---------------------------------------------------------------- 2

fn one_area_grid() -> GridConfig {
    let mut cfg = toy_two_area();
    cfg.name = "one-area".into();
    cfg.buses.truncate(3);
    cfg.lines.retain(|l| l.from < 3 && l.to < 3);
    cfg.fault.line = 0;
    cfg.fault.lines = vec![0];
    cfg.fault.load_scale = 1.0;
    cfg
}

fn attention_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut fails = Vec::new();
    let dim = 4;
    for trial in 0..200 {
        let block = AttentionBlock::new(dim, 1e-3, &mut rng);
        let n = 2 + trial % 5;
        let g: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let focus = trial % n;
        let w = attention_weights(&block, &g, focus).unwrap();
        let sum: f64 = w.iter().sum();
        if w.iter().any(|x| *x < 0.0) || (sum - 1.0).abs() > 1e-9 {
            fails.push(format!("weights {w:?}"));
        }
        if n == 2 && w != vec![1.0] {
            fails.push(format!("N=2 weight {w:?}"));
        }
        // permuting the other agents permutes their weights
        let mut others: Vec<usize> = (0..n).filter(|i| *i != focus).collect();
        let before: Vec<(usize, f64)> = others.iter().copied().zip(w.iter().copied()).collect();
        others.reverse();
        let mut permuted = vec![g[focus].clone()];
        permuted.extend(others.iter().map(|i| g[*i].clone()));
        let wp = attention_weights(&block, &permuted, 0).unwrap();
        for (c, i) in others.iter().enumerate() {
            let orig = before.iter().find(|(k, _)| k == i).unwrap().1;
            if (wp[c] - orig).abs() > 1e-12 {
                fails.push("permutation equivariance".into());
            }
        }
        // score shift invariance of the normalization
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let c = rng.gen_range(-50.0..50.0);
        let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
        let (a, b) = (softmax(&scores).unwrap(), softmax(&shifted).unwrap());
        if a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-12) {
            fails.push("shift invariance".into());
        }
    }
    let block = AttentionBlock::new(dim, 1e-3, &mut rng);
    let lone = attention_weights(&block, &[vec![0.5; dim]], 0).unwrap();
    if !lone.is_empty() || attention_aggregate(&[], &lone).unwrap().is_some() {
        fails.push("N=1 context is not empty".into());
    }

    // N=1: the attention and no-attention trainers coincide bit for bit
    let sys = GridSystem::build(one_area_grid()).unwrap();
    let settings = EnvSettings::default();
    let hp = Hyperparameters {
        hidden: vec![16],
        embed_dim: 8,
        batch_size: 16,
        warmup: 16,
        ..Hyperparameters::default()
    };
    let stream = ScenarioStream::for_system(&sys, 11);
    let source = |k: usize| stream.scenario(k);
    let a = train_sac(&sys, &settings, &hp, &source, 40, 5, true).unwrap();
    let b = sac_no_attention_train(&sys, &settings, &hp, &source, 40, 5).unwrap();
    let identical = a.learner.agents == b.learner.agents && a.curve.rewards == b.curve.rewards;
    if !identical {
        fails.push("N=1 trainers differ".into());
    }
    outcome(
        fails.is_empty(),
        if fails.is_empty() {
            "200 random attention draws, N in 2..6; N=1 trainers bitwise identical over 40 episodes".into()
        } else {
            fails.join("; ")
        },
    )
}

// ---------------------------------------------------------------- 3

fn envelope_thresholds() -> Outcome {
    let env = TvrcEnvelope::default();
    let mut fails = Vec::new();
    for (offset, level) in [(0.0, 0.7), (0.33, 0.8), (0.5, 0.9), (1.5, 0.95)] {
        if env.threshold(offset).unwrap() != level {
            fails.push(format!("threshold at {offset}"));
        }
    }
    for (offset, level) in [
        (0.1, 0.7),
        (0.3299, 0.7),
        (0.4999, 0.8),
        (1.4999, 0.9),
        (8.0, 0.95),
    ] {
        if env.threshold(offset).unwrap() != level {
            fails.push(format!("threshold inside window at {offset}"));
        }
    }
    let checks = [
        (env.deviation(0.75, 1.2, 1.1).unwrap(), 0.05),
        (env.deviation(0.85, 1.7, 1.1).unwrap(), -0.05),
        (env.deviation(0.95, 3.1, 1.1).unwrap(), 0.0),
    ];
    for (got, want) in checks {
        if (got - want).abs() > 1e-12 {
            fails.push(format!("deviation {got} != {want}"));
        }
    }
    if env.deviation(0.9, 1.0, 1.1).is_ok() {
        fails.push("pre-clearance deviation accepted".into());
    }
    outcome(
        fails.is_empty(),
        if fails.is_empty() {
            "0.7/0.8/0.9/0.95 at 0/0.33/0.5/1.5 s, windows closed on the left".into()
        } else {
            fails.join("; ")
        },
    )
}

// ---------------------------------------------------------------- 4

/// Load bus 1 behind the source reactance and one line, which in series
/// act as a single reactance `x`.
fn single_load(x: f64, emf: f64, q_ratio: f64) -> GridSystem {
    let mut cfg = toy_two_area();
    cfg.buses.truncate(2);
    cfg.lines.retain(|l| l.from == 0 && l.to == 1);
    cfg.lines[0].x = x / 2.0;
    let b = &mut cfg.buses[1];
    b.controllable = true;
    b.p0 = 0.0;
    b.q_ratio = q_ratio;
    b.shunt_b = 0.0;
    cfg.source.reactance_pu = x / 2.0;
    cfg.source.emf_pu = emf;
    cfg.fault.line = 0;
    cfg.fault.lines = vec![0];
    GridSystem::build(cfg).unwrap()
}

fn network_solver_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut max_err: f64 = 0.0;
    let mut max_residual: f64 = 0.0;
    let mut fails = 0;
    for _ in 0..1000 {
        let x = rng.gen_range(0.05..0.5);
        let emf = rng.gen_range(0.95..1.1);
        let r: f64 = rng.gen_range(0.0..0.6);
        let nose = emf * emf / (2.0 * x * (r + (1.0 + r * r).sqrt()));
        let p = rng.gen_range(0.0..0.95) * nose;
        let sys = single_load(x, emf, r);
        let q = r * p;
        let b = emf * emf - 2.0 * q * x;
        let v = ((b + (b * b - 4.0 * x * x * (p * p + q * q)).sqrt()) / 2.0).sqrt();
        match solve_network(&sys, &[0.0, p]) {
            Ok(sol) => {
                max_err = max_err.max((sol.voltages[1] - v).abs());
                max_residual = max_residual.max(sol.residual);
            }
            Err(_) => fails += 1,
        }
    }
    let pass = fails == 0 && max_err < 1e-6 && max_residual < 1e-8;
    outcome(
        pass,
        format!("1000 loadings below the nose: max |V - V_exact| {max_err:.2e} pu, max residual {max_residual:.2e}, {fails} failed solves"),
    )
}

// ---------------------------------------------------------------- 5

fn load_shipped_default() -> GridSystem {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default_grid.toml");
    GridSystem::build(GridConfig::load(&path).unwrap()).unwrap()
}

fn fidvr_existence() -> Outcome {
    let sys = load_shipped_default();
    let sc = Scenario::default_for(&sys);
    let t_fc = sc.clearance_time();
    let env = TvrcEnvelope::default();
    let traj = run_with_schedule(&sys, &sc, &[]).unwrap();
    let dt = sys.config().timing.dt_obs;
    // longest run of consecutive post-clearance samples with a bus below 0.9
    let (mut run, mut longest) = (0usize, 0usize);
    for s in traj.post_clearance() {
        if s.voltages.iter().any(|v| *v < 0.9) {
            run += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
    }
    let below = longest as f64 * dt;

    let mut sim = Simulation::new(&sys, sc.clone()).unwrap();
    sim.run_to_clearance();
    for area in 1..=sys.area_count() {
        for _ in 0..5 {
            sim.shed_area(area);
        }
    }
    sim.run_to_horizon();
    let mut worst: f64 = f64::INFINITY;
    for s in sim.samples().iter().filter(|s| s.since_clearance.is_some()) {
        for v in &s.voltages {
            worst = worst.min(env.deviation(*v, s.time, t_fc).unwrap());
        }
    }
    let pass = below >= 0.5 && worst >= 0.0 && !sim.is_collapsed();
    outcome(
        pass,
        format!("uncontrolled: a bus below 0.9 pu for {below:.2} s after T_fc; 50% shed at T_fc: worst envelope margin {worst:+.4} pu"),
    )
}

// ---------------------------------------------------------------- 6

fn monotonicity() -> Outcome {
    let sys = GridSystem::build(four_area()).unwrap();
    let stream = ScenarioStream::for_system(&sys, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut tested, mut k, mut worst) = (0, 0, f64::INFINITY);
    let mut fails = Vec::new();
    let areas = sys.area_count();
    while tested < 20 {
        let sc = stream.scenario(k).unwrap();
        k += 1;
        let less: Vec<Vec<bool>> = (0..5)
            .map(|_| (0..areas).map(|_| rng.gen_bool(0.3)).collect())
            .collect();
        let mut more = less.clone();
        // strictly more cumulative shedding at every controllable bus
        for a in 0..areas {
            let free: Vec<usize> = (0..5).filter(|r| !less[*r][a]).collect();
            let pick = if free.is_empty() {
                None
            } else {
                Some(free[rng.gen_range(0..free.len())])
            };
            if let Some(r) = pick {
                more[r][a] = true;
            }
            for r in 0..5 {
                if !more[r][a] && rng.gen_bool(0.3) {
                    more[r][a] = true;
                }
            }
        }
        let a = run_with_schedule(&sys, &sc, &less).unwrap();
        let b = run_with_schedule(&sys, &sc, &more).unwrap();
        if a.post_clearance().next().is_none() {
            continue; // collapsed during the fault: nothing to compare
        }
        tested += 1;
        if b.collapsed && !a.collapsed {
            fails.push(format!("scenario {k}: more shedding collapsed"));
            continue;
        }
        for (sa, sb) in a.post_clearance().zip(b.post_clearance()) {
            for (va, vb) in sa.voltages.iter().zip(&sb.voltages) {
                worst = worst.min(vb - va);
                if vb < &(va - 1e-9) {
                    fails.push(format!("scenario {k} t={:.2}: {vb} < {va}", sa.time));
                }
            }
        }
    }
    fails.truncate(3);
    outcome(
        fails.is_empty(),
        if fails.is_empty() {
            format!("20 scenarios, smallest V_more - V_less {worst:+.2e} pu")
        } else {
            fails.join("; ")
        },
    )
}

// ---------------------------------------------------------------- 7

/// Sums, for every one of the `4^rounds` fixed joint schedules, the episode
/// return over `scenarios`.
fn schedule_returns(sys: &GridSystem, settings: &EnvSettings, scenarios: &[Scenario]) -> Vec<f64> {
    let n = sys.area_count();
    let rounds = sys.config().timing.rounds as usize;
    let leaves = 1usize << (n * rounds);
    let mut sums = vec![0.0; leaves];
    fn search(env: &UvlsEnv, acc: f64, n: usize, rounds: usize, out: &mut Vec<f64>) {
        for code in 0..(1usize << n) {
            let acts: Vec<usize> = (0..n).map(|j| (code >> j) & 1).collect();
            let mut e = env.clone();
            let r = e.step(&acts).unwrap();
            let total = acc + r.rewards.iter().sum::<f64>();
            if r.done {
                // every continuation of an ended episode scores the same
                let rest = 1usize << (n * (rounds - e.round()));
                out.extend(std::iter::repeat_n(total, rest));
            } else {
                search(&e, total, n, rounds, out);
            }
        }
    }
    for sc in scenarios {
        let env = UvlsEnv::new(sys, sc.clone(), settings).unwrap();
        let mut out = Vec::with_capacity(leaves);
        if env.is_done() {
            out.resize(leaves, -settings.penalty * n as f64);
        } else {
            search(&env, 0.0, n, rounds, &mut out);
        }
        for (s, v) in sums.iter_mut().zip(&out) {
            *s += v;
        }
    }
    sums
}

fn learning_check(dir: &Path) -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        preset: GridPreset::ToyTwoArea,
        controller: ControllerKind::Proposed,
        episodes: 2000,
        seed: 7,
        train_scenarios: 20,
        out: dir.join("learning"),
        ..ExperimentConfig::default()
    };
    let exp = Experiment::new(cfg.clone()).unwrap();
    let set = exp.frozen_training_set().unwrap();
    let sums = schedule_returns(&exp.system, &cfg.env, &set);
    let count = set.len() as f64;
    let best = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max) / count;
    let random = sums.iter().sum::<f64>() / sums.len() as f64 / count;
    let oracle_secs = start.elapsed().as_secs_f64();
    let trained = cmd_train(cfg).unwrap();
    let last = trained.curve.tail_mean(MOVING_WINDOW).unwrap();
    let bar = random + 0.5 * (best - random);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        last >= bar && secs <= 600.0,
        format!(
            "final moving average {last:.1} vs bar {bar:.1} (random {random:.1}, best fixed schedule {best:.1}); oracle {oracle_secs:.0} s, total {secs:.0} s"
        ),
    )
}

// ---------------------------------------------------------------- 8

fn evaluation_ordering(dir: &Path) -> Outcome {
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 1..=3u64 {
        let cfg = ExperimentConfig {
            seed,
            n_test: 200,
            out: dir.join(format!("compare-seed{seed}")),
            ..ExperimentConfig::default()
        };
        let (cmp, _) = cmd_compare(cfg, &[ControllerKind::Proposed, ControllerKind::Rule]).unwrap();
        let p = cmp.summary(ControllerKind::Proposed).unwrap();
        let r = cmp.summary(ControllerKind::Rule).unwrap();
        let ok = p.r_tvrc_pct >= r.r_tvrc_pct && p.p_dev_pct <= r.p_dev_pct;
        wins += ok as usize;
        lines.push(format!(
            "seed {seed}: R_TVRC {:.1}% vs {:.1}%, P_dev {:.2}% vs {:.2}%",
            p.r_tvrc_pct, r.r_tvrc_pct, p.p_dev_pct, r.p_dev_pct
        ));
    }
    outcome(wins >= 2, format!("{wins}/3 seeds ({})", lines.join("; ")))
}

// ---------------------------------------------------------------- 9

fn reproducibility(dir: &Path) -> Outcome {
    let base = ExperimentConfig {
        preset: GridPreset::ToyTwoArea,
        episodes: 60,
        seed: 9,
        hyperparameters: Hyperparameters {
            hidden: vec![16, 16],
            batch_size: 32,
            warmup: 32,
            ..ExperimentConfig::default().hyperparameters
        },
        ..ExperimentConfig::default()
    };
    let mut texts = Vec::new();
    for run in 0..2 {
        let cfg = ExperimentConfig {
            out: dir.join(format!("repro{run}")),
            ..base.clone()
        };
        cmd_train(cfg.clone()).unwrap();
        texts.push(std::fs::read(cfg.out.join(CURVE_FILE)).unwrap());
    }
    let curves_equal = texts[0] == texts[1];
    let path = dir.join("repro0").join(CHECKPOINT_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    let ck = Checkpoint::from_json(&text).unwrap();
    let rewritten = ck.to_json() == text;
    let restored = match ck.restore().unwrap() {
        RestoredModel::Sac(l) => {
            Checkpoint::from_sac(ck.controller, &ck.grid, &ck.settings, &l, &ck.rng) == ck
        }
        RestoredModel::Dqn(_) => false,
    };
    outcome(
        curves_equal && rewritten && restored,
        format!("learning curves identical: {curves_equal}; checkpoint text round-trip: {rewritten}; restore round-trip: {restored}"),
    )
}

// ---------------------------------------------------------------- 10

fn metric_arithmetic() -> Outcome {
    let case = |id, success, failure, shed_pct, vdev_pu| CaseRecord {
        case_id: id,
        seed: id as u64,
        success,
        failure,
        shed_pct,
        vdev_pu,
    };
    let cases = vec![
        case(0, true, false, 10.0, 0.05),
        case(1, true, false, 20.0, -0.02),
        case(2, false, true, 0.0, -0.95),
        case(3, true, false, 30.0, 0.04),
    ];
    let r = MetricsReport::from_cases("fixture", cases).unwrap().summary;
    let vdev = (0.05 - 0.02 - 0.95 + 0.04) / 4.0;
    let pass = r.r_tvrc_pct == 75.0 && r.r_fal_pct == 25.0 && r.p_dev_pct == 15.0 && r.v_dev_pu == vdev;
    outcome(
        pass,
        format!(
            "R_TVRC {} (75), R_fal {} (25), P_dev {} (15), V_dev {} ({vdev})",
            r.r_tvrc_pct, r.r_fal_pct, r.p_dev_pct, r.v_dev_pu
        ),
    )
}

// ---------------------------------------------------------------- 11

fn decision_latency(dir: &Path) -> Outcome {
    let cfg = ExperimentConfig {
        controller: ControllerKind::Proposed,
        seed: 1,
        out: dir.join("compare-seed1").join("proposed"),
        ..ExperimentConfig::default()
    };
    let (_, manifest) = cmd_eval(cfg, None).unwrap();
    let l = manifest.decision_latency.unwrap();
    outcome(
        l.mean_ms <= 1.0 && l.decisions > 0,
        format!(
            "{} decisions: mean {:.4} ms, p99 {:.4} ms, max {:.4} ms per agent (recorded in manifest.json)",
            l.decisions, l.mean_ms, l.p99_ms, l.max_ms
        ),
    )
}

fn main() -> ExitCode {
    // panics inside a criterion are reported on its line
    std::panic::set_hook(Box::new(|_| {}));
    let dir = tempfile::tempdir().expect("temp dir");
    let scratch = dir.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("gradient suite", Box::new(gradient_suite)),
        ("attention algebra", Box::new(attention_algebra)),
        ("envelope thresholds", Box::new(envelope_thresholds)),
        ("network-solver oracle", Box::new(network_solver_oracle)),
        ("FIDVR existence", Box::new(fidvr_existence)),
        ("monotonicity", Box::new(monotonicity)),
        ("learning check", Box::new(|| learning_check(scratch))),
        ("evaluation ordering", Box::new(|| evaluation_ordering(scratch))),
        ("reproducibility", Box::new(|| reproducibility(scratch))),
        ("metric arithmetic", Box::new(metric_arithmetic)),
        ("decision latency", Box::new(|| decision_latency(scratch))),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if let Some(only) = &only {
            if !only.contains(&id) {
                continue;
            }
        }
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += !result.pass as usize;
        println!(
            "criterion {id:>2} {name}: {} - {}",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
