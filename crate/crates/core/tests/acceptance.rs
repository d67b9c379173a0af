//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero on any failure not listed in `KNOWN_FAILURES`.
//!
//! Select criteria by name: `cargo test --test acceptance -- latency determinism`.

use std::f64::consts::PI;
use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resetfree_core::config::{AgentKind, ExperimentConfig};
use resetfree_core::dynamics::{
    clamp_command, dynamic_step, kbm_step, ControlCommand, PredictiveModel, VehicleParams,
    VehicleState,
};
use resetfree_core::env::{compose_action, compute_reward, ResetFreeEnv, RewardConfig};
use resetfree_core::geometry::Vec2;
use resetfree_core::harness::{run_baseline, run_training, RunOptions, RunSummary};
use resetfree_core::mppi::{
    init_plan, plan, plan_with, softmax_weights, MppiConfig, Objective, PlanContext, Rollout,
    RolloutScore,
};
use resetfree_core::record::{EpisodeRecord, Mode};
use resetfree_core::track::{clearance, LidarScan};

// Tolerances.
const RADIUS_TOL: f64 = 1e-3;
const MIN_RK4_ORDER: f64 = 3.5;
const MODEL_AGREEMENT_TOL: f64 = 1e-4;
const WEIGHT_SUM_TOL: f64 = 1e-9;
const FUZZ_STEPS: usize = 10_000;
const ENDURANCE_EPISODES: usize = 200;
const DISPERSION_RESETS: usize = 100;
const DISTINCT_POSE_DIST: f64 = 0.05;
const EVAL_EPISODES: usize = 20;
const LEARNING_SEEDS: [u64; 3] = [0, 1, 2];
const LEARNING_WINS_NEEDED: usize = 2;
const LATENCY_CALLS: usize = 300;
const MEDIAN_BUDGET_MS: f64 = 20.0;
const P99_BUDGET_MS: f64 = 40.0;
const DETERMINISM_EPISODES: usize = 12;

/// Criteria that fail under the faithful configuration. They still run and
/// print FAIL; they do not fail the suite.
const KNOWN_FAILURES: &[&str] = &["mismatch-headroom"];

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// Runs shared between criteria.
#[derive(Default)]
struct Cache {
    es: Vec<Option<RunSummary>>,
    baseline: Vec<Option<RunSummary>>,
}

impl Cache {
    fn new() -> Self {
        Self {
            es: vec![None; LEARNING_SEEDS.len()],
            baseline: vec![None; LEARNING_SEEDS.len()],
        }
    }
}

fn defaults(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.run.seed = seed;
    cfg
}

fn baseline_eval(cfg: &ExperimentConfig) -> RunSummary {
    let mut cfg = cfg.clone();
    cfg.run.episodes = EVAL_EPISODES;
    run_baseline(&cfg, RunOptions::quiet()).expect("baseline run")
}

fn cached_baseline(cache: &mut Cache, i: usize) -> RunSummary {
    cache.baseline[i]
        .get_or_insert_with(|| baseline_eval(&defaults(LEARNING_SEEDS[i])))
        .clone()
}

fn moving(v: f64, delta: f64) -> VehicleState {
    VehicleState {
        v,
        delta,
        ..VehicleState::default()
    }
}

// ---------------------------------------------------------------------------

fn dynamics_oracles(_: &mut Cache) -> Verdict {
    let p = VehicleParams::default();
    // Turning circle: rear axle stays on radius L/tan δ about (0, L/tan δ).
    let mut worst_radius: f64 = 0.0;
    for &(v, delta) in &[(1.0, 0.3), (2.0, 0.2), (0.5, -0.35)] {
        let radius = p.wheelbase / f64::tan(delta);
        let center = Vec2::new(0.0, radius);
        let dt = 0.01;
        let steps = (2.0 * PI * radius.abs() / (v * dt)).ceil() as usize;
        let mut s = moving(v, delta);
        for _ in 0..steps {
            s = kbm_step(&s, ControlCommand::new(v, delta), &p, dt).unwrap();
            worst_radius =
                worst_radius.max(((Vec2::new(s.x, s.y) - center).norm() - radius.abs()).abs());
        }
    }

    // Global convergence order against a fine-step reference over 1 s.
    let start = VehicleState {
        v: 1.0,
        delta: 0.05,
        yaw: 0.3,
        ..VehicleState::default()
    };
    let cmd = ControlCommand::new(1.2, 0.3);
    let integrate = |h: f64| {
        let n = (1.0 / h).round() as usize;
        let mut s = start;
        for _ in 0..n {
            s = kbm_step(&s, cmd, &p, h).unwrap();
        }
        s
    };
    let reference = integrate(1.0 / 8000.0);
    let err = |h: f64| {
        let s = integrate(h);
        [
            s.x - reference.x,
            s.y - reference.y,
            s.yaw - reference.yaw,
            s.v - reference.v,
            s.delta - reference.delta,
        ]
        .iter()
        .map(|d| d * d)
        .sum::<f64>()
        .sqrt()
    };
    let (e1, e2, e3) = (err(0.1), err(0.05), err(0.025));
    let order = (e1 / e2).log2().min((e2 / e3).log2());

    // Low-excitation agreement between the two models over one control period.
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_gap: f64 = 0.0;
    for _ in 0..500 {
        let v = rng.random_range(0.12..0.5);
        let delta = rng.random_range(-0.02..0.02);
        let s = VehicleState {
            x: rng.random_range(-2.0..2.0),
            y: rng.random_range(-2.0..2.0),
            yaw: rng.random_range(-PI..PI),
            v,
            v_lat: 0.0,
            yaw_rate: v * f64::tan(delta) / p.wheelbase,
            delta,
        };
        let cmd = ControlCommand::new(v, delta);
        let a = kbm_step(&s, cmd, &p, 0.02).unwrap();
        let b = dynamic_step(&s, cmd, &p, 0.02).unwrap();
        worst_gap = worst_gap.max((a.x - b.x).hypot(a.y - b.y));
    }
    Verdict::new(
        worst_radius < RADIUS_TOL && order >= MIN_RK4_ORDER && worst_gap < MODEL_AGREEMENT_TOL,
        format!(
            "radius dev {worst_radius:.2e} m (< {RADIUS_TOL:e}), RK4 order {order:.2} (≥ {MIN_RK4_ORDER}), \
             model gap {worst_gap:.2e} m (< {MODEL_AGREEMENT_TOL:e})"
        ),
    )
}

/// One-step surrogate: reward −(a − a*)² on the speed channel.
struct Quadratic {
    target: f64,
}

impl Rollout for Quadratic {
    fn evaluate(&self, actions: &[ControlCommand]) -> RolloutScore {
        RolloutScore {
            total: actions
                .iter()
                .map(|a| -(a.speed - self.target).powi(2))
                .sum(),
            immediate_collision: false,
        }
    }
    fn clamp(&self, cmd: ControlCommand) -> ControlCommand {
        cmd
    }
}

/// Scores on a 1/1024 grid plus a constant offset, so that shifting is exact.
struct Dyadic {
    offset: f64,
}

impl Rollout for Dyadic {
    fn evaluate(&self, actions: &[ControlCommand]) -> RolloutScore {
        let raw: f64 = actions
            .iter()
            .map(|a| -(a.speed - 0.4).powi(2) - a.steering.powi(2))
            .sum();
        RolloutScore {
            total: (raw * 1024.0).round() / 1024.0 + self.offset,
            immediate_collision: false,
        }
    }
    fn clamp(&self, cmd: ControlCommand) -> ControlCommand {
        cmd
    }
}

fn mppi_oracle(_: &mut Cache) -> Verdict {
    let target = 0.37;
    let surrogate = Quadratic { target };
    let brute = (0..=40_000)
        .map(|i| -2.0 + 4.0 * i as f64 / 40_000.0)
        .max_by(|a, b| {
            let sa = surrogate.evaluate(&[ControlCommand::new(*a, 0.0)]).total;
            let sb = surrogate.evaluate(&[ControlCommand::new(*b, 0.0)]).total;
            sa.total_cmp(&sb)
        })
        .unwrap();
    let config = MppiConfig {
        horizon: 1,
        samples: 10_000,
        lambda: 1e-4,
        ..MppiConfig::default()
    };
    let out = plan_with(&surrogate, &init_plan(&config), &config, 11);
    let tol = 2.0 * config.noise_std.speed / (config.samples as f64).sqrt();
    let gap = (out.mean[0].speed - brute).abs();

    let sum_err = [1e-3, 0.1, 10.0]
        .iter()
        .map(|&lambda| {
            let scores: Vec<f64> = (0..1000)
                .map(|i| ((i * 7919) % 1000) as f64 * 0.013 - 6.0)
                .collect();
            (softmax_weights(&scores, lambda).iter().sum::<f64>() - 1.0).abs()
        })
        .fold(0.0, f64::max);

    let mut shift_exact = true;
    for offset in [-4096.0, -3.0, 0.5, 17.0, 1024.0] {
        let cfg = MppiConfig {
            horizon: 5,
            samples: 512,
            lambda: 0.01,
            ..MppiConfig::default()
        };
        let a = plan_with(&Dyadic { offset: 0.0 }, &init_plan(&cfg), &cfg, 5);
        let b = plan_with(&Dyadic { offset }, &init_plan(&cfg), &cfg, 5);
        let bits = |w: &[f64]| w.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        shift_exact &= bits(&a.weights) == bits(&b.weights) && a.mean == b.mean && a.std == b.std;
    }
    Verdict::new(
        gap < tol && sum_err < WEIGHT_SUM_TOL && shift_exact,
        format!(
            "|plan − optimum| {gap:.2e} (< 2σ/√K = {tol:.2e}), weight sum err {sum_err:.1e}, shift-invariant bits: {shift_exact}"
        ),
    )
}

fn reward_and_override_contract(_: &mut Cache) -> Verdict {
    let cfg = RewardConfig::default();
    let p = VehicleParams::default();
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };
    check(compute_reward(2.0, false, &cfg) == 2.0, "reward(2, 0)");
    check(compute_reward(1.5, true, &cfg) == 0.0, "reward(1.5, 1)");
    check(compute_reward(-0.5, true, &cfg) == -1.0, "reward(-0.5, 1)");
    let (f, b) = (
        ControlCommand::new(1.0, 0.1),
        ControlCommand::new(2.0, -0.1),
    );
    check(
        compose_action(f, b, false, 0.0, &p) == ControlCommand::new(1.0, 0.1),
        "compose w_b=0",
    );
    check(
        compose_action(f, b, false, 1.0, &p) == clamp_command(ControlCommand::new(3.0, 0.0), &p),
        "compose w_b=1",
    );
    let b = ControlCommand::new(0.5, 0.2);
    check(
        compose_action(ControlCommand::new(-9.0, 4.0), b, true, 0.0, &p) == b,
        "override w_b=0",
    );
    check(
        compose_action(ControlCommand::new(9.0, -4.0), b, true, 1.0, &p) == b,
        "override w_b=1",
    );

    // Fuzzed composition against a direct oracle.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut fuzz_bad = 0;
    for _ in 0..FUZZ_STEPS {
        let f = ControlCommand::new(rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0));
        let b = ControlCommand::new(rng.random_range(-3.0..3.0), rng.random_range(-0.4..0.4));
        let w_b = if rng.random_bool(0.5) {
            1.0
        } else {
            rng.random_range(0.0..1.0)
        };
        let collided = rng.random_bool(0.5);
        let got = compose_action(f, b, collided, w_b, &p);
        let want = if collided {
            b
        } else {
            ControlCommand::new(
                (f.speed + w_b * b.speed).clamp(-p.v_max, p.v_max),
                (f.steering + w_b * b.steering).clamp(-p.delta_max, p.delta_max),
            )
        };
        if got.speed.to_bits() != want.speed.to_bits()
            || got.steering.to_bits() != want.steering.to_bits()
        {
            fuzz_bad += 1;
        }
    }

    // Environment steps taken while in contact apply the base action verbatim.
    let mut env_checked = 0;
    let mut env_bad = 0;
    let mut cfg = defaults(9);
    cfg.mppi.base.samples = 128;
    for w_b in [0.0, 1.0] {
        cfg.run.w_b = w_b;
        let mut env = ResetFreeEnv::new(cfg.env_setup().unwrap()).unwrap();
        for _ in 0..100 {
            let angle = rng.random_range(-PI..PI);
            let r = cfg.track.r_out - cfg.lidar.mount_offset - 0.5 * cfg.footprint.length - 0.005;
            env.place(VehicleState {
                x: r * angle.cos(),
                y: r * angle.sin(),
                yaw: angle + rng.random_range(-0.3..0.3),
                ..VehicleState::default()
            });
            if !env.collided() {
                continue;
            }
            env.begin_episode();
            let f = ControlCommand::new(rng.random_range(-3.0..3.0), rng.random_range(-0.4..0.4));
            let out = env.step(f).unwrap();
            env_checked += 1;
            if out.info.applied_action != out.info.base_action || out.mode != Mode::Forward {
                env_bad += 1;
            }
        }
    }
    Verdict::new(
        failures.is_empty() && fuzz_bad == 0 && env_bad == 0 && env_checked > 0,
        format!(
            "examples failed: {failures:?}; fuzzed {FUZZ_STEPS} compositions, {fuzz_bad} mismatches; \
             {env_checked} in-contact env steps, {env_bad} overrides missed"
        ),
    )
}

/// Independent check of the restartable predicate on the tail of a record.
fn ends_restartable(record: &EpisodeRecord, cfg: &ExperimentConfig) -> bool {
    let quiet = cfg.env.restart_quiet_steps;
    let n = record.steps.len();
    if n < quiet {
        return false;
    }
    let last = &record.steps[n - 1];
    let mut scan = LidarScan::open(&cfg.lidar);
    scan.ranges = last.snapshot.ranges.clone();
    clearance(&scan, &cfg.footprint) >= cfg.env.restart_clearance
        && last.state.v.abs() <= cfg.env.restart_speed
        && record.steps[n - quiet..]
            .iter()
            .all(|s| !s.collided && s.mode == Mode::Resetting)
}

fn endurance(cache: &mut Cache) -> Verdict {
    let cfg = defaults(LEARNING_SEEDS[0]);
    let started = Instant::now();
    let mut collisions = 0;
    let mut bad_recoveries = Vec::new();
    let summary = {
        let opts = RunOptions {
            on_episode: Some(Box::new(|_, rec: &EpisodeRecord| {
                if rec.collided() {
                    collisions += 1;
                    if !ends_restartable(rec, &cfg) {
                        bad_recoveries.push(rec.episode);
                    }
                }
            })),
            ..RunOptions::default()
        };
        let mut run_cfg = cfg.clone();
        run_cfg.run.episodes = ENDURANCE_EPISODES;
        run_training(&run_cfg, opts).expect("endurance run")
    };
    let run_secs = started.elapsed().as_secs_f64();
    let max_reset = summary
        .rows
        .iter()
        .map(|r| r.reset_steps)
        .max()
        .unwrap_or(0);
    cache.es[0] = Some(summary.clone());

    // Dispersion: repeated recoveries from one nose-to-wall state.
    let mut dcfg = cfg.clone();
    dcfg.run.seed = 99;
    let mut env = ResetFreeEnv::new(dcfg.env_setup().unwrap()).unwrap();
    let r = cfg.track.r_out - cfg.lidar.mount_offset - 0.5 * cfg.footprint.length - 0.005;
    let fixed = VehicleState {
        x: r,
        y: 0.0,
        yaw: 0.1,
        ..VehicleState::default()
    };
    let mut exits: Vec<Vec2> = Vec::new();
    let mut first_steer = Vec::new();
    let mut dispersion_timeouts = 0;
    for _ in 0..DISPERSION_RESETS {
        env.place(fixed);
        match env.run_reset() {
            Ok(_) => {
                exits.push(Vec2::new(env.state().x, env.state().y));
                if let Some(rec) = env.take_finished_record() {
                    if let Some(s) = rec.steps.first() {
                        first_steer.push(s.applied_action.steering);
                    }
                }
            }
            Err(_) => dispersion_timeouts += 1,
        }
    }
    let mut distinct: Vec<Vec2> = Vec::new();
    for p in &exits {
        if distinct
            .iter()
            .all(|q| (*p - *q).norm() > DISTINCT_POSE_DIST)
        {
            distinct.push(*p);
        }
    }
    let mean = first_steer.iter().sum::<f64>() / first_steer.len().max(1) as f64;
    let steer_std = (first_steer.iter().map(|s| (s - mean).powi(2)).sum::<f64>()
        / first_steer.len().max(1) as f64)
        .sqrt();

    Verdict::new(
        summary.rows.len() == ENDURANCE_EPISODES
            && summary.reset_timeouts == 0
            && bad_recoveries.is_empty()
            && distinct.len() >= 2
            && dispersion_timeouts == 0
            && run_secs < 15.0 * 60.0,
        format!(
            "{} episodes in {run_secs:.0} s, {} reset timeouts, {collisions} collisions, \
             unrestartable recoveries {bad_recoveries:?}, max reset {max_reset} steps; \
             {} distinct exit poses (> {DISTINCT_POSE_DIST} m apart) over {} resets, first-step steering std {steer_std:.3}",
            summary.rows.len(),
            summary.reset_timeouts,
            distinct.len(),
            exits.len()
        ),
    )
}

fn mismatch_headroom(cache: &mut Cache) -> Verdict {
    let kbm = cached_baseline(cache, 0);
    let mut oracle_cfg = defaults(LEARNING_SEEDS[0]);
    oracle_cfg.mppi.baseline.model = PredictiveModel::Dynamic;
    let oracle = baseline_eval(&oracle_cfg);
    let mut grippy = defaults(LEARNING_SEEDS[0]);
    grippy.vehicle.mu = 1.0;
    let grippy = baseline_eval(&grippy);
    let (k, o, g) = (
        kbm.mean_return(),
        oracle.mean_return(),
        grippy.mean_return(),
    );
    Verdict::new(
        o > k && g > k,
        format!(
            "mean return over {EVAL_EPISODES} episodes: KBM planner {k:.2}, ground-truth planner {o:.2}, \
             KBM planner at mu 1.0 {g:.2}"
        ),
    )
}

fn learning_beats_baseline(cache: &mut Cache) -> Verdict {
    let mut wins = 0;
    let mut parts = Vec::new();
    for (i, &seed) in LEARNING_SEEDS.iter().enumerate() {
        let es = cache.es[i]
            .get_or_insert_with(|| {
                let mut cfg = defaults(seed);
                cfg.run.agent = AgentKind::Es;
                cfg.run.w_b = 1.0;
                run_training(&cfg, RunOptions::quiet()).expect("training run")
            })
            .clone();
        let base = cached_baseline(cache, i);
        let win = es.final_mean > base.mean_return();
        wins += usize::from(win);
        parts.push(format!(
            "seed {seed}: ES final-20 {:.2} vs baseline {:.2}",
            es.final_mean,
            base.mean_return()
        ));
    }
    Verdict::new(
        wins >= LEARNING_WINS_NEEDED,
        format!(
            "{wins}/{} seeds ahead ({})",
            LEARNING_SEEDS.len(),
            parts.join("; ")
        ),
    )
}

fn latency(_: &mut Cache) -> Verdict {
    let cfg = defaults(0);
    let setup = cfg.env_setup().unwrap();
    let env = ResetFreeEnv::new(setup).unwrap();
    let mppi = cfg.mppi.base;
    let ctx = || PlanContext {
        track: env.track(),
        rig: env.rig(),
        params: env.params(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut prior = init_plan(&mppi);
    let mut times = Vec::with_capacity(LATENCY_CALLS);
    for i in 0..LATENCY_CALLS {
        let angle = rng.random_range(-PI..PI);
        let r = rng.random_range(1.8..2.2);
        let state = VehicleState {
            x: r * angle.cos(),
            y: r * angle.sin(),
            yaw: angle + 0.5 * PI + rng.random_range(-0.3..0.3),
            v: rng.random_range(0.0..3.0),
            ..VehicleState::default()
        };
        let t = Instant::now();
        prior = plan(
            &state,
            ctx(),
            Objective::Drive(cfg.reward),
            &prior,
            &mppi,
            i as u64,
        );
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    let p99 = times[(times.len() * 99).div_ceil(100) - 1];
    Verdict::new(
        median < MEDIAN_BUDGET_MS && p99 < P99_BUDGET_MS,
        format!(
            "K={} T={}: median {median:.2} ms (< {MEDIAN_BUDGET_MS}), p99 {p99:.2} ms (< {P99_BUDGET_MS}) on {} worker thread(s)",
            mppi.samples,
            mppi.horizon,
            rayon::current_num_threads()
        ),
    )
}

fn determinism(_: &mut Cache) -> Verdict {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let csvs: Vec<Vec<u8>> = dirs
        .iter()
        .map(|d| {
            let mut cfg = defaults(5);
            cfg.run.agent = AgentKind::Es;
            cfg.run.episodes = DETERMINISM_EPISODES;
            cfg.run.out = d.path().to_path_buf();
            run_training(&cfg, RunOptions::from_config(&cfg)).expect("training run");
            fs::read(d.path().join("episodes.csv")).unwrap()
        })
        .collect();
    let lines = String::from_utf8_lossy(&csvs[0]).lines().count();
    Verdict::new(
        csvs[0] == csvs[1] && lines == DETERMINISM_EPISODES + 1,
        format!(
            "two seed-matched runs of {DETERMINISM_EPISODES} episodes, CSVs byte-identical: {}",
            csvs[0] == csvs[1]
        ),
    )
}

type Criterion = fn(&mut Cache) -> Verdict;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 8] = [
        ("dynamics-oracles", dynamics_oracles),
        ("mppi-oracle", mppi_oracle),
        ("reward-override-contract", reward_and_override_contract),
        ("latency", latency),
        ("determinism", determinism),
        ("endurance", endurance),
        ("mismatch-headroom", mismatch_headroom),
        ("learning-beats-baseline", learning_beats_baseline),
    ];
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    if std::env::args().any(|a| a == "--list") {
        for (name, _) in &criteria {
            println!("{name}: test");
        }
        return ExitCode::SUCCESS;
    }
    let mut cache = Cache::new();
    let mut unexpected = 0;
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let v = run(&mut cache);
        let secs = started.elapsed().as_secs_f64();
        let known = KNOWN_FAILURES.contains(&name);
        let status = match (v.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        if !v.pass && !known {
            unexpected += 1;
        }
        println!("{status:<12} {name:<26} {} [{secs:.1} s]", v.detail);
    }
    if unexpected > 0 {
        println!("{unexpected} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
