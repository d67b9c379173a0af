//! Sampling-based path-integral planner.
//!
//! Each call draws `K` Gaussian perturbations of the prior mean sequence, rolls
//! them out through a predictive model, scores them with the cumulative
//! predicted reward and averages them with weights `exp((S_i − max S)/λ)`.
//! Sampling around the previous solution and weighting exponentially is what
//! realizes the KL-regularized objective; no KL term is evaluated explicitly.
//!
//! Per-sample random streams are derived from `(seed, sample index)`, so plans
//! are bit-identical however the rollouts are scheduled across workers.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    clamp_command, speed_bound, ControlCommand, PredictiveModel, VehicleParams, VehicleState,
};
use crate::env::{compute_reward, RewardConfig};
use crate::error::{Error, Result};
use crate::geometry::{Segment, Vec2};
use crate::rng::stream_rng;
use crate::track::{SensorRig, TrackGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseStd {
    pub speed: f64,
    pub steering: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MppiConfig {
    pub horizon: usize,
    /// Duration of one horizon step, s.
    pub dt: f64,
    pub samples: usize,
    /// Temperature λ.
    pub lambda: f64,
    pub noise_std: NoiseStd,
    /// Weight of the previous terminal command in the slot appended by
    /// [`shift_prior`]; the remainder mixes toward zero.
    pub prior_decay: f64,
    pub model: PredictiveModel,
}

impl Default for MppiConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: 0.01,
            samples: 1024,
            lambda: 0.001,
            noise_std: NoiseStd {
                speed: 0.5,
                steering: 0.15,
            },
            prior_decay: 1.0,
            model: PredictiveModel::Kinematic,
        }
    }
}

impl MppiConfig {
    /// The non-learning comparison planner: same model and reward, λ = 0.1.
    pub fn baseline() -> Self {
        Self {
            lambda: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.samples == 0 {
            return Err(Error::Config("mppi horizon and samples must be ≥ 1".into()));
        }
        if !(self.lambda > 0.0 && self.dt > 0.0) {
            return Err(Error::Config(format!(
                "mppi lambda and dt must be > 0, got {} / {}",
                self.lambda, self.dt
            )));
        }
        if !(self.noise_std.speed > 0.0 && self.noise_std.steering > 0.0) {
            return Err(Error::Config(
                "mppi noise_std must be > 0 per channel".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.prior_decay) {
            return Err(Error::Config("mppi prior_decay must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MppiPlan {
    pub mean: Vec<ControlCommand>,
    /// Per-step, per-channel standard deviation (weighted spread of the samples).
    pub std: Vec<NoiseStd>,
    pub weights: Vec<f64>,
    /// Predicted cumulative reward of the mean sequence; `−∞` flags that every
    /// sampled rollout collided on its first step.
    pub predicted_return: f64,
}

impl MppiPlan {
    pub fn horizon(&self) -> usize {
        self.mean.len()
    }

    pub fn is_infeasible(&self) -> bool {
        self.predicted_return == f64::NEG_INFINITY
    }
}

/// Zero mean, configured spread, uniform weights.
pub fn init_plan(config: &MppiConfig) -> MppiPlan {
    MppiPlan {
        mean: vec![ControlCommand::ZERO; config.horizon],
        std: vec![config.noise_std; config.horizon],
        weights: vec![1.0 / config.samples as f64; config.samples],
        predicted_return: 0.0,
    }
}

/// Warm start: drop the first command, shift left, append the old terminal
/// command scaled by `prior_decay`.
pub fn shift_prior(plan: &MppiPlan, config: &MppiConfig) -> MppiPlan {
    let mut mean: Vec<ControlCommand> = plan.mean.iter().skip(1).copied().collect();
    let mut std: Vec<NoiseStd> = plan.std.iter().skip(1).copied().collect();
    let last = plan.mean.last().copied().unwrap_or(ControlCommand::ZERO);
    mean.push(ControlCommand::new(
        config.prior_decay * last.speed,
        config.prior_decay * last.steering,
    ));
    std.push(config.noise_std);
    MppiPlan {
        mean,
        std,
        weights: vec![1.0 / config.samples as f64; config.samples],
        predicted_return: plan.predicted_return,
    }
}

/// Executed action: a Gaussian draw around the first command of the plan.
pub fn sample_action<R: Rng>(
    plan: &MppiPlan,
    params: &VehicleParams,
    rng: &mut R,
) -> ControlCommand {
    let mean = plan.mean.first().copied().unwrap_or(ControlCommand::ZERO);
    let std = plan.std.first().copied().unwrap_or(NoiseStd {
        speed: 0.0,
        steering: 0.0,
    });
    let ns: f64 = rng.sample(StandardNormal);
    let nd: f64 = rng.sample(StandardNormal);
    clamp_command(
        ControlCommand::new(
            mean.speed + std.speed * ns,
            mean.steering + std.steering * nd,
        ),
        params,
    )
}

/// Normalized exponential weights with the mandatory max-subtraction.
/// Non-finite scores get zero weight; if no score is finite the weights are
/// uniform.
pub fn softmax_weights(scores: &[f64], lambda: f64) -> Vec<f64> {
    let max = scores
        .iter()
        .copied()
        .filter(|s| s.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![1.0 / scores.len() as f64; scores.len()];
    }
    let raw: Vec<f64> = scores
        .iter()
        .map(|&s| {
            if s.is_finite() {
                ((s - max) / lambda).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Score of one rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutScore {
    pub total: f64,
    /// The very first predicted step was already a collision.
    pub immediate_collision: bool,
}

/// Anything the planner can roll an action sequence through.
pub trait Rollout: Sync {
    fn evaluate(&self, actions: &[ControlCommand]) -> RolloutScore;
    fn clamp(&self, cmd: ControlCommand) -> ControlCommand;
}

/// Core planner iteration over an arbitrary rollout model.
pub fn plan_with<R: Rollout>(
    rollout: &R,
    prior: &MppiPlan,
    config: &MppiConfig,
    seed: u64,
) -> MppiPlan {
    let horizon = config.horizon;
    let fresh;
    let prior = if prior.horizon() == horizon {
        prior
    } else {
        fresh = init_plan(config);
        &fresh
    };
    let samples: Vec<(Vec<ControlCommand>, RolloutScore)> = (0..config.samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let seq: Vec<ControlCommand> = prior
                .mean
                .iter()
                .map(|m| {
                    let ns: f64 = rng.sample(StandardNormal);
                    let nd: f64 = rng.sample(StandardNormal);
                    rollout.clamp(ControlCommand::new(
                        m.speed + config.noise_std.speed * ns,
                        m.steering + config.noise_std.steering * nd,
                    ))
                })
                .collect();
            let score = rollout.evaluate(&seq);
            (seq, score)
        })
        .collect();

    if samples.iter().all(|(_, s)| s.immediate_collision) {
        return MppiPlan {
            predicted_return: f64::NEG_INFINITY,
            ..prior.clone()
        };
    }

    let scores: Vec<f64> = samples.iter().map(|(_, s)| s.total).collect();
    let weights = softmax_weights(&scores, config.lambda);
    let mut mean = vec![ControlCommand::ZERO; horizon];
    for ((seq, _), &w) in samples.iter().zip(&weights) {
        for (m, a) in mean.iter_mut().zip(seq) {
            m.speed += w * a.speed;
            m.steering += w * a.steering;
        }
    }
    let mut var = vec![(0.0f64, 0.0f64); horizon];
    for ((seq, _), &w) in samples.iter().zip(&weights) {
        for ((v, a), m) in var.iter_mut().zip(seq).zip(&mean) {
            v.0 += w * (a.speed - m.speed).powi(2);
            v.1 += w * (a.steering - m.steering).powi(2);
        }
    }
    let std = var
        .into_iter()
        .map(|(s, d)| NoiseStd {
            speed: s.sqrt(),
            steering: d.sqrt(),
        })
        .collect();
    let predicted_return = rollout.evaluate(&mean).total;
    MppiPlan {
        mean,
        std,
        weights,
        predicted_return,
    }
}

/// What the planner optimizes along a predicted trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Per-step driving reward `w_v·v − w_c·|v|·𝕀`; a predicted collision ends
    /// the rollout.
    Drive(RewardConfig),
    /// Reset behavior: move the body away from the walls, then come to rest.
    Recover(RecoveryObjective),
}

/// Per-step reward `w_clearance·min(c, goal) − w_speed·|v| − w_collision·𝕀`,
/// where `c` is the footprint-corrected LiDAR clearance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryObjective {
    pub clearance_goal: f64,
    pub w_clearance: f64,
    pub w_speed: f64,
    pub w_collision: f64,
}

impl Default for RecoveryObjective {
    fn default() -> Self {
        Self {
            clearance_goal: 0.15,
            w_clearance: 100.0,
            w_speed: 1.0,
            w_collision: 10.0,
        }
    }
}

/// Shared read-only world the planner predicts against.
#[derive(Debug, Clone, Copy)]
pub struct PlanContext<'a> {
    pub track: &'a TrackGeometry,
    pub rig: &'a SensorRig,
    pub params: &'a VehicleParams,
}

/// Rollouts of the vehicle through a predictive model, scored by raycasting
/// at every predicted pose.
pub struct VehicleRollout<'a> {
    start: VehicleState,
    ctx: PlanContext<'a>,
    model: PredictiveModel,
    dt: f64,
    objective: Objective,
    cap: f64,
    local: Vec<Segment>,
    local_center: Vec2,
    local_radius: f64,
}

impl<'a> VehicleRollout<'a> {
    pub fn new(
        start: VehicleState,
        ctx: PlanContext<'a>,
        config: &MppiConfig,
        objective: Objective,
    ) -> Self {
        let cap = match objective {
            Objective::Drive(_) => ctx.rig.footprint.collision_margin,
            Objective::Recover(r) => r.clearance_goal.max(ctx.rig.footprint.collision_margin),
        };
        // Only walls within reach of the sensor over the horizon can influence
        // the score; poses that leave this disc fall back to the full track.
        let travel = speed_bound(&start, ctx.params) * config.dt * config.horizon as f64;
        let center = ctx.rig.lidar.sensor_pose(&start).position();
        let radius =
            travel + 2.0 * ctx.rig.lidar.mount_offset.abs() + ctx.rig.max_extent() + cap + 0.05;
        Self {
            start,
            ctx,
            model: config.model,
            dt: config.dt,
            objective,
            cap,
            local: ctx.track.segments_near(center, radius),
            local_center: center,
            local_radius: radius,
        }
    }

    fn segments_for(&self, state: &VehicleState) -> &[Segment] {
        let sensor = self.ctx.rig.lidar.sensor_pose(state).position();
        let needed = self.ctx.rig.max_extent() + self.cap;
        if (sensor - self.local_center).norm() + needed <= self.local_radius {
            &self.local
        } else {
            self.ctx.track.segments()
        }
    }
}

impl Rollout for VehicleRollout<'_> {
    fn evaluate(&self, actions: &[ControlCommand]) -> RolloutScore {
        let mut state = self.start;
        let mut total = 0.0;
        let mut immediate_collision = false;
        for (t, &a) in actions.iter().enumerate() {
            state = match self.model.step(&state, a, self.ctx.params, self.dt) {
                Ok(s) => s,
                Err(_) => {
                    return RolloutScore {
                        total: f64::NEG_INFINITY,
                        immediate_collision: t == 0,
                    }
                }
            };
            let probe = self
                .ctx
                .rig
                .probe(self.segments_for(&state), &state, self.cap);
            match self.objective {
                Objective::Drive(reward) => {
                    total += compute_reward(state.v, probe.collided, &reward);
                    if probe.collided {
                        immediate_collision = t == 0;
                        break;
                    }
                }
                Objective::Recover(r) => {
                    total += r.w_clearance * probe.clearance.min(r.clearance_goal)
                        - r.w_speed * state.v.abs()
                        - if probe.collided { r.w_collision } else { 0.0 };
                }
            }
        }
        RolloutScore {
            total,
            immediate_collision,
        }
    }

    fn clamp(&self, cmd: ControlCommand) -> ControlCommand {
        clamp_command(cmd, self.ctx.params)
    }
}

/// Plans from `state` against the track with the configured predictive model.
pub fn plan(
    state: &VehicleState,
    ctx: PlanContext<'_>,
    objective: Objective,
    prior: &MppiPlan,
    config: &MppiConfig,
    seed: u64,
) -> MppiPlan {
    let rollout = VehicleRollout::new(*state, ctx, config, objective);
    plan_with(&rollout, prior, config, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    /// One-step surrogate problem: reward −(a − a*)² on the speed channel.
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

    /// Scores derived from the first action only, in [−10, 10].
    struct Bounded;

    impl Rollout for Bounded {
        fn evaluate(&self, actions: &[ControlCommand]) -> RolloutScore {
            RolloutScore {
                total: 10.0 * actions[0].speed.tanh(),
                immediate_collision: false,
            }
        }
        fn clamp(&self, cmd: ControlCommand) -> ControlCommand {
            cmd
        }
    }

    struct AlwaysCrash;

    impl Rollout for AlwaysCrash {
        fn evaluate(&self, _: &[ControlCommand]) -> RolloutScore {
            RolloutScore {
                total: 0.0,
                immediate_collision: true,
            }
        }
        fn clamp(&self, cmd: ControlCommand) -> ControlCommand {
            cmd
        }
    }

    fn cfg(horizon: usize, samples: usize, lambda: f64) -> MppiConfig {
        MppiConfig {
            horizon,
            samples,
            lambda,
            ..MppiConfig::default()
        }
    }

    #[test]
    fn single_sample_plan_is_that_sample() {
        let config = cfg(5, 1, 0.001);
        let prior = MppiPlan {
            mean: (0..5)
                .map(|i| ControlCommand::new(0.1 * i as f64, -0.02 * i as f64))
                .collect(),
            ..init_plan(&config)
        };
        let out = plan_with(&Quadratic { target: 1.0 }, &prior, &config, 42);
        // Reproduce the single perturbed sequence from the documented stream.
        let mut rng = stream_rng(42, 0);
        for (m, p) in out.mean.iter().zip(&prior.mean) {
            let ns: f64 = rng.sample(StandardNormal);
            let nd: f64 = rng.sample(StandardNormal);
            assert_eq!(m.speed, p.speed + config.noise_std.speed * ns);
            assert_eq!(m.steering, p.steering + config.noise_std.steering * nd);
        }
        assert_eq!(out.weights, vec![1.0]);
    }

    #[test]
    fn high_temperature_gives_uniform_weights() {
        let config = cfg(3, 256, 1e9);
        let prior = init_plan(&config);
        let out = plan_with(&Bounded, &prior, &config, 3);
        let uniform = 1.0 / 256.0;
        assert!(out.weights.iter().all(|w| (w - uniform).abs() < 1e-6));
        // mean ≈ plain average of the samples
        let mut avg = 0.0;
        for k in 0..256 {
            let mut rng = stream_rng(3, k);
            let ns: f64 = rng.sample(StandardNormal);
            avg += config.noise_std.speed * ns / 256.0;
        }
        assert!((out.mean[0].speed - avg).abs() < 1e-6);
    }

    /// Grid-search oracle over the one-step action space gives the optimum; the
    /// planner must land within 2σ/√K of it.
    #[test]
    fn quadratic_surrogate_matches_grid_search_optimum() {
        let target = 0.37;
        let surrogate = Quadratic { target };
        let oracle = (0..=20_000)
            .map(|i| -2.0 + 4.0 * i as f64 / 20_000.0)
            .max_by(|a, b| {
                let sa = surrogate.evaluate(&[ControlCommand::new(*a, 0.0)]).total;
                let sb = surrogate.evaluate(&[ControlCommand::new(*b, 0.0)]).total;
                sa.total_cmp(&sb)
            })
            .unwrap();
        assert!((oracle - target).abs() <= 2e-4);
        let config = MppiConfig {
            horizon: 1,
            samples: 10_000,
            lambda: 1e-4,
            ..MppiConfig::default()
        };
        let out = plan_with(&surrogate, &init_plan(&config), &config, 11);
        let tol = 2.0 * config.noise_std.speed / (config.samples as f64).sqrt();
        assert!(
            (out.mean[0].speed - oracle).abs() < tol,
            "{} vs {oracle} (tol {tol})",
            out.mean[0].speed
        );
        let sum: f64 = out.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn all_immediate_collisions_return_prior_flagged() {
        let config = cfg(4, 16, 0.1);
        let prior = MppiPlan {
            mean: vec![ControlCommand::new(1.0, 0.2); 4],
            ..init_plan(&config)
        };
        let out = plan_with(&AlwaysCrash, &prior, &config, 0);
        assert!(out.is_infeasible());
        assert_eq!(out.mean, prior.mean);
    }

    #[test]
    fn mismatched_prior_horizon_falls_back_to_init() {
        let config = cfg(4, 1, 0.1);
        let wrong = init_plan(&cfg(7, 1, 0.1));
        let out = plan_with(&Quadratic { target: 0.0 }, &wrong, &config, 1);
        assert_eq!(out.horizon(), 4);
    }

    #[test]
    fn plans_are_deterministic() {
        let config = cfg(10, 300, 0.01);
        let prior = init_plan(&config);
        let a = plan_with(&Bounded, &prior, &config, 99);
        let b = plan_with(&Bounded, &prior, &config, 99);
        assert_eq!(a, b);
    }

    #[test]
    fn shift_examples() {
        let config = MppiConfig {
            horizon: 3,
            prior_decay: 0.0,
            ..MppiConfig::default()
        };
        let plan = MppiPlan {
            mean: vec![
                ControlCommand::new(1.0, 0.1),
                ControlCommand::new(2.0, 0.2),
                ControlCommand::new(3.0, 0.3),
            ],
            ..init_plan(&config)
        };
        let shifted = shift_prior(&plan, &config);
        assert_eq!(
            shifted.mean,
            vec![
                ControlCommand::new(2.0, 0.2),
                ControlCommand::new(3.0, 0.3),
                ControlCommand::ZERO
            ]
        );
        let keep = shift_prior(
            &plan,
            &MppiConfig {
                prior_decay: 1.0,
                ..config
            },
        );
        assert_eq!(keep.mean[2], plan.mean[2]);
        let half = shift_prior(
            &plan,
            &MppiConfig {
                prior_decay: 0.5,
                ..config
            },
        );
        assert_eq!(half.mean[2], ControlCommand::new(1.5, 0.15));
        let zero = init_plan(&config);
        assert_eq!(shift_prior(&zero, &config).mean, zero.mean);
        assert!(shifted
            .weights
            .iter()
            .all(|&w| w == 1.0 / config.samples as f64));
    }

    #[test]
    fn zero_spread_sample_is_the_mean() {
        let params = VehicleParams::default();
        let plan = MppiPlan {
            mean: vec![ControlCommand::new(1.25, -0.05)],
            std: vec![NoiseStd {
                speed: 0.0,
                steering: 0.0,
            }],
            weights: vec![1.0],
            predicted_return: 0.0,
        };
        let mut rng = stream_rng(5, 0);
        assert_eq!(sample_action(&plan, &params, &mut rng), plan.mean[0]);
    }

    #[test]
    fn sample_action_law_of_large_numbers() {
        let params = VehicleParams::default();
        let plan = MppiPlan {
            mean: vec![ControlCommand::new(1.0, 0.05)],
            std: vec![NoiseStd {
                speed: 0.3,
                steering: 0.04,
            }],
            weights: vec![1.0],
            predicted_return: 0.0,
        };
        let mut rng = stream_rng(8, 0);
        let n = 100_000;
        let (mut s, mut d) = (0.0, 0.0);
        for _ in 0..n {
            let a = sample_action(&plan, &params, &mut rng);
            s += a.speed;
            d += a.steering;
        }
        let (ms, md) = (s / n as f64, d / n as f64);
        assert!((ms - 1.0).abs() < 4.0 * 0.3 / (n as f64).sqrt());
        assert!((md - 0.05).abs() < 4.0 * 0.04 / (n as f64).sqrt());
    }

    #[test]
    fn sampled_actions_respect_the_speed_cap() {
        let params = VehicleParams::default();
        let plan = MppiPlan {
            mean: vec![ControlCommand::new(params.v_max, 0.0)],
            std: vec![NoiseStd {
                speed: 1.0,
                steering: 0.3,
            }],
            weights: vec![1.0],
            predicted_return: 0.0,
        };
        let mut rng = stream_rng(1, 1);
        for _ in 0..10_000 {
            let a = sample_action(&plan, &params, &mut rng);
            assert!(a.speed <= params.v_max && a.steering.abs() <= params.delta_max);
        }
    }

    fn entropy(w: &[f64]) -> f64 {
        -w.iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| x * x.ln())
            .sum::<f64>()
    }

    proptest! {
        /// Scores and shifts on a dyadic grid so `S + c` is exact in binary and the
        /// invariance can be asserted bit for bit.
        #[test]
        fn weights_are_shift_invariant(raw in prop::collection::vec(-10_240i64..10_240, 1..64), shift in -1000i64..1000, lambda in 0.001..10.0f64) {
            let scores: Vec<f64> = raw.iter().map(|&k| k as f64 / 1024.0).collect();
            let shifted: Vec<f64> = scores.iter().map(|&s| s + shift as f64).collect();
            let a = softmax_weights(&scores, lambda);
            let b = softmax_weights(&shifted, lambda);
            prop_assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        }

        #[test]
        fn weights_nearly_shift_invariant_for_real_offsets(scores in prop::collection::vec(-50.0..50.0f64, 1..64), shift in -1000.0..1000.0f64, lambda in 0.01..10.0f64) {
            let shifted: Vec<f64> = scores.iter().map(|&s| s + shift).collect();
            let a = softmax_weights(&scores, lambda);
            let b = softmax_weights(&shifted, lambda);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn weights_sum_to_one(scores in prop::collection::vec(-50.0..50.0f64, 1..200), lambda in 1e-4..100.0f64) {
            let w = softmax_weights(&scores, lambda);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn entropy_non_decreasing_in_temperature(scores in prop::collection::vec(-10.0..10.0f64, 2..100), l1 in 1e-3..10.0f64, factor in 1.0..100.0f64) {
            let h1 = entropy(&softmax_weights(&scores, l1));
            let h2 = entropy(&softmax_weights(&scores, l1 * factor));
            prop_assert!(h2 >= h1 - 1e-12);
        }
    }
}
