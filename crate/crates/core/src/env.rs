//! The reset-free driving MDP.
//!
//! A step composes the forward-policy action with the MPPI base action, advances
//! the ground-truth vehicle over one control period, scans, scores the step
//! and pushes a new slot into the observation history. After a terminal step the
//! environment only moves again through [`ResetFreeEnv::run_reset`], which
//! drives with the base planner under a recovery objective until the vehicle
//! is restartable, or through [`ResetFreeEnv::begin_episode`].

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{clamp_command, dynamic_step, ControlCommand, VehicleParams, VehicleState};
use crate::error::{Error, Result};
use crate::mppi::{
    init_plan, plan, sample_action, shift_prior, MppiConfig, MppiPlan, Objective, PlanContext,
    RecoveryObjective,
};
use crate::record::{EpisodeRecord, Mode, SensorSnapshot, StepRecord};
use crate::rng::{derive_seed, named_rng, streams, substream};
use crate::track::{
    add_range_noise, clearance, collision_indicator, raycast, Footprint, LidarConfig, LidarScan,
    SensorRig, TrackGeometry,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub w_v: f64,
    pub w_c: f64,
    pub gamma: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w_v: 1.0,
            w_c: 1.0,
            gamma: 0.99,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_v >= 0.0 && self.w_c >= 0.0) {
            return Err(Error::Config("reward weights must be ≥ 0".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "reward.gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// `w_v·v − w_c·|v|·𝕀`, with `v` the speed realized at the end of the step.
pub fn compute_reward(v: f64, collided: bool, cfg: &RewardConfig) -> f64 {
    let penalty = if collided { cfg.w_c * v.abs() } else { 0.0 };
    cfg.w_v * v - penalty
}

/// Residual composition with collision override: in contact the base action is
/// applied untouched, otherwise `clamp(forward + w_b·base)`.
pub fn compose_action(
    forward: ControlCommand,
    base: ControlCommand,
    collided: bool,
    w_b: f64,
    params: &VehicleParams,
) -> ControlCommand {
    if collided {
        base
    } else {
        clamp_command(
            ControlCommand::new(
                forward.speed + w_b * base.speed,
                forward.steering + w_b * base.steering,
            ),
            params,
        )
    }
}

fn default_w_b() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Residual weight; set from the run section of the experiment config.
    #[serde(skip, default = "default_w_b")]
    pub w_b: f64,
    pub max_steps: usize,
    pub control_dt: f64,
    /// Integration step of the ground-truth simulator within a control period.
    pub substep_dt: f64,
    /// History length L; observations hold L + 1 slots.
    pub history: usize,
    /// Minimum footprint-corrected LiDAR clearance of a restartable state, m.
    pub restart_clearance: f64,
    pub restart_speed: f64,
    pub restart_quiet_steps: usize,
    pub reset_timeout_steps: usize,
    pub recovery: RecoveryObjective,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            w_b: 1.0,
            max_steps: 500,
            control_dt: 0.02,
            substep_dt: 0.005,
            history: 3,
            restart_clearance: 0.10,
            restart_speed: 0.1,
            restart_quiet_steps: 10,
            reset_timeout_steps: 1500,
            recovery: RecoveryObjective::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.w_b) {
            return Err(Error::Config(format!(
                "w_b must lie in [0, 1], got {}",
                self.w_b
            )));
        }
        if self.w_b != 0.0 && self.w_b != 1.0 {
            log::warn!(
                "w_b = {} is outside the {{0, 1}} experiment matrix",
                self.w_b
            );
        }
        if self.max_steps == 0 || self.reset_timeout_steps == 0 {
            return Err(Error::Config(
                "env.max_steps and env.reset_timeout_steps must be ≥ 1".into(),
            ));
        }
        if !(self.control_dt > 0.0 && self.substep_dt > 0.0 && self.substep_dt <= self.control_dt) {
            return Err(Error::Config(
                "env needs 0 < substep_dt ≤ control_dt".into(),
            ));
        }
        if !(self.restart_clearance >= 0.0 && self.restart_speed >= 0.0) {
            return Err(Error::Config("env restart thresholds must be ≥ 0".into()));
        }
        if self.recovery.clearance_goal < self.restart_clearance {
            return Err(Error::Config(format!(
                "env.recovery.clearance_goal ({}) must be ≥ env.restart_clearance ({})",
                self.recovery.clearance_goal, self.restart_clearance
            )));
        }
        Ok(())
    }
}

/// Affine maps of the physical channels onto [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub v_bound: f64,
    pub yaw_rate_bound: f64,
    pub accel_bound: f64,
    pub delta_max: f64,
    pub max_range: f64,
    pub v_max: f64,
    pub num_beams: usize,
}

fn unit(x: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.5;
    }
    let u = (x - lo) / (hi - lo);
    if u.is_nan() {
        0.5
    } else {
        u.clamp(0.0, 1.0)
    }
}

impl Normalizer {
    pub fn new(params: &VehicleParams, lidar: &LidarConfig) -> Self {
        Self {
            v_bound: 3.0,
            yaw_rate_bound: 6.0,
            accel_bound: 15.0,
            delta_max: params.delta_max,
            max_range: lidar.max_range,
            v_max: params.v_max,
            num_beams: lidar.num_beams,
        }
    }

    /// Values per history slot: v, ω, accel, δ, ranges, base speed, base steering.
    pub fn slot_width(&self) -> usize {
        6 + self.num_beams
    }

    pub fn slot(&self, s: &SensorSnapshot, out: &mut Vec<f64>) {
        out.push(unit(s.v, -self.v_bound, self.v_bound));
        out.push(unit(s.yaw_rate, -self.yaw_rate_bound, self.yaw_rate_bound));
        out.push(unit(s.accel, -self.accel_bound, self.accel_bound));
        out.push(unit(s.delta, -self.delta_max, self.delta_max));
        out.extend(s.ranges.iter().map(|&r| unit(r, 0.0, self.max_range)));
        out.push(unit(s.base_action.speed, -self.v_max, self.v_max));
        out.push(unit(
            s.base_action.steering,
            -self.delta_max,
            self.delta_max,
        ));
    }

    /// Concatenates the slots oldest first.
    pub fn observation<'a>(
        &self,
        history: impl IntoIterator<Item = &'a SensorSnapshot>,
    ) -> Observation {
        let mut values = Vec::new();
        for s in history {
            self.slot(s, &mut values);
        }
        Observation {
            values,
            slot_width: self.slot_width(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub values: Vec<f64>,
    pub slot_width: usize,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slots(&self) -> std::slice::Chunks<'_, f64> {
        self.values.chunks(self.slot_width.max(1))
    }
}

/// Observations a learner saw during one episode, regenerated from its record:
/// the initial one, then one per forward step.
pub fn replay_observations(
    record: &EpisodeRecord,
    normalizer: &Normalizer,
    history: usize,
) -> Result<Vec<Observation>> {
    let initial = record
        .initial_snapshot
        .as_ref()
        .ok_or_else(|| Error::Parse("record has no initial snapshot".into()))?;
    let mut slots: VecDeque<&SensorSnapshot> = std::iter::repeat_n(initial, history + 1).collect();
    let mut out = vec![normalizer.observation(slots.iter().copied())];
    for step in record.forward_steps() {
        slots.pop_front();
        slots.push_back(&step.snapshot);
        out.push(normalizer.observation(slots.iter().copied()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub base_action: ControlCommand,
    pub applied_action: ControlCommand,
    pub collided: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub mode: Mode,
    pub info: StepInfo,
}

/// Everything needed to build an environment.
#[derive(Debug, Clone)]
pub struct EnvSetup {
    pub params: VehicleParams,
    pub track: TrackGeometry,
    pub lidar: LidarConfig,
    pub footprint: Footprint,
    pub env: EnvConfig,
    pub reward: RewardConfig,
    /// Base policy during forward driving.
    pub drive_mppi: MppiConfig,
    /// Base policy during reset.
    pub reset_mppi: MppiConfig,
    pub seed: u64,
}

impl EnvSetup {
    /// Default world on the default annulus.
    pub fn with_defaults(seed: u64) -> Result<Self> {
        Ok(Self {
            params: VehicleParams::default(),
            track: TrackGeometry::annulus(1.5, 2.5, 64)?,
            lidar: LidarConfig::default(),
            footprint: Footprint::default(),
            env: EnvConfig::default(),
            reward: RewardConfig::default(),
            drive_mppi: MppiConfig::default(),
            reset_mppi: MppiConfig::default(),
            seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Running,
    Paused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Planner {
    Drive,
    Reset,
}

pub struct ResetFreeEnv {
    params: VehicleParams,
    track: TrackGeometry,
    rig: SensorRig,
    config: EnvConfig,
    reward: RewardConfig,
    drive_mppi: MppiConfig,
    reset_mppi: MppiConfig,
    normalizer: Normalizer,

    state: VehicleState,
    scan: LidarScan,
    collided: bool,
    quiet: usize,
    phase: Phase,
    steps: usize,
    next_episode: usize,
    history: VecDeque<SensorSnapshot>,
    pending_base: ControlCommand,
    drive_prior: MppiPlan,
    reset_prior: MppiPlan,
    plan_seed: u64,
    plan_counter: u64,
    exec_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    record: EpisodeRecord,
    finished: Option<EpisodeRecord>,
}

impl ResetFreeEnv {
    pub fn new(setup: EnvSetup) -> Result<Self> {
        setup.params.validate()?;
        setup.lidar.validate()?;
        setup.footprint.validate()?;
        setup.env.validate()?;
        setup.reward.validate()?;
        setup.drive_mppi.validate()?;
        setup.reset_mppi.validate()?;
        let normalizer = Normalizer::new(&setup.params, &setup.lidar);
        let state = VehicleState::at_rest(setup.track.spawn());
        let mut env = Self {
            rig: SensorRig::new(setup.lidar, setup.footprint),
            scan: LidarScan::open(&setup.lidar),
            params: setup.params,
            track: setup.track,
            config: setup.env,
            reward: setup.reward,
            drive_mppi: setup.drive_mppi,
            reset_mppi: setup.reset_mppi,
            normalizer,
            state,
            collided: false,
            quiet: 0,
            phase: Phase::Paused,
            steps: 0,
            next_episode: 0,
            history: VecDeque::new(),
            pending_base: ControlCommand::ZERO,
            drive_prior: init_plan(&setup.drive_mppi),
            reset_prior: init_plan(&setup.reset_mppi),
            plan_seed: substream(setup.seed, streams::MPPI_SAMPLING),
            plan_counter: 0,
            exec_rng: named_rng(setup.seed, streams::MPPI_EXECUTION),
            noise_rng: named_rng(setup.seed, streams::SENSOR_NOISE),
            record: EpisodeRecord::default(),
            finished: None,
        };
        env.respawn();
        Ok(env)
    }

    pub fn params(&self) -> &VehicleParams {
        &self.params
    }

    pub fn track(&self) -> &TrackGeometry {
        &self.track
    }

    pub fn rig(&self) -> &SensorRig {
        &self.rig
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn scan(&self) -> &LidarScan {
        &self.scan
    }

    pub fn collided(&self) -> bool {
        self.collided
    }

    pub fn is_running(&self) -> bool {
        self.phase == Phase::Running
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn obs_dim(&self) -> usize {
        self.normalizer.slot_width() * (self.config.history + 1)
    }

    pub fn current_record(&self) -> &EpisodeRecord {
        &self.record
    }

    /// The record closed by the latest [`begin_episode`](Self::begin_episode).
    pub fn take_finished_record(&mut self) -> Option<EpisodeRecord> {
        self.finished.take()
    }

    pub fn observation(&self) -> Observation {
        self.normalizer.observation(&self.history)
    }

    /// Restartable predicate: clearance, low speed and enough consecutive
    /// contact-free steps.
    pub fn restartable(&self) -> bool {
        clearance(&self.scan, &self.rig.footprint) >= self.config.restart_clearance
            && self.state.v.abs() <= self.config.restart_speed
            && self.quiet >= self.config.restart_quiet_steps
    }

    /// Places the vehicle at rest on the spawn pose. Last resort after a reset
    /// timeout.
    pub fn respawn(&mut self) {
        self.place(VehicleState::at_rest(self.track.spawn()));
    }

    /// Teleports the vehicle and pauses the episode. A contact-free placement
    /// counts as settled.
    pub fn place(&mut self, state: VehicleState) {
        self.state = state;
        self.sense(false);
        self.quiet = if self.collided {
            0
        } else {
            self.config.restart_quiet_steps
        };
        self.phase = Phase::Paused;
    }

    /// Starts a new episode from the current state: closes the running record,
    /// re-initializes the planner prior and fills every history slot with the
    /// current measurement.
    pub fn begin_episode(&mut self) -> Observation {
        if !self.record.steps.is_empty() {
            self.finished = Some(std::mem::take(&mut self.record));
        }
        self.phase = Phase::Running;
        self.steps = 0;
        self.drive_prior = init_plan(&self.drive_mppi);
        self.pending_base = self.plan_next(Planner::Drive);
        let snap = self.snapshot(self.state.v, self.pending_base);
        self.history = std::iter::repeat_n(snap.clone(), self.config.history + 1).collect();
        self.record = EpisodeRecord::new(self.next_episode, snap);
        self.next_episode += 1;
        self.observation()
    }

    pub fn step(&mut self, forward: ControlCommand) -> Result<StepOutcome> {
        if self.phase != Phase::Running {
            return Err(Error::Usage(
                "episode is over; call run_reset or begin_episode first".into(),
            ));
        }
        if !forward.is_finite() {
            return Err(Error::NonFinite(format!("forward action {forward:?}")));
        }
        let base = self.pending_base;
        let before = self.collided;
        let applied = compose_action(forward, base, before, self.config.w_b, &self.params);
        let v0 = self.state.v;
        let contact = self.advance(applied)?;
        self.sense(contact);
        self.steps += 1;

        let reward = compute_reward(self.state.v, self.collided, &self.reward);
        let terminated = self.collided;
        let truncated = !terminated && self.steps >= self.config.max_steps;
        if terminated || truncated {
            self.phase = Phase::Paused;
        }
        self.pending_base = self.plan_next(Planner::Drive);
        let snap = self.snapshot(v0, self.pending_base);
        self.history.pop_front();
        self.history.push_back(snap.clone());
        self.record.steps.push(StepRecord {
            episode: self.record.episode,
            step: self.record.steps.len(),
            mode: Mode::Forward,
            state: self.state,
            action: Some(forward),
            base_action: base,
            applied_action: applied,
            reward,
            collided: self.collided,
            collided_before: before,
            snapshot: snap,
            initial_snapshot: None,
        });
        Ok(StepOutcome {
            observation: self.observation(),
            reward,
            terminated,
            truncated,
            mode: Mode::Forward,
            info: StepInfo {
                base_action: base,
                applied_action: applied,
                collided: self.collided,
            },
        })
    }

    /// Drives with the base planner under the recovery objective until the
    /// vehicle is restartable, then begins the next episode. Reset steps are
    /// appended to the current record with zero reward.
    pub fn run_reset(&mut self) -> Result<Observation> {
        self.phase = Phase::Paused;
        self.reset_prior = init_plan(&self.reset_mppi);
        let mut taken = 0;
        while !self.restartable() {
            if taken >= self.config.reset_timeout_steps {
                return Err(Error::ResetTimeout {
                    steps: taken,
                    record: Box::new(self.record.clone()),
                });
            }
            self.reset_step()?;
            taken += 1;
        }
        Ok(self.begin_episode())
    }

    fn reset_step(&mut self) -> Result<()> {
        let base = self.plan_next(Planner::Reset);
        let before = self.collided;
        let v0 = self.state.v;
        let contact = self.advance(base)?;
        self.sense(contact);
        let snap = self.snapshot(v0, base);
        self.record.steps.push(StepRecord {
            episode: self.record.episode,
            step: self.record.steps.len(),
            mode: Mode::Resetting,
            state: self.state,
            action: None,
            base_action: base,
            applied_action: base,
            reward: 0.0,
            collided: self.collided,
            collided_before: before,
            snapshot: snap,
            initial_snapshot: None,
        });
        Ok(())
    }

    /// One planner call from the current state; returns the executed (sampled)
    /// first action and warm-starts the prior for the next control period.
    fn plan_next(&mut self, which: Planner) -> ControlCommand {
        let (config, objective, prior) = match which {
            Planner::Drive => (
                self.drive_mppi,
                Objective::Drive(self.reward),
                &self.drive_prior,
            ),
            Planner::Reset => (
                self.reset_mppi,
                Objective::Recover(self.config.recovery),
                &self.reset_prior,
            ),
        };
        let seed = derive_seed(self.plan_seed, self.plan_counter);
        self.plan_counter += 1;
        let ctx = PlanContext {
            track: &self.track,
            rig: &self.rig,
            params: &self.params,
        };
        let out = plan(&self.state, ctx, objective, prior, &config, seed);
        let action = sample_action(&out, &self.params, &mut self.exec_rng);
        let shifts = ((self.config.control_dt / config.dt).round() as usize).max(1);
        let mut next = out;
        for _ in 0..shifts {
            next = shift_prior(&next, &config);
        }
        match which {
            Planner::Drive => self.drive_prior = next,
            Planner::Reset => self.reset_prior = next,
        }
        action
    }

    /// Integrates one control period. A substep that would push the body into
    /// a wall is discarded and the vehicle stops there; returns whether that
    /// happened.
    fn advance(&mut self, cmd: ControlCommand) -> Result<bool> {
        let n = ((self.config.control_dt / self.config.substep_dt).round() as usize).max(1);
        let h = self.config.control_dt / n as f64;
        let mut contact = false;
        for _ in 0..n {
            let next = dynamic_step(&self.state, cmd, &self.params, h)?;
            if self.overlaps_wall(&next) && !self.overlaps_wall(&self.state) {
                contact = true;
                self.state = VehicleState {
                    v: 0.0,
                    v_lat: 0.0,
                    yaw_rate: 0.0,
                    delta: next.delta,
                    ..self.state
                };
            } else {
                self.state = next;
            }
        }
        Ok(contact)
    }

    fn overlaps_wall(&self, state: &VehicleState) -> bool {
        let corners = self
            .rig
            .footprint
            .corners(self.rig.lidar.sensor_pose(state));
        self.track.polygon_hits_boundary(&corners)
    }

    /// Scans from the current state and updates the contact bookkeeping.
    fn sense(&mut self, bumped: bool) {
        self.scan = raycast(
            self.rig.lidar.sensor_pose(&self.state),
            &self.track,
            &self.rig.lidar,
        );
        add_range_noise(&mut self.scan, &self.rig.lidar, &mut self.noise_rng);
        self.collided = bumped || collision_indicator(&self.scan, &self.rig.footprint);
        self.quiet = if self.collided { 0 } else { self.quiet + 1 };
    }

    fn snapshot(&self, v_before: f64, base: ControlCommand) -> SensorSnapshot {
        SensorSnapshot {
            v: self.state.v,
            yaw_rate: self.state.yaw_rate,
            accel: (self.state.v - v_before) / self.config.control_dt,
            delta: self.state.delta,
            ranges: self.scan.ranges.clone(),
            base_action: base,
        }
    }
}
