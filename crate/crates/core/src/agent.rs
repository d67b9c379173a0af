//! Forward policies.
//!
//! Agents decide in the normalized action space `[−1, 1]²`; [`denormalize`]
//! maps a decision onto physical speed and steering commands.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlCommand, VehicleParams};
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentDecision {
    /// Normalized command, each channel in [−1, 1].
    pub action: ControlCommand,
}

impl AgentDecision {
    pub const ZERO: Self = Self {
        action: ControlCommand::ZERO,
    };
}

/// Scales a normalized action by the vehicle's command bounds.
pub fn denormalize(a: ControlCommand, params: &VehicleParams) -> ControlCommand {
    ControlCommand::new(
        a.speed.clamp(-1.0, 1.0) * params.v_max,
        a.steering.clamp(-1.0, 1.0) * params.delta_max,
    )
}

/// Fully connected tanh network. Parameters are stored layer by layer, each as
/// a row-major `out × in` weight matrix followed by `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl PolicyNet {
    pub fn zeros(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let n = param_count(&sizes);
        Ok(Self {
            sizes,
            params: vec![0.0; n],
        })
    }

    /// Xavier-uniform hidden layers; the output layer starts at zero so the
    /// initial policy outputs exactly (0, 0).
    pub fn init<R: Rng>(sizes: Vec<usize>, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let layers = net.sizes.len() - 1;
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (net.sizes[l], net.sizes[l + 1]);
            let weights = fan_in * fan_out;
            if l + 1 < layers {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for w in &mut net.params[offset..offset + weights] {
                    *w = rng.random_range(-limit..limit);
                }
            }
            offset += weights + fan_out;
        }
        Ok(net)
    }

    pub fn from_params(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        let expected = param_count(&sizes);
        if params.len() != expected {
            return Err(Error::Config(format!(
                "parameter vector has {} entries, layer sizes {sizes:?} need {expected}",
                params.len()
            )));
        }
        Ok(Self { sizes, params })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap_or(&0)
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_with(&self.params, input)
    }

    /// Forward pass with an external parameter vector of the same layout.
    pub fn forward_with(&self, params: &[f64], input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.input_dim());
        let mut x = input.to_vec();
        let mut offset = 0;
        for w in self.sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[offset..offset + n_in * n_out];
            let bias = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            x = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    let z: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + bias[o];
                    z.tanh()
                })
                .collect();
            offset += n_in * n_out + n_out;
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsConfig {
    /// Perturbations per update; even, evaluated as antithetic pairs.
    pub population: usize,
    pub noise_sigma: f64,
    pub learning_rate: f64,
    pub episodes_per_eval: usize,
    /// Agent seed; derived from the run seed when absent.
    pub seed: Option<u64>,
    pub hidden: Vec<usize>,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self {
            population: 10,
            noise_sigma: 0.05,
            learning_rate: 0.003,
            episodes_per_eval: 1,
            seed: None,
            hidden: vec![64, 64],
        }
    }
}

impl EsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 || !self.population.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "es.population must be even and ≥ 2, got {}",
                self.population
            )));
        }
        if !(self.noise_sigma > 0.0 && self.learning_rate > 0.0) || self.episodes_per_eval == 0 {
            return Err(Error::Config(
                "es.noise_sigma, es.learning_rate and es.episodes_per_eval must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One evaluated perturbation: `θ + sign·σ·ε(seed)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsEvaluation {
    pub seed: u64,
    pub sign: f64,
    pub mean_return: f64,
}

/// Standard normal perturbation direction for `seed`.
pub fn perturbation(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Centered ranks in [−0.5, 0.5]; tied values share their average rank.
pub fn centered_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
        .into_iter()
        .map(|r| r / (n - 1) as f64 - 0.5)
        .collect()
}

/// Rank-normalized evolution-strategies step
/// `θ + lr/(N·σ) · Σ u_i·sign_i·ε_i`.
pub fn es_update(theta: &[f64], evaluations: &[EsEvaluation], config: &EsConfig) -> Vec<f64> {
    let returns: Vec<f64> = evaluations.iter().map(|e| e.mean_return).collect();
    let utilities = centered_ranks(&returns);
    let scale = config.learning_rate / (evaluations.len() as f64 * config.noise_sigma);
    let mut grad = vec![0.0; theta.len()];
    for (e, u) in evaluations.iter().zip(&utilities) {
        if *u == 0.0 {
            continue;
        }
        for (g, eps) in grad.iter_mut().zip(perturbation(e.seed, theta.len())) {
            *g += u * e.sign * eps;
        }
    }
    theta
        .iter()
        .zip(&grad)
        .map(|(t, g)| t + scale * g)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsCheckpoint {
    pub net: PolicyNet,
    pub generation: u64,
}

impl EsCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cp: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        PolicyNet::from_params(cp.net.sizes.clone(), cp.net.params.clone())?;
        Ok(cp)
    }
}

/// ES learner driven one episode at a time: each episode evaluates one member
/// of the current antithetic population; the update runs once all members
/// have been scored.
#[derive(Debug, Clone)]
pub struct EsAgent {
    pub net: PolicyNet,
    pub config: EsConfig,
    pub generation: u64,
    pub frozen: bool,
    seed: u64,
    member: usize,
    episodes_in_member: usize,
    member_return: f64,
    evaluations: Vec<EsEvaluation>,
    active: Vec<f64>,
    input: Vec<f64>,
}

impl EsAgent {
    pub fn new(obs_dim: usize, config: EsConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut sizes = vec![obs_dim];
        sizes.extend(&config.hidden);
        sizes.push(2);
        let net = PolicyNet::init(sizes, &mut stream_rng(seed, 0))?;
        Ok(Self::from_net(net, config, seed))
    }

    pub fn from_net(net: PolicyNet, config: EsConfig, seed: u64) -> Self {
        Self {
            active: net.params.clone(),
            net,
            config,
            generation: 0,
            frozen: false,
            seed,
            member: 0,
            episodes_in_member: 0,
            member_return: 0.0,
            evaluations: Vec::new(),
            input: Vec::new(),
        }
    }

    pub fn checkpoint(&self) -> EsCheckpoint {
        EsCheckpoint {
            net: self.net.clone(),
            generation: self.generation,
        }
    }

    fn member_seed(&self) -> (u64, f64) {
        let pair = (self.member / 2) as u64;
        let sign = if self.member.is_multiple_of(2) {
            1.0
        } else {
            -1.0
        };
        let per_gen = (self.config.population / 2) as u64;
        (
            derive_seed(self.seed, 1 + self.generation * per_gen + pair),
            sign,
        )
    }

    fn start_episode(&mut self) {
        if self.frozen {
            self.active.clone_from(&self.net.params);
            return;
        }
        let (seed, sign) = self.member_seed();
        let eps = perturbation(seed, self.net.params.len());
        let s = sign * self.config.noise_sigma;
        self.active = self
            .net
            .params
            .iter()
            .zip(&eps)
            .map(|(t, e)| t + s * e)
            .collect();
    }

    fn finish_episode(&mut self, episode_return: f64) {
        if self.frozen {
            return;
        }
        self.member_return += episode_return;
        self.episodes_in_member += 1;
        if self.episodes_in_member < self.config.episodes_per_eval {
            return;
        }
        let (seed, sign) = self.member_seed();
        self.evaluations.push(EsEvaluation {
            seed,
            sign,
            mean_return: self.member_return / self.episodes_in_member as f64,
        });
        self.member_return = 0.0;
        self.episodes_in_member = 0;
        self.member += 1;
        if self.member == self.config.population {
            self.net.params = es_update(&self.net.params, &self.evaluations, &self.config);
            self.evaluations.clear();
            self.member = 0;
            self.generation += 1;
        }
    }

    fn decide(&mut self, obs: &Observation) -> AgentDecision {
        self.input.clear();
        self.input.extend(obs.values.iter().map(|x| 2.0 * x - 1.0));
        let out = self.net.forward_with(&self.active, &self.input);
        AgentDecision {
            action: ControlCommand::new(out[0], out[1]),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Agent {
    Zero,
    Random(Box<ChaCha8Rng>),
    /// Replays physical commands in order, then idles.
    Replay {
        actions: Vec<ControlCommand>,
        cursor: usize,
    },
    Es(Box<EsAgent>),
}

impl Agent {
    pub fn name(&self) -> &'static str {
        match self {
            Agent::Zero => "zero",
            Agent::Random(_) => "random",
            Agent::Replay { .. } => "replay",
            Agent::Es(_) => "es",
        }
    }

    pub fn decide(&mut self, obs: &Observation) -> AgentDecision {
        match self {
            Agent::Zero => AgentDecision::ZERO,
            Agent::Random(rng) => AgentDecision {
                action: ControlCommand::new(
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                ),
            },
            Agent::Replay { actions, cursor } => {
                let a = actions
                    .get(*cursor)
                    .copied()
                    .unwrap_or(ControlCommand::ZERO);
                AgentDecision { action: a }
            }
            Agent::Es(es) => es.decide(obs),
        }
    }

    /// Physical forward command for the environment.
    pub fn act(&mut self, obs: &Observation, params: &VehicleParams) -> ControlCommand {
        if let Agent::Replay { actions, cursor } = self {
            let a = actions
                .get(*cursor)
                .copied()
                .unwrap_or(ControlCommand::ZERO);
            *cursor += 1;
            return a;
        }
        denormalize(self.decide(obs).action, params)
    }

    pub fn begin_episode(&mut self) {
        if let Agent::Es(es) = self {
            es.start_episode();
        }
    }

    /// Paused-state update hook, called once per finished episode.
    pub fn end_episode(&mut self, episode_return: f64) {
        if let Agent::Es(es) = self {
            es.finish_episode(episode_return);
        }
    }
}
