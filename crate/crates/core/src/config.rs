//! Experiment configuration (TOML). Unknown keys anywhere are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::EsConfig;
use crate::dynamics::VehicleParams;
use crate::env::{EnvConfig, EnvSetup, RewardConfig};
use crate::error::{Error, Result};
use crate::mppi::MppiConfig;
use crate::rng::{streams, substream};
use crate::track::{Footprint, LidarConfig, TrackGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Zero,
    Random,
    Es,
    /// Driven by a remote learner over the wire protocol.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub agent: AgentKind,
    pub w_b: f64,
    pub episodes: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Write one JSONL record per episode next to the CSV.
    pub write_records: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            agent: AgentKind::Es,
            w_b: 1.0,
            episodes: 200,
            seed: 0,
            out: PathBuf::from("runs/default"),
            write_records: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackConfig {
    pub r_in: f64,
    pub r_out: f64,
    pub n_vertices: usize,
    /// Polyline file; overrides the annulus when set. Relative paths resolve
    /// against the config file's directory.
    pub file: Option<PathBuf>,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            r_in: 1.5,
            r_out: 2.5,
            n_vertices: 64,
            file: None,
        }
    }
}

impl TrackConfig {
    pub fn build(&self) -> Result<TrackGeometry> {
        match &self.file {
            Some(path) => TrackGeometry::parse(&std::fs::read_to_string(path)?),
            None => TrackGeometry::annulus(self.r_in, self.r_out, self.n_vertices),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MppiSection {
    /// Base policy (forward residual base and reset policy).
    pub base: MppiConfig,
    /// Non-learning comparison planner.
    pub baseline: MppiConfig,
}

impl Default for MppiSection {
    fn default() -> Self {
        Self {
            base: MppiConfig::default(),
            baseline: MppiConfig::baseline(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    pub vehicle: VehicleParams,
    pub track: TrackConfig,
    pub lidar: LidarConfig,
    pub footprint: Footprint,
    pub mppi: MppiSection,
    pub env: EnvConfig,
    pub reward: RewardConfig,
    pub es: EsConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(file) = &cfg.track.file {
            if file.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.track.file = Some(base.join(file));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.episodes == 0 {
            return Err(Error::Config("run.episodes must be ≥ 1".into()));
        }
        self.vehicle.validate()?;
        self.lidar.validate()?;
        self.footprint.validate()?;
        self.mppi.base.validate()?;
        self.mppi.baseline.validate()?;
        self.env_config().validate()?;
        self.reward.validate()?;
        self.es.validate()?;
        self.track.build()?;
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            w_b: self.run.w_b,
            ..self.env
        }
    }

    /// World for a run: base policy while driving, base policy for reset.
    pub fn env_setup(&self) -> Result<EnvSetup> {
        Ok(EnvSetup {
            params: self.vehicle,
            track: self.track.build()?,
            lidar: self.lidar,
            footprint: self.footprint,
            env: self.env_config(),
            reward: self.reward,
            drive_mppi: self.mppi.base,
            reset_mppi: self.mppi.base,
            seed: self.run.seed,
        })
    }

    pub fn agent_seed(&self) -> u64 {
        self.es
            .seed
            .unwrap_or_else(|| substream(self.run.seed, streams::AGENT_INIT))
    }

    /// SHA-256 over the vehicle, track, LiDAR and footprint definitions.
    pub fn world_digest(&self) -> Result<String> {
        let track = self.track.build()?;
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.vehicle)?);
        h.update(track.to_text().as_bytes());
        h.update(serde_json::to_vec(&self.lidar)?);
        h.update(serde_json::to_vec(&self.footprint)?);
        Ok(hex::encode(h.finalize()))
    }
}
