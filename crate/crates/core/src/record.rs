//! Per-step episode log. Persisted as JSON lines, one step per line; the first
//! line of an episode additionally carries the sensor snapshot the observation
//! history was bootstrapped from, which makes the log sufficient to regenerate
//! every observation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlCommand, VehicleState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    Forward,
    Resetting,
}

/// Physical measurements entering one observation history slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSnapshot {
    pub v: f64,
    pub yaw_rate: f64,
    /// Longitudinal acceleration over the last control period, Δv/Δt.
    pub accel: f64,
    pub delta: f64,
    pub ranges: Vec<f64>,
    /// Base-policy action computed for this state (post-clamp).
    pub base_action: ControlCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: usize,
    pub step: usize,
    pub mode: Mode,
    /// State at the end of the step.
    pub state: VehicleState,
    /// Forward-policy action (physical units); absent while resetting.
    pub action: Option<ControlCommand>,
    pub base_action: ControlCommand,
    pub applied_action: ControlCommand,
    pub reward: f64,
    /// Collision indicator of the scan taken at the end of the step.
    pub collided: bool,
    /// Collision indicator in force when the action was composed.
    pub collided_before: bool,
    /// Snapshot pushed into the history after this step.
    pub snapshot: SensorSnapshot,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_snapshot: Option<SensorSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub initial_snapshot: Option<SensorSnapshot>,
    pub steps: Vec<StepRecord>,
}

impl EpisodeRecord {
    pub fn new(episode: usize, initial: SensorSnapshot) -> Self {
        Self {
            episode,
            initial_snapshot: Some(initial),
            steps: Vec::new(),
        }
    }

    /// Undiscounted sum of forward-mode rewards, in step order.
    pub fn episode_return(&self) -> f64 {
        self.forward_steps().fold(0.0, |acc, s| acc + s.reward)
    }

    pub fn forward_steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.steps.iter().filter(|s| s.mode == Mode::Forward)
    }

    pub fn reset_steps(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.mode == Mode::Resetting)
            .count()
    }

    pub fn collided(&self) -> bool {
        self.forward_steps().any(|s| s.collided)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for (i, step) in self.steps.iter().enumerate() {
            if i == 0 && step.initial_snapshot.is_none() && self.initial_snapshot.is_some() {
                let mut first = step.clone();
                first.initial_snapshot.clone_from(&self.initial_snapshot);
                serde_json::to_writer(&mut out, &first)?;
            } else {
                serde_json::to_writer(&mut out, step)?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut steps = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let step: StepRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("record line {}: {e}", lineno + 1)))?;
            steps.push(step);
        }
        let episode = steps.first().map_or(0, |s| s.episode);
        let initial_snapshot = steps.first_mut().and_then(|s| s.initial_snapshot.take());
        Ok(Self {
            episode,
            initial_snapshot,
            steps,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }
}
