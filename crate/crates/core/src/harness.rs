//! Experiment runner: the reset-free training loop, baseline and evaluation
//! runs, and the five-run experiment matrix.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agent::{Agent, EsAgent, EsCheckpoint};
use crate::config::{AgentKind, ExperimentConfig};
use crate::env::{EnvSetup, ResetFreeEnv};
use crate::error::{Error, Result};
use crate::record::EpisodeRecord;
use crate::rng::{named_rng, streams};

/// Episodes entering the aggregate metric.
pub const FINAL_WINDOW: usize = 20;

pub const CSV_HEADER: &str = "episode,return,steps,collided,reset_steps";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub steps: usize,
    pub collided: bool,
    pub reset_steps: usize,
}

impl EpisodeRow {
    pub fn from_record(record: &EpisodeRecord) -> Self {
        Self {
            episode: record.episode,
            episode_return: record.episode_return(),
            steps: record.forward_steps().count(),
            collided: record.collided(),
            reset_steps: record.reset_steps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub seed: u64,
    pub rows: Vec<EpisodeRow>,
    pub final_mean: f64,
    pub final_std: f64,
    pub wall_clock_s: f64,
    pub reset_timeouts: usize,
    pub world_digest: String,
}

/// Mean and population standard deviation of the last `window` values.
pub fn tail_stats(values: &[f64], window: usize) -> (f64, f64) {
    let tail = &values[values.len().saturating_sub(window)..];
    if tail.is_empty() {
        return (0.0, 0.0);
    }
    let n = tail.len() as f64;
    let mean = tail.iter().sum::<f64>() / n;
    let var = tail.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl RunSummary {
    pub fn returns(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.episode_return).collect()
    }

    pub fn mean_return(&self) -> f64 {
        tail_stats(&self.returns(), self.rows.len()).0
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.episode,
                r.episode_return,
                r.steps,
                u8::from(r.collided),
                r.reset_steps
            );
        }
        s
    }

    /// Writes `episodes.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("episodes.csv"), self.to_csv())?;
        fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(self)?,
        )?;
        Ok(())
    }
}

/// Parses a per-episode CSV written by [`RunSummary::to_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<EpisodeRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Parse("missing episode CSV header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::Parse(format!("bad CSV row {l:?}"));
            if f.len() != 5 {
                return Err(bad());
            }
            Ok(EpisodeRow {
                episode: f[0].parse().map_err(|_| bad())?,
                episode_return: f[1].parse().map_err(|_| bad())?,
                steps: f[2].parse().map_err(|_| bad())?,
                collided: f[3] == "1",
                reset_steps: f[4].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn record_path(dir: &Path, episode: usize) -> PathBuf {
    dir.join(format!("episode_{episode:05}.jsonl"))
}

pub type EpisodeHook<'a> = Box<dyn FnMut(&EpisodeRow, &EpisodeRecord) + 'a>;

/// Per-run side effects.
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Output directory; nothing is written when absent.
    pub out: Option<PathBuf>,
    pub write_records: bool,
    pub on_episode: Option<EpisodeHook<'a>>,
}

impl<'a> RunOptions<'a> {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            out: Some(cfg.run.out.clone()),
            write_records: cfg.run.write_records,
            on_episode: None,
        }
    }

    pub fn quiet() -> Self {
        Self::default()
    }
}

/// Reset-free loop: step until the episode ends, recover with the base
/// policy, let the agent update while paused, begin the next episode.
pub fn run_episodes(
    env: &mut ResetFreeEnv,
    agent: &mut Agent,
    episodes: usize,
    label: &str,
    seed: u64,
    world_digest: String,
    mut opts: RunOptions<'_>,
) -> Result<RunSummary> {
    let started = Instant::now();
    let records_dir = match (&opts.out, opts.write_records) {
        (Some(out), true) => {
            let dir = out.join("records");
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("track.txt"), env.track().to_text())?;
            Some(dir)
        }
        _ => None,
    };
    let mut rows = Vec::with_capacity(episodes);
    let mut reset_timeouts = 0;
    let mut obs = if env.is_running() && env.steps() == 0 {
        env.observation()
    } else {
        env.run_reset()?
    };
    for _ in 0..episodes {
        agent.begin_episode();
        loop {
            let action = agent.act(&obs, env.params());
            let out = env.step(action)?;
            obs = out.observation;
            if out.terminated || out.truncated {
                break;
            }
        }
        agent.end_episode(env.current_record().episode_return());
        obs = match env.run_reset() {
            Ok(o) => o,
            Err(Error::ResetTimeout { steps, record }) => {
                log::warn!(
                    "episode {}: reset timed out after {steps} steps; respawning",
                    record.episode
                );
                reset_timeouts += 1;
                env.respawn();
                env.begin_episode()
            }
            Err(e) => return Err(e),
        };
        let record = env
            .take_finished_record()
            .ok_or_else(|| Error::Usage("episode produced no record".into()))?;
        let row = EpisodeRow::from_record(&record);
        log::debug!(
            "{label} ep {:>4} return {:>9.3} steps {:>3} collided {} reset {}",
            row.episode,
            row.episode_return,
            row.steps,
            row.collided,
            row.reset_steps
        );
        if let Some(dir) = &records_dir {
            record.save(&record_path(dir, record.episode))?;
        }
        if let Some(cb) = opts.on_episode.as_mut() {
            cb(&row, &record);
        }
        rows.push(row);
    }
    let returns: Vec<f64> = rows.iter().map(|r| r.episode_return).collect();
    let (final_mean, final_std) = tail_stats(&returns, FINAL_WINDOW);
    let summary = RunSummary {
        label: label.to_string(),
        seed,
        rows,
        final_mean,
        final_std,
        wall_clock_s: started.elapsed().as_secs_f64(),
        reset_timeouts,
        world_digest,
    };
    if let Some(out) = &opts.out {
        summary.write(out)?;
    }
    Ok(summary)
}

pub fn build_agent(cfg: &ExperimentConfig, obs_dim: usize) -> Result<Agent> {
    Ok(match cfg.run.agent {
        AgentKind::Zero => Agent::Zero,
        AgentKind::Random => {
            Agent::Random(Box::new(named_rng(cfg.run.seed, streams::AGENT_ACTIONS)))
        }
        AgentKind::Es => Agent::Es(Box::new(EsAgent::new(
            obs_dim,
            cfg.es.clone(),
            cfg.agent_seed(),
        )?)),
        AgentKind::External => {
            return Err(Error::Usage(
                "agent = \"external\" runs through `serve`, not in-process".into(),
            ))
        }
    })
}

fn run_with(
    cfg: &ExperimentConfig,
    setup: EnvSetup,
    mut agent: Agent,
    label: &str,
    opts: RunOptions<'_>,
) -> Result<RunSummary> {
    let mut env = ResetFreeEnv::new(setup)?;
    let digest = cfg.world_digest()?;
    let summary = run_episodes(
        &mut env,
        &mut agent,
        cfg.run.episodes,
        label,
        cfg.run.seed,
        digest,
        opts,
    )?;
    Ok(summary)
}

/// Trains the configured agent; an ES agent's final parameters are saved as
/// `checkpoint.json` in the output directory.
pub fn run_training(cfg: &ExperimentConfig, opts: RunOptions<'_>) -> Result<RunSummary> {
    let setup = cfg.env_setup()?;
    let mut env = ResetFreeEnv::new(setup)?;
    let mut agent = build_agent(cfg, env.obs_dim())?;
    let out = opts.out.clone();
    let label = format!("{:?}-wb{}", cfg.run.agent, cfg.run.w_b).to_lowercase();
    let summary = run_episodes(
        &mut env,
        &mut agent,
        cfg.run.episodes,
        &label,
        cfg.run.seed,
        cfg.world_digest()?,
        opts,
    )?;
    if let (Some(out), Agent::Es(es)) = (out, &agent) {
        es.checkpoint().save(&out.join("checkpoint.json"))?;
    }
    Ok(summary)
}

/// Zero agent on the full base weight with the baseline planner.
pub fn run_baseline(cfg: &ExperimentConfig, opts: RunOptions<'_>) -> Result<RunSummary> {
    let mut setup = cfg.env_setup()?;
    setup.env.w_b = 1.0;
    setup.drive_mppi = cfg.mppi.baseline;
    run_with(cfg, setup, Agent::Zero, "baseline", opts)
}

/// Runs a frozen ES policy without updates.
pub fn evaluate_policy(
    cfg: &ExperimentConfig,
    checkpoint: &EsCheckpoint,
    episodes: usize,
    opts: RunOptions<'_>,
) -> Result<RunSummary> {
    let setup = cfg.env_setup()?;
    let mut es = EsAgent::from_net(checkpoint.net.clone(), cfg.es.clone(), cfg.agent_seed());
    es.frozen = true;
    es.generation = checkpoint.generation;
    let cfg = ExperimentConfig {
        run: crate::config::RunConfig {
            episodes,
            ..cfg.run.clone()
        },
        ..cfg.clone()
    };
    run_with(&cfg, setup, Agent::Es(Box::new(es)), "eval", opts)
}

/// The method × residual matrix plus the baseline, each in its own
/// subdirectory of `run.out`.
pub fn run_matrix(
    cfg: &ExperimentConfig,
    mut on_run: impl FnMut(&str, &RunSummary),
) -> Result<Vec<(String, RunSummary)>> {
    let mut results = Vec::new();
    for agent in [AgentKind::Zero, AgentKind::Es] {
        for w_b in [0.0, 1.0] {
            let name = format!("{}_wb{}", format!("{agent:?}").to_lowercase(), w_b as u8);
            let mut sub = cfg.clone();
            sub.run.agent = agent;
            sub.run.w_b = w_b;
            sub.run.out = cfg.run.out.join(&name);
            let summary = run_training(&sub, RunOptions::from_config(&sub))?;
            on_run(&name, &summary);
            results.push((name, summary));
        }
    }
    let mut sub = cfg.clone();
    sub.run.out = cfg.run.out.join("baseline");
    let summary = run_baseline(&sub, RunOptions::from_config(&sub))?;
    on_run("baseline", &summary);
    results.push(("baseline".into(), summary));
    Ok(results)
}
