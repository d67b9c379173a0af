//! Agent wire protocol: one JSON object per line, tagged by `type`.
//!
//! ```text
//! client                          server
//! {"type":"hello","version":1} -> {"type":"hello","version":1,"obs_dim":96,"act_dim":2}
//! {"type":"reset_req"}         -> {"type":"obs","obs":[...]}
//! {"type":"act","action":[a,b]}-> {"type":"step","obs":[...],"reward":r,"terminated":t,
//!                                  "truncated":u,"mode":"FORWARD","info":{...}}
//! {"type":"close"}
//! ```
//!
//! Actions are normalized to `[−1, 1]²`. Failures are answered with
//! `{"type":"error","code":...,"message":...}` and the connection stays open.
//! Floats are written in shortest round-trip decimal form.

use serde::{Deserialize, Serialize};

use crate::agent::denormalize;
use crate::dynamics::ControlCommand;
use crate::env::{replay_observations, Normalizer, ResetFreeEnv};
use crate::error::{Error, Result};
use crate::record::{EpisodeRecord, Mode};

pub const PROTOCOL_VERSION: u32 = 1;
pub const ACT_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Hello { version: u32 },
    ResetReq,
    Act { action: Vec<f64> },
    Close,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    UnsupportedVersion,
    ProtocolOrder,
    EnvError,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Malformed => "malformed",
            ErrorCode::UnsupportedVersion => "unsupported_version",
            ErrorCode::ProtocolOrder => "protocol_order",
            ErrorCode::EnvError => "env_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireInfo {
    pub base_action: [f64; 2],
    pub applied_action: [f64; 2],
    pub collided: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        version: u32,
        obs_dim: usize,
        act_dim: usize,
    },
    Obs {
        obs: Vec<f64>,
    },
    Step {
        obs: Vec<f64>,
        reward: f64,
        terminated: bool,
        truncated: bool,
        mode: Mode,
        info: WireInfo,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl ServerMessage {
    fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ServerMessage::Error {
            code,
            message: message.into(),
        }
    }
}

/// Serializes a message as one line, newline included.
pub fn encode<T: Serialize>(msg: &T) -> Result<String> {
    let mut s = serde_json::to_string(msg)?;
    s.push('\n');
    Ok(s)
}

pub fn decode_client(line: &str) -> Result<ClientMessage> {
    serde_json::from_str(line.trim()).map_err(|e| Error::Parse(e.to_string()))
}

pub fn decode_server(line: &str) -> Result<ServerMessage> {
    serde_json::from_str(line.trim()).map_err(|e| Error::Parse(e.to_string()))
}

fn pair(c: ControlCommand) -> [f64; 2] {
    [c.speed, c.steering]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    AwaitHello,
    Ready,
    InEpisode,
    EpisodeOver,
}

/// Canned responses regenerated from a recorded episode.
#[derive(Debug, Clone)]
pub struct ReplayScript {
    obs: Vec<Vec<f64>>,
    steps: Vec<ServerMessage>,
    cursor: usize,
}

impl ReplayScript {
    pub fn new(record: &EpisodeRecord, normalizer: &Normalizer, history: usize) -> Result<Self> {
        let obs: Vec<Vec<f64>> = replay_observations(record, normalizer, history)?
            .into_iter()
            .map(|o| o.values)
            .collect();
        let forward: Vec<_> = record.forward_steps().collect();
        let steps = forward
            .iter()
            .enumerate()
            .map(|(i, s)| ServerMessage::Step {
                obs: obs[i + 1].clone(),
                reward: s.reward,
                terminated: s.collided,
                truncated: !s.collided && i + 1 == forward.len() && !forward.is_empty(),
                mode: Mode::Forward,
                info: WireInfo {
                    base_action: pair(s.base_action),
                    applied_action: pair(s.applied_action),
                    collided: s.collided,
                },
            })
            .collect();
        Ok(Self {
            obs,
            steps,
            cursor: 0,
        })
    }
}

enum Backend {
    Live(Box<ResetFreeEnv>),
    Replay(ReplayScript),
}

/// Server side of one protocol conversation, independent of the transport.
/// Survives disconnects: the environment keeps its state for the next client.
pub struct Session {
    backend: Backend,
    stage: Stage,
    obs_dim: usize,
    finished: Vec<EpisodeRecord>,
    episode_returns: Vec<f64>,
    reset_timeouts: usize,
}

/// Outcome of one request line.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub message: Option<ServerMessage>,
    pub close: bool,
}

impl Session {
    pub fn new(env: ResetFreeEnv) -> Self {
        let obs_dim = env.obs_dim();
        Self {
            backend: Backend::Live(Box::new(env)),
            stage: Stage::AwaitHello,
            obs_dim,
            finished: Vec::new(),
            episode_returns: Vec::new(),
            reset_timeouts: 0,
        }
    }

    pub fn replay(script: ReplayScript, obs_dim: usize) -> Self {
        Self {
            backend: Backend::Replay(script),
            stage: Stage::AwaitHello,
            obs_dim,
            finished: Vec::new(),
            episode_returns: Vec::new(),
            reset_timeouts: 0,
        }
    }

    pub fn env(&self) -> Option<&ResetFreeEnv> {
        match &self.backend {
            Backend::Live(env) => Some(env),
            Backend::Replay(_) => None,
        }
    }

    /// Records of completed episodes, drained.
    pub fn take_finished(&mut self) -> Vec<EpisodeRecord> {
        std::mem::take(&mut self.finished)
    }

    /// Server-side returns of every completed episode so far.
    pub fn episode_returns(&self) -> &[f64] {
        &self.episode_returns
    }

    pub fn reset_timeouts(&self) -> usize {
        self.reset_timeouts
    }

    pub fn handle_line(&mut self, line: &str) -> Reply {
        let msg = match decode_client(line) {
            Ok(m) => m,
            Err(e) => return reply(ServerMessage::error(ErrorCode::Malformed, e.to_string())),
        };
        self.handle(msg)
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Reply {
        match msg {
            ClientMessage::Close => Reply {
                message: None,
                close: true,
            },
            ClientMessage::Hello { version } => {
                if version != PROTOCOL_VERSION {
                    return reply(ServerMessage::error(
                        ErrorCode::UnsupportedVersion,
                        format!(
                            "server speaks version {PROTOCOL_VERSION}, client asked for {version}"
                        ),
                    ));
                }
                if self.stage == Stage::AwaitHello {
                    self.stage = Stage::Ready;
                }
                reply(ServerMessage::Hello {
                    version: PROTOCOL_VERSION,
                    obs_dim: self.obs_dim,
                    act_dim: ACT_DIM,
                })
            }
            ClientMessage::ResetReq => {
                if self.stage == Stage::AwaitHello {
                    return reply(ServerMessage::error(
                        ErrorCode::ProtocolOrder,
                        "hello required before reset_req",
                    ));
                }
                match self.reset() {
                    Ok(obs) => {
                        self.stage = Stage::InEpisode;
                        reply(ServerMessage::Obs { obs })
                    }
                    Err(e) => reply(ServerMessage::error(ErrorCode::EnvError, e.to_string())),
                }
            }
            ClientMessage::Act { action } => {
                match self.stage {
                    Stage::InEpisode => {}
                    Stage::EpisodeOver => {
                        return reply(ServerMessage::error(
                            ErrorCode::ProtocolOrder,
                            "episode has ended; send reset_req",
                        ))
                    }
                    _ => {
                        return reply(ServerMessage::error(
                            ErrorCode::ProtocolOrder,
                            "act before reset_req",
                        ))
                    }
                }
                if action.len() != ACT_DIM || action.iter().any(|a| !a.is_finite()) {
                    return reply(ServerMessage::error(
                        ErrorCode::Malformed,
                        format!("action must be {ACT_DIM} finite numbers"),
                    ));
                }
                match self.step(ControlCommand::new(action[0], action[1])) {
                    Ok(msg) => {
                        if let ServerMessage::Step {
                            terminated,
                            truncated,
                            ..
                        } = &msg
                        {
                            if *terminated || *truncated {
                                self.stage = Stage::EpisodeOver;
                            }
                        }
                        reply(msg)
                    }
                    Err(e) => reply(ServerMessage::error(ErrorCode::EnvError, e.to_string())),
                }
            }
        }
    }

    /// Client went away: finish any pending recovery so the vehicle is
    /// restartable for the next client, then wait for a new hello.
    pub fn disconnect(&mut self) {
        if let Backend::Live(env) = &self.backend {
            if self.stage != Stage::AwaitHello && !env.is_running() {
                if let Err(e) = self.reset() {
                    log::error!("reset after disconnect failed: {e}");
                }
            }
        }
        self.stage = Stage::AwaitHello;
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        match &mut self.backend {
            Backend::Live(env) => {
                let obs = match env.run_reset() {
                    Ok(obs) => obs,
                    Err(Error::ResetTimeout { steps, .. }) => {
                        log::warn!("reset timed out after {steps} steps; respawning");
                        self.reset_timeouts += 1;
                        env.respawn();
                        env.begin_episode()
                    }
                    Err(e) => return Err(e),
                };
                if let Some(rec) = env.take_finished_record() {
                    self.episode_returns.push(rec.episode_return());
                    self.finished.push(rec);
                }
                Ok(obs.values)
            }
            Backend::Replay(script) => {
                script.cursor = 0;
                Ok(script.obs[0].clone())
            }
        }
    }

    fn step(&mut self, action: ControlCommand) -> Result<ServerMessage> {
        match &mut self.backend {
            Backend::Live(env) => {
                let out = env.step(denormalize(action, env.params()))?;
                Ok(ServerMessage::Step {
                    obs: out.observation.values,
                    reward: out.reward,
                    terminated: out.terminated,
                    truncated: out.truncated,
                    mode: out.mode,
                    info: WireInfo {
                        base_action: pair(out.info.base_action),
                        applied_action: pair(out.info.applied_action),
                        collided: out.info.collided,
                    },
                })
            }
            Backend::Replay(script) => {
                let msg = script
                    .steps
                    .get(script.cursor)
                    .cloned()
                    .ok_or_else(|| Error::Usage("replay script exhausted".into()))?;
                script.cursor += 1;
                Ok(msg)
            }
        }
    }
}

fn reply(message: ServerMessage) -> Reply {
    Reply {
        message: Some(message),
        close: false,
    }
}
