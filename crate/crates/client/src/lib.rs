//! Blocking client for the agent protocol, shaped like an episodic
//! environment: `reset` returns an observation, `step` returns the usual
//! five values.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{TcpStream, ToSocketAddrs};

use resetfree_core::protocol::{
    decode_server, encode, ClientMessage, ErrorCode, ServerMessage, WireInfo, PROTOCOL_VERSION,
};
use resetfree_core::record::Mode;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// The server answered with an error message.
    #[error("server error ({}): {message}", code.as_str())]
    Server { code: ErrorCode, message: String },
    #[error("unexpected reply: {0}")]
    Unexpected(String),
    #[error("server closed the connection")]
    Closed,
    #[error(transparent)]
    Core(#[from] resetfree_core::Error),
}

impl ClientError {
    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            ClientError::Server { code, .. } => Some(*code),
            _ => None,
        }
    }
}

pub type Result<T, E = ClientError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub mode: Mode,
    pub info: WireInfo,
}

impl Step {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

pub struct RemoteEnv {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    obs_dim: usize,
    act_dim: usize,
}

impl RemoteEnv {
    /// Connects and negotiates the protocol version.
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        Self::connect_with_version(addr, PROTOCOL_VERSION)
    }

    pub fn connect_with_version(addr: impl ToSocketAddrs, version: u32) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let mut env = Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            obs_dim: 0,
            act_dim: 0,
        };
        match env.request(&ClientMessage::Hello { version })? {
            ServerMessage::Hello {
                obs_dim, act_dim, ..
            } => {
                env.obs_dim = obs_dim;
                env.act_dim = act_dim;
                Ok(env)
            }
            other => Err(ClientError::Unexpected(format!("{other:?}"))),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    /// Starts an episode. Blocks through any recovery the server runs first.
    pub fn reset(&mut self) -> Result<Vec<f64>> {
        match self.request(&ClientMessage::ResetReq)? {
            ServerMessage::Obs { obs } => Ok(obs),
            other => Err(ClientError::Unexpected(format!("{other:?}"))),
        }
    }

    /// Sends a normalized action in `[−1, 1]²`.
    pub fn step(&mut self, action: &[f64]) -> Result<Step> {
        let msg = ClientMessage::Act {
            action: action.to_vec(),
        };
        match self.request(&msg)? {
            ServerMessage::Step {
                obs,
                reward,
                terminated,
                truncated,
                mode,
                info,
            } => Ok(Step {
                obs,
                reward,
                terminated,
                truncated,
                mode,
                info,
            }),
            other => Err(ClientError::Unexpected(format!("{other:?}"))),
        }
    }

    pub fn close(mut self) -> Result<()> {
        self.send(&ClientMessage::Close)
    }

    /// Sends a raw line and returns the parsed reply, error replies included.
    pub fn send_raw(&mut self, line: &str) -> Result<ServerMessage> {
        self.writer.write_all(line.trim_end().as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        self.receive()
    }

    fn send(&mut self, msg: &ClientMessage) -> Result<()> {
        self.writer.write_all(encode(msg)?.as_bytes())?;
        self.writer.flush()?;
        Ok(())
    }

    fn receive(&mut self) -> Result<ServerMessage> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(ClientError::Closed);
        }
        Ok(decode_server(&line)?)
    }

    fn request(&mut self, msg: &ClientMessage) -> Result<ServerMessage> {
        self.send(msg)?;
        match self.receive()? {
            ServerMessage::Error { code, message } => Err(ClientError::Server { code, message }),
            other => Ok(other),
        }
    }
}

/// Runs `episodes` episodes with a constant action and returns the
/// client-side sum of rewards of each.
pub fn constant_action_run(
    env: &mut RemoteEnv,
    action: [f64; 2],
    episodes: usize,
) -> Result<Vec<f64>> {
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        env.reset()?;
        let mut total = 0.0;
        loop {
            let step = env.step(&action)?;
            total += step.reward;
            if step.done() {
                break;
            }
        }
        returns.push(total);
    }
    Ok(returns)
}
