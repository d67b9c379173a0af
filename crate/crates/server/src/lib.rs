//! TCP transport for the agent protocol.
//!
//! One client at a time. Each request line is handed to a
//! [`Session`](resetfree_core::protocol::Session) on the blocking pool, since a
//! `reset_req` may run a full autonomous recovery. When a client disconnects
//! the session finishes any pending recovery and the server accepts the next
//! connection.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};

use resetfree_core::protocol::{encode, Reply, Session};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream, ToSocketAddrs};

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] resetfree_core::Error),
    #[error("session worker panicked")]
    Worker,
}

pub type Result<T, E = ServerError> = std::result::Result<T, E>;

/// Shared handle to the session behind a server, for inspection from outside
/// the connection loop.
#[derive(Clone)]
pub struct SessionHandle(Arc<Mutex<Session>>);

impl SessionHandle {
    pub fn lock(&self) -> MutexGuard<'_, Session> {
        // A panic inside a handler leaves the session usable for inspection.
        self.0.lock().unwrap_or_else(|e| e.into_inner())
    }

    async fn run<T: Send + 'static>(
        &self,
        f: impl FnOnce(&mut Session) -> T + Send + 'static,
    ) -> Result<T> {
        let inner = self.0.clone();
        tokio::task::spawn_blocking(move || {
            let mut s = inner.lock().unwrap_or_else(|e| e.into_inner());
            f(&mut s)
        })
        .await
        .map_err(|_| ServerError::Worker)
    }
}

pub struct Server {
    listener: TcpListener,
    session: SessionHandle,
}

impl Server {
    pub async fn bind(addr: impl ToSocketAddrs, session: Session) -> Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr).await?,
            session: SessionHandle(Arc::new(Mutex::new(session))),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn session(&self) -> SessionHandle {
        self.session.clone()
    }

    /// Serves clients one after another, forever.
    pub async fn serve(self) -> Result<()> {
        self.serve_until(std::future::pending()).await
    }

    /// Serves until `shutdown` resolves. A connection in progress is dropped
    /// and its session disconnected.
    pub async fn serve_until(self, shutdown: impl Future<Output = ()>) -> Result<()> {
        tokio::pin!(shutdown);
        loop {
            let (stream, peer) = tokio::select! {
                _ = &mut shutdown => return Ok(()),
                accepted = self.listener.accept() => accepted?,
            };
            log::info!("client connected from {peer}");
            let outcome = tokio::select! {
                _ = &mut shutdown => None,
                r = handle_client(stream, &self.session) => Some(r),
            };
            self.session.run(Session::disconnect).await?;
            match outcome {
                None => return Ok(()),
                Some(Ok(())) => log::info!("client {peer} disconnected"),
                Some(Err(e)) => log::warn!("client {peer} dropped: {e}"),
            }
        }
    }
}

async fn handle_client(stream: TcpStream, session: &SessionHandle) -> Result<()> {
    stream.set_nodelay(true)?;
    let (read, mut write) = stream.into_split();
    let mut lines = BufReader::new(read).lines();
    while let Some(line) = lines.next_line().await? {
        if line.trim().is_empty() {
            continue;
        }
        let Reply { message, close } = session.run(move |s| s.handle_line(&line)).await?;
        if let Some(msg) = message {
            write.write_all(encode(&msg)?.as_bytes()).await?;
            write.flush().await?;
        }
        if close {
            break;
        }
    }
    Ok(())
}

/// Binds `addr` and serves forever.
pub async fn serve(session: Session, addr: impl ToSocketAddrs) -> Result<()> {
    let server = Server::bind(addr, session).await?;
    log::info!("listening on {}", server.local_addr()?);
    server.serve().await
}
