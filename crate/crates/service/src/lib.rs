//! WebSocket service exposing one debug session to remote clients.
//!
//! Clients connect to `/ws` and exchange JSON text frames (see `PROTOCOL.md`).
//! The first connected client controls the session; later ones receive the
//! event stream and may issue read-only requests. Everything else under `/`
//! serves the UI bundle, or a short placeholder page when none is configured.

mod worker;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse};
use axum::routing::get;
use axum::Router;
use qbd::session::SessionConfig;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{mpsc as tmpsc, oneshot};
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

use worker::{Command, Worker};

pub const DEFAULT_BIND: &str = "127.0.0.1:7788";

const PLACEHOLDER: &str = "<!doctype html>\n<title>qbd</title>\n<p>qbd debug service. \
Connect a WebSocket client to <code>/ws</code>.</p>\n";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("cannot start the VM thread: {0}")]
    Thread(std::io::Error),
}

/// A program to attach, with the name reported to clients.
#[derive(Clone, Debug)]
pub struct ProgramSource {
    pub name: String,
    pub source: String,
}

#[derive(Clone, Debug, Default)]
pub struct ServiceConfig {
    pub session: SessionConfig,
    /// Attached at startup and re-attached by an `attach` without parameters.
    pub program: Option<ProgramSource>,
    /// Directory holding the UI bundle.
    pub assets: Option<PathBuf>,
}

#[derive(Clone)]
struct AppState {
    commands: mpsc::Sender<Command>,
    next_client: Arc<AtomicU64>,
}

/// A running server. Dropping it leaves the server running until the
/// runtime shuts down; call [`Server::shutdown`] to stop it.
pub struct Server {
    addr: SocketAddr,
    stop: oneshot::Sender<()>,
    task: JoinHandle<std::io::Result<()>>,
}

impl Server {
    /// Bind `addr` and start serving on the current tokio runtime.
    pub async fn bind(addr: &str, config: ServiceConfig) -> Result<Server, ServiceError> {
        let listener = TcpListener::bind(addr)
            .await
            .map_err(|source| ServiceError::Bind {
                addr: addr.to_string(),
                source,
            })?;
        let local = listener.local_addr().map_err(|source| ServiceError::Bind {
            addr: addr.to_string(),
            source,
        })?;

        let (tx, rx) = mpsc::channel();
        let worker = Worker::new(config.session.clone(), config.program.clone());
        thread::Builder::new()
            .name("qbd-vm".into())
            .spawn(move || worker.run(rx))
            .map_err(ServiceError::Thread)?;

        let state = AppState {
            commands: tx,
            next_client: Arc::new(AtomicU64::new(1)),
        };
        let app = router(state, config.assets);
        let (stop, stopped) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = stopped.await;
                })
                .await
        });
        Ok(Server {
            addr: local,
            stop,
            task,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Serve until the process is stopped.
    pub async fn wait(self) -> std::io::Result<()> {
        let _keep = self.stop;
        self.task
            .await
            .unwrap_or_else(|e| Err(std::io::Error::other(e)))
    }

    pub async fn shutdown(self) -> std::io::Result<()> {
        let _ = self.stop.send(());
        self.task
            .await
            .unwrap_or_else(|e| Err(std::io::Error::other(e)))
    }
}

fn router(state: AppState, assets: Option<PathBuf>) -> Router {
    let r = Router::new().route("/ws", get(upgrade)).with_state(state);
    match assets {
        Some(dir) => r.fallback_service(ServeDir::new(dir)),
        None => r.route("/", get(|| async { Html(PLACEHOLDER) })),
    }
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, state))
}

async fn connection(mut socket: WebSocket, state: AppState) {
    let client = state.next_client.fetch_add(1, Ordering::Relaxed);
    let (tx, mut outbound) = tmpsc::unbounded_channel();
    if state
        .commands
        .send(Command::Connect { client, tx })
        .is_err()
    {
        return;
    }
    loop {
        tokio::select! {
            incoming = socket.recv() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t.to_string(),
                    Some(Ok(Message::Binary(b))) => String::from_utf8_lossy(&b).into_owned(),
                    Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                    Some(Ok(_)) => continue,
                };
                if state.commands.send(Command::Request { client, text }).is_err() {
                    break;
                }
            }
            out = outbound.recv() => {
                let Some(text) = out else { break };
                if socket.send(Message::Text(text.into())).await.is_err() {
                    break;
                }
            }
        }
    }
    let _ = state.commands.send(Command::Disconnect { client });
}
